import numpy as np
import pytest

from apac import decision
from apac.dataio import LabeledDataset
from apac.decision import (ClassScores, DecisionConfig, apac_distinctive_predict,
                           apac_predict, evaluate, non_apac_predict, predict,
                           softmax_sum_predict, _virtual_batch)
from apac.nn_core import Dense, Network, Relu, Softmax
from apac.sampler import DeformSpec, Gaussian, default_spec, identity_spec


class StubNet:
    """Returns a pre-set softmax row per forward slot, ignoring the input."""

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=np.float64)
        self.class_count = self.rows.shape[1]

    def forward(self, x):
        probs = self.rows[: x.shape[0]]
        return probs, np.log(probs), None


def tiny_net(seed=0, n_out=10, shape=(1, 28, 28)):
    return Network([Dense(16), Relu(), Dense(n_out), Softmax()], shape, seed=seed)


@pytest.fixture(scope="module")
def net():
    return tiny_net()


@pytest.fixture()
def x():
    gen = np.random.Generator(np.random.Philox(7))
    return gen.random((1, 28, 28), dtype=np.float32)


def stub_cfg(m, rule="apac_log_mean"):
    return DecisionConfig(rule=rule, m=m, deform=identity_spec("mnist"), seed=0)


class TestConfig:
    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            DecisionConfig(rule="vote", m=1, deform=identity_spec("mnist"))

    def test_m_zero_rejected(self):
        with pytest.raises(ValueError):
            DecisionConfig(m=0, deform=identity_spec("mnist"))

    def test_apac_needs_spec(self):
        with pytest.raises(ValueError):
            DecisionConfig(rule="apac_log_mean", m=4, deform=None)

    def test_non_apac_spec_optional(self):
        DecisionConfig(rule="non_apac", m=1, deform=None)


class TestArgmaxEquivalence:
    def test_mean_log_equals_product(self):
        # argmax of the mean log equals argmax of the product of softmax rows
        gen = np.random.Generator(np.random.Philox(11))
        for _ in range(1000):
            m = int(gen.integers(1, 9))
            logits = gen.normal(size=(m, 10))
            probs = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs /= probs.sum(axis=1, keepdims=True)
            by_log = int(np.log(probs).mean(axis=0).argmax())
            by_product = int(probs.prod(axis=0).argmax())
            assert by_log == by_product


class TestApacPredict:
    def test_m1_identity_equals_non_apac(self, net):
        gen = np.random.Generator(np.random.Philox(3))
        for i in range(100):
            xi = gen.random((1, 28, 28), dtype=np.float32)
            a = apac_predict(net, xi, stub_cfg(1), sample_key=i)
            b = non_apac_predict(net, xi)
            assert a.predicted == b.predicted
            assert np.array_equal(a.scores, b.scores)

    def test_flat_recomputation_oracle(self, net, x):
        cfg = DecisionConfig(m=4, deform=default_spec("mnist"), seed=5)
        got = apac_predict(net, x, cfg, sample_key=2)
        batch = _virtual_batch(cfg.deform, x, cfg.seed, 2, 0, 4)
        _, logp, _ = net.forward(batch)
        flat = np.zeros(10, dtype=np.float64)
        for ell in range(4):
            flat += logp[ell]
        assert np.abs(got.scores - flat / 4).max() <= 1e-12

    def test_m_prefix_property(self, net, x):
        spec = default_spec("mnist")
        small = _virtual_batch(spec, x, 0, 0, 0, 4)
        big = _virtual_batch(spec, x, 0, 0, 0, 16)
        assert np.array_equal(small, big[:4])

    def test_m_incremental_vs_flat(self, net, x):
        spec = default_spec("mnist")
        cfg16 = DecisionConfig(m=16, deform=spec, seed=0)
        flat = apac_predict(net, x, cfg16)
        # incremental: running mean updated one draw at a time
        batch = _virtual_batch(spec, x, 0, 0, 0, 16)
        _, logp, _ = net.forward(batch)
        scores = np.zeros(10, dtype=np.float64)
        for ell in range(16):
            scores += (logp[ell] - scores) / (ell + 1)
        assert np.abs(flat.scores - scores).max() <= 1e-10

    def test_scores_are_float64(self, net, x):
        sc = apac_predict(net, x, stub_cfg(2))
        assert sc.scores.dtype == np.float64 and sc.m_used == 2


class TestSoftmaxSum:
    def test_worked_examples(self, x):
        cases = [
            ([(0.6, 0.4), (0.1, 0.9)], 1, 1),
            ([(0.51, 0.49), (0.04, 0.96)], 1, 1),
            ([(0.9, 0.1), (0.35, 0.65)], 0, 0),   # sum 0.625; logs -1.155 vs -2.733
        ]
        for rows, want_sum, want_log in cases:
            stub = StubNet(rows)
            s = softmax_sum_predict(stub, x, stub_cfg(2, "softmax_sum"))
            a = apac_predict(stub, x, stub_cfg(2))
            assert s.predicted == want_sum
            assert a.predicted == want_log
        s = softmax_sum_predict(StubNet([(0.9, 0.1), (0.35, 0.65)]), x,
                                stub_cfg(2, "softmax_sum"))
        assert s.scores[0] == pytest.approx(0.625, abs=1e-12)
        a = apac_predict(StubNet([(0.9, 0.1), (0.35, 0.65)]), x, stub_cfg(2))
        assert a.scores[0] * 2 == pytest.approx(np.log(0.9) + np.log(0.35), abs=1e-12)
        assert a.scores[1] * 2 == pytest.approx(np.log(0.1) + np.log(0.65), abs=1e-12)

    def test_m1_ranking_matches_apac(self, net, x):
        s = softmax_sum_predict(net, x, stub_cfg(1, "softmax_sum"))
        a = apac_predict(net, x, stub_cfg(1))
        assert np.array_equal(s.ranking, a.ranking)

    def test_uniform_tie_breaks_low(self, x):
        stub = StubNet(np.full((3, 4), 0.25))
        s = softmax_sum_predict(stub, x, stub_cfg(3, "softmax_sum"))
        assert s.predicted == 0


class TestDistinctive:
    @staticmethod
    def shared_spec():
        base = default_spec("mnist")
        return DeformSpec(base.dataset_kind, base.pdfs, base.elastic_sigma,
                          base.elastic_alpha, base.image_size,
                          per_class={c: dict(base.pdfs) for c in range(10)})

    @staticmethod
    def distinct_spec(n_classes=10):
        base = default_spec("mnist")
        per_class = {}
        for c in range(n_classes):
            pdfs = dict(base.pdfs)
            pdfs["h11"] = Gaussian(1.0 + 0.01 * (c + 1), 0.05)
            per_class[c] = pdfs
        return DeformSpec(base.dataset_kind, base.pdfs, base.elastic_sigma,
                          base.elastic_alpha, base.image_size, per_class=per_class)

    def test_shared_sets_match_apac(self, net, x):
        spec = self.shared_spec()
        cfg = DecisionConfig(m=4, deform=spec, seed=1)
        got = apac_distinctive_predict(net, x, cfg, sample_key=3)
        plain = apac_predict(net, x, DecisionConfig(m=4, deform=default_spec("mnist"),
                                                    seed=1), sample_key=3)
        assert np.array_equal(got.ranking, plain.ranking)
        assert np.array_equal(got.scores, plain.scores)

    def test_counter_audit_nd_m(self, x):
        spec = self.distinct_spec()
        calls = []

        class CountingNet(StubNet):
            def forward(self, batch):
                calls.append(batch.shape[0])
                return super().forward(batch)

        stub = CountingNet(np.full((8, 10), 0.1))
        cfg = DecisionConfig(m=8, deform=spec, seed=0)
        apac_distinctive_predict(stub, x, cfg)
        assert sum(calls) == 10 * 8      # N_d * M with 10 distinct sets

    def test_delta_pdf_hand_computation(self, x):
        # identity deformations for both classes: score_c = logp(x)_c
        base = identity_spec("mnist")
        spec = DeformSpec(base.dataset_kind, base.pdfs, base.elastic_sigma,
                          base.elastic_alpha, base.image_size,
                          per_class={0: dict(base.pdfs), 1: dict(base.pdfs)})
        net2 = tiny_net(seed=9, n_out=2)
        cfg = DecisionConfig(m=3, deform=spec, seed=0)
        got = apac_distinctive_predict(net2, x, cfg)
        _, logp3, _ = net2.forward(np.repeat(x[None], 3, axis=0))
        hand = np.zeros(2, dtype=np.float64)
        for ell in range(3):
            hand += logp3[ell]
        assert np.abs(got.scores - hand / 3).max() <= 1e-12
        # and agrees with a single feedforward up to float32 batching effects
        _, logp1, _ = net2.forward(x)
        assert np.abs(got.scores - np.asarray(logp1, np.float64)).max() <= 1e-6

    def test_requires_distinctive_spec(self, net, x):
        with pytest.raises(ValueError):
            apac_distinctive_predict(net, x, stub_cfg(2))

    def test_predict_dispatch(self, net, x):
        spec = self.shared_spec()
        cfg = DecisionConfig(m=2, deform=spec, seed=0)
        got = predict(net, x, cfg)
        direct = apac_distinctive_predict(net, x, cfg)
        assert np.array_equal(got.scores, direct.scores)


class TestNonApac:
    def test_matches_forward_argmax(self, net, x):
        probs, _, _ = net.forward(x)
        assert non_apac_predict(net, x).predicted == int(np.argmax(probs))

    def test_deterministic(self, net, x):
        a = non_apac_predict(net, x)
        b = non_apac_predict(net, x)
        assert np.array_equal(a.scores, b.scores)

    def test_invariant_to_m_and_seed(self, net, x):
        ds = LabeledDataset(x[None], np.array([3], np.int64), 10, "test")
        t1 = evaluate(net, ds, DecisionConfig(rule="non_apac", m=1, seed=0))
        t2 = evaluate(net, ds, DecisionConfig(rule="non_apac", m=64, seed=99))
        assert t1.topk_error == t2.topk_error
        assert t1.outcomes[0].top2_scores == t2.outcomes[0].top2_scores


def _labeled(images, labels, n_classes=3):
    return LabeledDataset(np.asarray(images, np.float32),
                          np.asarray(labels, np.int64), n_classes, "test")


class TestEvaluate:
    @staticmethod
    def oracle_net(scale=10.0):
        # identity read-out: logits are the three input pixels
        net = Network([Dense(3), Softmax()], (1, 1, 3), seed=0)
        net.params[0].value = (np.eye(3) * scale).astype(np.float32)
        net.params[1].value[:] = 0
        net.bump_version()
        return net

    def test_perfect_classifier(self):
        gen = np.random.Generator(np.random.Philox(2))
        labels = gen.integers(0, 3, size=60)
        images = np.zeros((60, 1, 1, 3), np.float32)
        images[np.arange(60), 0, 0, labels] = 1.0
        table = evaluate(self.oracle_net(), _labeled(images, labels),
                         DecisionConfig(rule="non_apac"))
        assert table.topk_error == {1: 0.0, 2: 0.0}

    def test_uniform_scores_tie_break(self):
        net = self.oracle_net(scale=0.0)
        gen = np.random.Generator(np.random.Philox(4))
        labels = gen.integers(0, 3, size=300)
        images = gen.random((300, 1, 1, 3), dtype=np.float32) * 0  # all-zero
        table = evaluate(net, _labeled(images, labels), DecisionConfig(rule="non_apac"))
        expected = float(np.mean(labels != 0))
        assert table.topk_error[1] == pytest.approx(expected, abs=1e-12)
        assert abs(expected - 2 / 3) < 0.1

    def test_topk_monotone(self):
        gen = np.random.Generator(np.random.Philox(5))
        images = gen.random((80, 1, 1, 3), dtype=np.float32)
        labels = gen.integers(0, 3, size=80)
        table = evaluate(self.oracle_net(scale=1.0), _labeled(images, labels),
                         DecisionConfig(rule="non_apac"), k_list=(1, 2, 3))
        assert table.topk_error[1] >= table.topk_error[2] >= table.topk_error[3]
        assert table.topk_error[3] == 0.0

    def test_outcomes_csv(self, tmp_path):
        images = np.zeros((2, 1, 1, 3), np.float32)
        images[0, 0, 0, 1] = 1.0
        table = evaluate(self.oracle_net(), _labeled(images, [1, 0]),
                         DecisionConfig(rule="non_apac"))
        path = tmp_path / "outcomes.csv"
        table.write_outcomes_csv(path, meta="rule=non_apac")
        lines = path.read_text().splitlines()
        assert lines[0] == "# rule=non_apac"
        assert lines[1].startswith("index,true_class,predicted")
        assert len(lines) == 4


class TestClassScores:
    def test_tie_break_lowest_index(self):
        sc = ClassScores(np.array([0.5, 0.5, 0.1]), 1)
        assert sc.predicted == 0

    def test_ranking_stable(self):
        sc = ClassScores(np.array([0.1, 0.9, 0.9]), 1)
        assert list(sc.ranking) == [1, 2, 0]
