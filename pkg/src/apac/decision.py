"""Test-time decision rules.

apac_predict: argmax of the mean log-softmax over M virtual samples drawn
with the training deformation distributions (equivalently, argmax of the
product of their softmax outputs). The original sample itself is never fed
forward. softmax_sum_predict averages raw softmax instead of its log;
non_apac_predict is the conventional single feedforward.

Score accumulation is float64 in fixed draw order; virtual-sample draws for
a test sample are keyed by (decision seed, sample key, draw index), so the
draws for M are a prefix of the draws for any larger M.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from apac import sampler
from apac.dataio import LabeledDataset
from apac.nn_core import Network
from apac.rng import STREAM_DECISION, generator_for
from apac.sampler import DeformSpec

RULES = ("apac_log_mean", "softmax_sum", "non_apac")


@dataclass
class DecisionConfig:
    rule: str = "apac_log_mean"
    m: int = 1
    deform: DeformSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r} (pick one of {RULES})")
        if self.m < 1:
            raise ValueError("M must be at least 1")
        if self.rule != "non_apac" and self.deform is None:
            raise ValueError(f"rule {self.rule!r} needs a deformation spec")


@dataclass
class ClassScores:
    scores: np.ndarray          # (N_c,) float64
    m_used: int

    @property
    def predicted(self) -> int:
        return int(self.scores.argmax())  # argmax ties -> lowest index

    @property
    def ranking(self) -> np.ndarray:
        order = np.argsort(-self.scores, kind="stable")
        return order


def _virtual_batch(spec: DeformSpec, x: np.ndarray, seed: int, sample_key: int,
                   set_id: int, m: int, cls: int | None = None) -> np.ndarray:
    batch = np.empty((m,) + x.shape, dtype=x.dtype)
    for ell in range(m):
        gen = generator_for(seed, (STREAM_DECISION, sample_key, set_id), ell)
        theta = sampler.sample_theta(spec, gen, cls)
        batch[ell] = sampler.apply(spec, theta, x)
    return batch


def apac_predict(net: Network, x: np.ndarray, cfg: DecisionConfig,
                 sample_key: int = 0) -> ClassScores:
    """Mean log-softmax over M class-indistinctive virtual samples."""
    if cfg.deform is None:
        raise ValueError("apac_predict needs a deformation spec")
    batch = _virtual_batch(cfg.deform, x, cfg.seed, sample_key, 0, cfg.m)
    _, logp, _ = net.forward(batch)
    scores = np.zeros(net.class_count, dtype=np.float64)
    for ell in range(cfg.m):        # fixed stream order, 64-bit accumulation
        scores += logp[ell]
    return ClassScores(scores / cfg.m, cfg.m)


def apac_distinctive_predict(net: Network, x: np.ndarray, cfg: DecisionConfig,
                             sample_key: int = 0) -> ClassScores:
    """Per-class mean log-softmax using each class's own deformation set.

    Classes sharing a PDF set share one set of draws, so N_d * M virtual
    samples are evaluated in total, N_d being the number of distinct sets.
    """
    if cfg.deform is None or not cfg.deform.class_distinctive:
        raise ValueError("apac_distinctive_predict needs a class-distinctive spec")
    n_c = net.class_count
    set_ids = cfg.deform.class_set_ids(n_c)
    scores = np.zeros(n_c, dtype=np.float64)
    done: dict[int, np.ndarray] = {}
    for c in range(n_c):
        sid = set_ids[c]
        if sid not in done:
            batch = _virtual_batch(cfg.deform, x, cfg.seed, sample_key, sid, cfg.m, cls=c)
            _, logp, _ = net.forward(batch)
            acc = np.zeros(n_c, dtype=np.float64)
            for ell in range(cfg.m):
                acc += logp[ell]
            done[sid] = acc / cfg.m
        scores[c] = done[sid][c]
    return ClassScores(scores, cfg.m)


def softmax_sum_predict(net: Network, x: np.ndarray, cfg: DecisionConfig,
                        sample_key: int = 0) -> ClassScores:
    """Mean softmax (not log) over M virtual samples."""
    if cfg.deform is None:
        raise ValueError("softmax_sum_predict needs a deformation spec")
    batch = _virtual_batch(cfg.deform, x, cfg.seed, sample_key, 0, cfg.m)
    probs, _, _ = net.forward(batch)
    scores = np.zeros(net.class_count, dtype=np.float64)
    for ell in range(cfg.m):
        scores += probs[ell]
    return ClassScores(scores / cfg.m, cfg.m)


def non_apac_predict(net: Network, x: np.ndarray) -> ClassScores:
    """Conventional prediction: single feedforward of the original sample."""
    _, logp, _ = net.forward(x)
    return ClassScores(np.asarray(logp, dtype=np.float64), 1)


def predict(net: Network, x: np.ndarray, cfg: DecisionConfig,
            sample_key: int = 0) -> ClassScores:
    if cfg.rule == "non_apac":
        return non_apac_predict(net, x)
    if cfg.rule == "softmax_sum":
        return softmax_sum_predict(net, x, cfg, sample_key)
    if cfg.deform is not None and cfg.deform.class_distinctive:
        return apac_distinctive_predict(net, x, cfg, sample_key)
    return apac_predict(net, x, cfg, sample_key)


@dataclass
class SampleOutcome:
    index: int
    true_class: int
    predicted: int
    true_rank: int
    top2: tuple[int, int]
    top2_scores: tuple[float, float]


@dataclass
class ErrorTable:
    topk_error: dict[int, float]
    outcomes: list[SampleOutcome] = field(default_factory=list)

    def write_outcomes_csv(self, path, meta: str | None = None) -> None:
        with open(path, "w", newline="") as f:
            if meta:
                f.write(f"# {meta}\n")
            w = csv.writer(f)
            w.writerow(["index", "true_class", "predicted", "true_rank",
                        "top1_class", "top1_score", "top2_class", "top2_score"])
            for o in self.outcomes:
                w.writerow([o.index, o.true_class, o.predicted, o.true_rank,
                            o.top2[0], f"{o.top2_scores[0]:.12g}",
                            o.top2[1], f"{o.top2_scores[1]:.12g}"])


def evaluate(net: Network, ds: LabeledDataset, cfg: DecisionConfig,
             k_list: tuple[int, ...] = (1, 2)) -> ErrorTable:
    """Top-k error of the configured rule over a dataset.

    Sample keys are dataset indices, so predictions for one sample do not
    depend on which other samples are evaluated.
    """
    wrong = {k: 0 for k in k_list}
    outcomes = []
    for i in range(len(ds)):
        sc = predict(net, ds.images[i], cfg, sample_key=i)
        ranking = sc.ranking
        true = int(ds.labels[i])
        true_rank = int(np.nonzero(ranking == true)[0][0])
        for k in k_list:
            if true_rank >= k:
                wrong[k] += 1
        n_top = min(2, len(ranking))
        top = tuple(int(ranking[j]) for j in range(n_top))
        outcomes.append(SampleOutcome(
            index=i, true_class=true, predicted=sc.predicted, true_rank=true_rank,
            top2=top + top[-1:] * (2 - n_top),
            top2_scores=tuple(float(sc.scores[t]) for t in top) + (0.0,) * (2 - n_top)))
    return ErrorTable({k: wrong[k] / len(ds) for k in k_list}, outcomes)
