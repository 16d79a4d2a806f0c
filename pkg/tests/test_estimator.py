import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from apac import ApacClassifier

from _datagen import make_corpus


@pytest.fixture(scope="module")
def digits():
    images, labels = make_corpus(400, seed=17)
    flat = images.reshape(len(images), -1)
    return flat[:320], labels[:320], flat[320:], labels[320:]


def fast_clf(**kw):
    base = dict(hidden_units=(32,), epochs=5, rule="non_apac", random_state=0)
    base.update(kw)
    return ApacClassifier(**base)


class TestSklearnProtocol:
    def test_get_params_roundtrip(self):
        clf = fast_clf(m=8, l2=1e-6)
        params = clf.get_params()
        assert params["m"] == 8 and params["l2"] == 1e-6
        other = ApacClassifier(**params)
        assert other.get_params() == params

    def test_clone(self, digits):
        X, y, _, _ = digits
        clf = fast_clf().fit(X, y)
        fresh = clone(clf)
        assert not hasattr(fresh, "network_")
        assert fresh.get_params() == clf.get_params()

    def test_set_params_chains(self):
        clf = fast_clf().set_params(m=4, epochs=2)
        assert clf.m == 4 and clf.epochs == 2

    def test_predict_before_fit_raises(self, digits):
        with pytest.raises(NotFittedError):
            fast_clf().predict(digits[0])

    def test_length_mismatch(self, digits):
        X, y, _, _ = digits
        with pytest.raises(ValueError):
            fast_clf().fit(X, y[:-1])


class TestFitPredict:
    def test_beats_chance(self, digits):
        X, y, Xt, yt = digits
        clf = fast_clf(epochs=15).fit(X, y)
        assert clf.score(Xt, yt) > 0.5               # ten balanced classes

    def test_predict_labels_from_training_set(self, digits):
        X, y, Xt, _ = digits
        clf = fast_clf().fit(X, y)
        assert set(clf.predict(Xt)) <= set(clf.classes_)

    def test_proba_normalized(self, digits):
        X, y, Xt, _ = digits
        clf = fast_clf().fit(X, y)
        proba = clf.predict_proba(Xt[:10])
        assert proba.shape == (10, len(clf.classes_))
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(np.exp(clf.predict_log_proba(Xt[:10])), proba)

    def test_deterministic_given_state(self, digits):
        X, y, Xt, _ = digits
        a = fast_clf(random_state=3).fit(X, y).predict(Xt)
        b = fast_clf(random_state=3).fit(X, y).predict(Xt)
        assert np.array_equal(a, b)

    def test_random_state_matters(self, digits):
        X, y, _, _ = digits
        a = fast_clf(random_state=1).fit(X, y)
        b = fast_clf(random_state=2).fit(X, y)
        assert a.network_.digest() != b.network_.digest()

    def test_noninteger_labels(self, digits):
        X, y, Xt, _ = digits
        names = np.array(["zero", "one", "two", "three", "four",
                          "five", "six", "seven", "eight", "nine"])
        clf = fast_clf(epochs=3).fit(X, names[y])
        assert set(clf.predict(Xt[:5])) <= set(names)

    def test_4d_input(self, digits):
        X, y, _, _ = digits
        images = X.reshape(-1, 1, 28, 28)
        clf = fast_clf(epochs=2).fit(images, y)
        assert clf.n_features_in_ == 784
        assert len(clf.predict(images[:4])) == 4


class TestAugmentedPath:
    def test_augment_with_image_shape(self, digits):
        X, y, Xt, _ = digits
        clf = fast_clf(epochs=1, augment="mnist", image_shape=(1, 28, 28),
                       rule="apac_log_mean", m=2).fit(X[:100], y[:100])
        scores = clf.decision_scores(Xt[:3])
        assert scores.shape == (3, len(clf.classes_))
        assert np.all(scores < 0)                    # mean log-softmax

    def test_rule_falls_back_without_augment(self, digits):
        X, y, Xt, _ = digits
        clf = fast_clf(epochs=1, augment=None, rule="apac_log_mean").fit(X[:100], y[:100])
        assert clf._decision_cfg().rule == "non_apac"
