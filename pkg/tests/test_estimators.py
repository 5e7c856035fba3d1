import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from poelr import LipschitzEstimator, PGDTransformer, PoEClassifier
from poelr.data import gen_blobs


@pytest.fixture(scope="module")
def blobs():
    ds = gen_blobs(300, 2, 3, 0.08, 0)
    return ds.inputs, np.array(["a", "b", "c"])[ds.labels]


@pytest.fixture(scope="module")
def fitted(blobs):
    X, y = blobs
    return PoEClassifier(hidden=(8,), epochs=5, batch_size=10, eta1=0.3, multiplier=1,
                         snapshots_per_epoch=20).fit(X, y)


def test_params_and_clone():
    clf = PoEClassifier(hidden=(4,), multiplier=2)
    c = clone(clf)
    assert c.get_params() == clf.get_params() and c is not clf
    assert c.set_params(eta1=0.5).eta1 == 0.5


def test_classifier_fit_predict(fitted, blobs):
    X, y = blobs
    assert set(fitted.predict(X)) <= {"a", "b", "c"}
    assert fitted.score(X, y) >= 0.9
    assert fitted.L_est_ > 0 and fitted.schedule_.eta1 == pytest.approx(1 / fitted.L_est_)
    np.testing.assert_allclose(fitted.predict_proba(X).sum(axis=1), 1.0)


def test_baseline_classifier_has_no_estimate(blobs):
    X, y = blobs
    clf = PoEClassifier(hidden=(), epochs=3).fit(X, y)
    assert clf.L_est_ is None and clf.schedule_.eta1 == 0.1


def test_not_fitted():
    with pytest.raises(NotFittedError):
        PoEClassifier().predict(np.zeros((1, 2)))
    with pytest.raises(NotFittedError):
        PGDTransformer(PoEClassifier()).fit()


def test_lipschitz_estimator_inputs(fitted):
    a = LipschitzEstimator().fit(fitted.snapshots_)
    b = LipschitzEstimator().fit((fitted.snapshots_.thetas, fitted.snapshots_.grads))
    assert a.L_est_ == b.L_est_ > 0


def test_pgd_transformer(fitted, blobs):
    X, y = blobs
    tr = PGDTransformer(fitted, epsilon=0.05, step_size=0.01, steps=5).fit()
    Xa = tr.transform(X, y)
    assert np.max(np.abs(Xa - X)) <= 0.05 + 1e-12
    assert fitted.score(Xa, y) <= fitted.score(X, y)
    # without labels the classifier's own predictions are attacked
    assert tr.transform(X).shape == X.shape
