"""Estimator facade: sklearn contract, fit/sample/score behavior."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from meanflow_cv.estimator import MeanFlowSampler


def two_blob_data(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    c = rng.integers(0, 2, n)
    centers = np.array([[-3.0, 0.0], [3.0, 0.0]])
    return centers[c] + 0.3 * rng.standard_normal((n, 2))


def test_get_set_params_roundtrip_and_clone():
    est = MeanFlowSampler(steps=123, beta=0.5, proxy="ema_boundary",
                          hidden=(8, 8))
    params = est.get_params()
    assert params["steps"] == 123
    assert params["beta"] == 0.5
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(steps=5)
    assert est.steps == 5


def test_unfitted_raises():
    est = MeanFlowSampler()
    with pytest.raises(NotFittedError):
        est.sample(4)
    with pytest.raises(NotFittedError):
        est.score(np.zeros((4, 2)))


def test_fit_sample_score_two_blobs():
    X = two_blob_data()
    est = MeanFlowSampler(steps=1500, batch_size=128, hidden=(32, 32),
                          ema_decay=0.99, seed=1)
    assert est.fit(X) is est
    s = est.sample(1000, random_state=3)
    assert s.shape == (1000, 2)
    # samples should land near the two blob centers, split roughly evenly
    left = s[:, 0] < 0
    assert 0.25 < left.mean() < 0.75
    assert abs(np.abs(s[:, 0]).mean() - 3.0) < 0.5
    assert est.score(two_blob_data(seed=5)) > -0.8


def test_sample_deterministic_given_state():
    X = two_blob_data(n=500)
    est = MeanFlowSampler(steps=200, batch_size=64, hidden=(8,), seed=2).fit(X)
    a = est.sample(64, random_state=7)
    b = est.sample(64, random_state=7)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, est.sample(64, random_state=8))


def test_fit_deterministic_given_seed():
    X = two_blob_data(n=500)
    a = MeanFlowSampler(steps=100, hidden=(8,), seed=4).fit(X)
    b = MeanFlowSampler(steps=100, hidden=(8,), seed=4).fit(X)
    np.testing.assert_array_equal(a.model_.params, b.model_.params)


def test_standardize_disabled_keeps_raw_scale():
    X = two_blob_data(n=500)
    est = MeanFlowSampler(steps=100, hidden=(8,), standardize=False).fit(X)
    np.testing.assert_array_equal(est.mean_, np.zeros(2))
    np.testing.assert_array_equal(est.scale_, np.ones(2))


def test_score_rejects_wrong_width():
    est = MeanFlowSampler(steps=50, hidden=(8,)).fit(two_blob_data(n=300))
    with pytest.raises(ValueError, match="features"):
        est.score(np.zeros((10, 3)))


def test_analytic_oracle_proxy_rejected():
    est = MeanFlowSampler(steps=50, beta=0.5, proxy="analytic_oracle")
    with pytest.raises(ValueError, match="mixture"):
        est.fit(two_blob_data(n=200))
