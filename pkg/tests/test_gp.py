import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from gpfilter.gp import (
    DegenerateData,
    GaussianProcessRegressor,
    GPHyperparams,
    log_marginal_likelihood,
    stable_cholesky,
)

HYPER = GPHyperparams(0.7, 1.3, 0.05)


def dense_oracle(X, y, Xq, hyper):
    """Textbook GP formulas with an explicit inverse and determinant."""
    mu, sd = X.mean(0), X.std(0)
    Xs, Qs = (X - mu) / sd, (Xq - mu) / sd
    ym = y.mean()
    yc = y - ym

    def k(A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return hyper.signal_std**2 * np.exp(-d2 / (2 * hyper.length_scale**2))

    C = k(Xs, Xs) + hyper.noise_std**2 * np.eye(len(y))
    Ci = np.linalg.inv(C)
    lml = -0.5 * yc @ Ci @ yc - 0.5 * np.log(np.linalg.det(C)) - 0.5 * len(y) * np.log(2 * np.pi)
    Ks = k(Qs, Xs)
    mean = Ks @ Ci @ yc + ym
    var = hyper.signal_std**2 - np.einsum("ij,jk,ik->i", Ks, Ci, Ks) + hyper.noise_std**2
    return lml, mean, np.sqrt(var)


def instance(seed, n=5):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, (n, 2))
    y = rng.uniform(0, 5.2, n)
    Xq = rng.uniform(0, 10, (3, 2))
    return X, y, Xq


def fixed_gp(hyper=HYPER):
    return GaussianProcessRegressor(hyper.length_scale, hyper.signal_std, hyper.noise_std,
                                    optimize=False)


@pytest.mark.parametrize("seed", range(25))
def test_matches_dense_oracle(seed):
    X, y, Xq = instance(seed, n=5 + seed % 7)
    lml, mean, std = dense_oracle(X, y, Xq, HYPER)
    gp = fixed_gp().fit(X, y)
    m, s = gp.predict(Xq, return_std=True)
    assert gp.log_marginal_likelihood() == pytest.approx(lml, rel=1e-6)
    np.testing.assert_allclose(m, mean, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(s, std, rtol=1e-6)


def test_single_point_closed_form():
    h = GPHyperparams(1.0, 0.8, 0.3)
    v = log_marginal_likelihood(np.zeros((1, 2)), np.zeros(1), h)
    assert v == pytest.approx(-0.5 * math.log(2 * math.pi * (0.8**2 + 0.3**2)), rel=1e-12)


def test_noise_sweep_unimodal():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 3, (40, 1))
    y = np.sin(2 * X[:, 0]) + rng.normal(0, 0.2, 40)
    sweep = [log_marginal_likelihood(X, y - y.mean(), GPHyperparams(0.5, 1.0, sn))
             for sn in np.geomspace(1e-3, 3, 60)]
    steps = np.sign(np.diff(sweep))
    assert steps[0] > 0 and steps[-1] < 0
    assert np.count_nonzero(np.diff(steps)) == 1


def test_lml_permutation_invariant():
    X, y, _ = instance(1, n=12)
    perm = np.random.default_rng(0).permutation(12)
    a = log_marginal_likelihood(X, y, HYPER)
    assert log_marginal_likelihood(X[perm], y[perm], HYPER) == pytest.approx(a, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    X, y, _ = instance(seed, n=15)
    theta = np.log([0.6, 1.1, 0.2]) + np.random.default_rng(seed).normal(0, 0.3, 3)
    _, grad = log_marginal_likelihood(X, y - y.mean(), GPHyperparams.from_log(theta), True)
    h = 1e-5
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (log_marginal_likelihood(X, y - y.mean(), GPHyperparams.from_log(theta + e))
              - log_marginal_likelihood(X, y - y.mean(), GPHyperparams.from_log(theta - e))) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_cholesky_reconstruction():
    X, y, _ = instance(2, n=30)
    gp = fixed_gp().fit(X, y)
    h = gp.hyper_
    d2 = ((gp.X_train_[:, None] - gp.X_train_[None]) ** 2).sum(-1)
    K = h.signal_std**2 * np.exp(-d2 / (2 * h.length_scale**2)) + h.noise_std**2 * np.eye(30)
    err = np.linalg.norm(gp.L_ @ gp.L_.T - K) / np.linalg.norm(K)
    assert err < 1e-8


def test_jitter_rescues_singular_matrix():
    K = np.ones((4, 4))
    L, jitter = stable_cholesky(K)
    assert jitter > 0
    np.testing.assert_allclose(L @ L.T, K + jitter * np.eye(4), atol=1e-12)


def test_far_query_reverts_to_prior():
    X, y, _ = instance(4, n=20)
    gp = fixed_gp().fit(X, y)
    far = gp.x_mean_ + gp.x_scale_ * 20 * HYPER.length_scale * np.array([1.0, 1.0])
    m, s = gp.predict(far[None], return_std=True)
    assert m[0] == pytest.approx(y.mean(), abs=1e-6)
    assert s[0] == pytest.approx(gp.prior_std, abs=1e-6)


def test_interpolates_with_tiny_noise():
    X, y, _ = instance(5, n=10)
    gp = GaussianProcessRegressor(1.0, 2.0, 1e-6, optimize=False).fit(X, y)
    np.testing.assert_allclose(gp.predict(X), y, atol=1e-3)


def test_collinear_points():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    y = np.array([0.0, 1.0, 2.0]) * math.sqrt(2)
    gp = GaussianProcessRegressor().fit(X, y)
    assert np.all(np.abs(gp.predict(X) - y) <= 2 * gp.hyper_.noise_std + 1e-12)


def test_conflicting_duplicates_force_noise():
    X = np.repeat(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), 2, axis=0)
    y = np.array([1.0, 2.0, 0.5, 1.5, 3.0, 2.0, 0.0, 1.0])
    gp = GaussianProcessRegressor().fit(X, y)
    assert gp.hyper_.noise_std > 1e-3


def test_search_improves_on_defaults():
    X, y, _ = instance(6, n=40)
    tuned = GaussianProcessRegressor().fit(X, y)
    plain = GaussianProcessRegressor(optimize=False).fit(X, y)
    assert tuned.log_marginal_likelihood() >= plain.log_marginal_likelihood()


def test_defaults_without_search():
    X, y, _ = instance(7, n=30)
    gp = GaussianProcessRegressor(optimize=False).fit(X, y)
    Xs = (X - X.mean(0)) / X.std(0)
    assert gp.hyper_.length_scale == pytest.approx(0.2 * np.linalg.norm(Xs.std(0)))
    assert gp.hyper_.signal_std == pytest.approx(y.std())
    assert gp.hyper_.noise_std == pytest.approx(0.1 * y.std())


def test_uncertainty_grows_along_ray():
    rng = np.random.default_rng(8)
    X = rng.normal([5, 5], 0.3, (40, 2))
    y = X[:, 0] + rng.normal(0, 0.05, 40)
    gp = GaussianProcessRegressor().fit(X, y)
    direction = np.array([0.6, 0.8])
    r0 = np.max(np.linalg.norm(X - X.mean(0), axis=1))
    ray = X.mean(0) + np.linspace(r0, r0 + 20, 200)[:, None] * direction
    _, s = gp.predict(ray, return_std=True)
    assert np.all(np.diff(s) >= -1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 25),
       st.floats(0.05, 5), st.floats(0.1, 5), st.floats(1e-3, 1))
def test_posterior_never_exceeds_prior(seed, n, ls, sf, sn):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, (n, 2))
    y = rng.uniform(0, 5, n)
    gp = GaussianProcessRegressor(ls, sf, sn, optimize=False).fit(X, y)
    _, s = gp.predict(rng.uniform(-5, 15, (50, 2)), return_std=True)
    assert np.all(s >= 0)
    assert np.all(s <= gp.prior_std + 1e-9)


def test_json_round_trip():
    X, y, Xq = instance(9, n=20)
    gp = GaussianProcessRegressor().fit(X, y)
    back = GaussianProcessRegressor.from_dict(json.loads(json.dumps(gp.to_dict())))
    m0, s0 = gp.predict(Xq, return_std=True)
    m1, s1 = back.predict(Xq, return_std=True)
    np.testing.assert_allclose(m1, m0, rtol=1e-12)
    np.testing.assert_allclose(s1, s0, rtol=1e-12)


def test_estimator_api():
    gp = GaussianProcessRegressor(length_scale=0.5, optimize=False)
    assert gp.get_params()["length_scale"] == 0.5
    c = clone(gp)
    assert c.get_params() == gp.get_params()
    X, y, _ = instance(10, n=10)
    assert -1.0 < c.fit(X, y).score(X, y) <= 1.0


def test_degenerate_inputs():
    with pytest.raises(DegenerateData):
        GaussianProcessRegressor().fit(np.ones((5, 2)), np.arange(5.0))


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        GPHyperparams(0.0, 1.0, 1.0)
