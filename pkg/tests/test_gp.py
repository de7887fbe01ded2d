import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from salbc.gp import DerivativeGPRegressor, Measurement, NumericalConditioningError
from salbc.kernels import SquaredExponential

KERNEL = SquaredExponential(1.0, 0.5)


def dense_oracle(X, y, y2, xq, s2, ell, noise):
    """Direct mean/variance formulas with an explicit matrix inverse."""
    r = X[:, None] - X[None, :]
    K = s2 * np.exp(-r**2 / (2 * ell**2))
    A = np.linalg.inv(K + noise * np.eye(X.size))
    rq = xq[:, None] - X[None, :]
    kq = s2 * np.exp(-rq**2 / (2 * ell**2))
    dkq = -rq / ell**2 * kq
    out = {}
    for name, feats, prior, targets in [
        ("d", kq, s2, y), ("dd", dkq, s2 / ell**2, y),
        ("d2", kq, s2, y2), ("ddd", dkq, s2 / ell**2, y2),
    ]:
        mean = feats @ A @ targets
        var = prior - np.einsum("ij,jk,ik->i", feats, A, feats)
        out[name] = (mean, np.sqrt(np.maximum(var, 0)))
    return out


def fd(fn, x, h=1e-5):
    return (fn(x + h) - fn(x - h)) / (2 * h)


def test_prior_queries():
    gp = DerivativeGPRegressor(SquaredExponential(1.0, 0.5)).fit(np.zeros(0), np.zeros(0))
    x = np.array([-0.3, 0.0, 2.0])
    for query, std in [(gp.query_d, 1.0), (gp.query_dd, 2.0), (gp.query_d2, 1.0), (gp.query_ddd, 2.0)]:
        m, s = query(x)
        assert np.all(m == 0.0)
        assert np.allclose(s, std)


def test_single_measurement_scalar_formulas():
    gp = DerivativeGPRegressor(SquaredExponential(1.0, 1.0), noise_variance=0.1)
    gp = gp.add_measurement(Measurement(x=0.2, u=0.0, d_hat=1.0, d2_hat=0.5))
    assert gp.n_train_ == 1
    assert gp.factor_.shape == (1, 1)
    assert gp.factor_[0, 0] == pytest.approx(math.sqrt(1.1), rel=1e-14)
    m, s = gp.query_d(np.array([0.2]))
    assert m[0] == pytest.approx(1 / 1.1, rel=1e-12)
    assert m[0] == pytest.approx(0.90909, abs=1e-5)
    assert s[0] == pytest.approx(math.sqrt(1 - 1 / 1.1), rel=1e-12)
    assert s[0] == pytest.approx(0.30151, abs=1e-5)
    m2, _ = gp.query_d2(np.array([0.2]))
    assert m2[0] == pytest.approx(0.5 / 1.1, rel=1e-12)
    # derivative features vanish at the data point for a stationary kernel
    assert gp.query_dd(np.array([0.2]))[0][0] == 0.0
    assert gp.query_ddd(np.array([0.2]))[0][0] == 0.0


def test_far_from_data_reverts_to_prior():
    gp = DerivativeGPRegressor(KERNEL, 0.01).fit([0.0, 0.1], [1.0, -1.0])
    m, s = gp.query_d(np.array([50.0]))
    assert abs(m[0]) < 1e-12 and s[0] == pytest.approx(1.0)


def test_duplicate_inputs_stay_factorizable():
    gp = DerivativeGPRegressor(KERNEL, 1e-6).fit([0.3, 0.3, 0.3], [1.0, 1.1, 0.9])
    assert np.isfinite(gp.query_d(np.array([0.3]))[0]).all()


def test_conditioning_failure_is_reported():
    gp = DerivativeGPRegressor(KERNEL, 1e-300)
    with pytest.raises(NumericalConditioningError):
        gp.fit([0.3, 0.3], [1.0, 1.0])


@pytest.mark.parametrize("n", [1, 3, 8])
def test_matches_dense_inverse(rng, n):
    X = rng.uniform(-1, 1, n)
    y = rng.standard_normal(n)
    y2 = rng.standard_normal(n)
    xq = rng.uniform(-1.5, 1.5, 40)
    gp = DerivativeGPRegressor(SquaredExponential(1.3, 0.4), 0.05).fit(X, y, y_half_sq=y2)
    ref = dense_oracle(X, y, y2, xq, 1.3, 0.4, 0.05)
    for name, query in [("d", gp.query_d), ("dd", gp.query_dd), ("d2", gp.query_d2), ("ddd", gp.query_ddd)]:
        m, s = query(xq)
        assert np.allclose(m, ref[name][0], atol=1e-9), name
        assert np.allclose(s, ref[name][1], atol=1e-9), name


def test_half_square_targets_default_to_squared_measurements():
    X, y = np.array([0.0, 0.5]), np.array([0.4, -0.2])
    a = DerivativeGPRegressor(KERNEL).fit(X, y)
    b = DerivativeGPRegressor(KERNEL).fit(X, y, y_half_sq=0.5 * y**2)
    assert np.array_equal(a.predict_half_square(X), b.predict_half_square(X))


def test_derivative_means_match_finite_differences(rng):
    for _ in range(10):
        n = rng.integers(1, 11)
        X = rng.uniform(-1, 1, n)
        gp = DerivativeGPRegressor(KERNEL, 0.01).fit(X, rng.standard_normal(n), rng.standard_normal(n))
        xq = rng.uniform(-1, 1, 25)
        num = fd(gp.predict, xq)
        assert np.allclose(gp.predict_derivative(xq), num, rtol=1e-6, atol=1e-8)
        num2 = fd(gp.predict_half_square, xq)
        assert np.allclose(gp.predict_product(xq), num2, rtol=1e-6, atol=1e-8)


def test_half_square_mean_linear_in_targets(rng):
    X = rng.uniform(-1, 1, 5)
    y2 = rng.standard_normal(5)
    xq = np.linspace(-1, 1, 9)
    a = DerivativeGPRegressor(KERNEL).fit(X, np.zeros(5), y2).predict_half_square(xq)
    b = DerivativeGPRegressor(KERNEL).fit(X, np.zeros(5), 2 * y2).predict_half_square(xq)
    assert np.allclose(b, 2 * a, rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=10), st.floats(-1, 1))
def test_variance_bounds_and_monotonicity(xs, xq):
    gp = DerivativeGPRegressor(KERNEL, 0.01).fit(np.zeros(0), np.zeros(0))
    prev = gp.query_d(np.array([xq]))[1][0]
    for x in xs:
        gp = gp.add_measurement(Measurement(x, 0.0, 0.0, 0.0))
        s = gp.query_d(np.array([xq]))[1][0]
        assert 0.0 <= s <= math.sqrt(KERNEL.signal_variance) + 1e-12
        assert s <= prev + 1e-10
        prev = s


def test_noise_free_interpolation():
    X = np.linspace(-1, 1, 7)
    d = np.sin(2 * X)
    gp = DerivativeGPRegressor(SquaredExponential(1.0, 0.5), 1e-10).fit(X, d)
    assert np.abs(gp.predict(X) - d).max() <= 1e-4


def test_add_measurement_returns_new_estimator():
    gp = DerivativeGPRegressor(KERNEL).fit([0.0], [1.0])
    gp2 = gp.add_measurement(Measurement(0.5, 1.0, 0.2, 0.02))
    assert gp.n_train_ == 1 and gp2.n_train_ == 2
    assert [m.x for m in gp2.measurements] == [0.0, 0.5]
    assert gp2.controls_[-1] == 1.0


def test_estimator_api():
    gp = DerivativeGPRegressor(KERNEL, noise_variance=0.2)
    assert gp.get_params() == {"kernel": KERNEL, "noise_variance": 0.2}
    assert clone(gp).noise_variance == 0.2
    gp.fit(np.array([[0.0], [0.5]]), [1.0, 0.0])
    assert gp.predict([[0.0]]).shape == (1,)
    with pytest.raises(ValueError):
        gp.fit([0.0, np.nan], [1.0, 0.0])
    with pytest.raises(ValueError):
        gp.fit([0.0, 1.0], [1.0])
