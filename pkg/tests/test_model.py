import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlineica.errors import ConfigError, DomainError
from onlineica.model import (
    PriorMeasure,
    SourceDist,
    StepSchedule,
    feature_from_prior,
    make_sparse_feature,
    rademacher,
    sample_observation,
    source_moments,
    sparse_ternary,
    three_atom,
)


def test_sparse_feature_all_ones():
    xi = make_sparse_feature(10, 1.0, 0)
    np.testing.assert_allclose(xi.values, np.ones(10))


def test_sparse_feature_counts():
    xi = make_sparse_feature(10_000, 0.3, 1)
    assert np.count_nonzero(xi.values) == 3000
    np.testing.assert_allclose(xi.values[xi.values != 0], 1 / np.sqrt(0.3), rtol=1e-12)
    assert np.all(xi.values[xi.atom_mask(0)] == 0)


def test_sparse_feature_half():
    xi = make_sparse_feature(4, 0.5, 3)
    assert sorted(xi.values.round(12)) == [0, 0, round(np.sqrt(2), 12), round(np.sqrt(2), 12)]


@given(st.integers(1, 3000), st.floats(0.001, 1.0), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_sparse_feature_norm(n, rho, seed):
    if np.floor(rho * n + 0.5) < 1:
        with pytest.raises(DomainError):
            make_sparse_feature(n, rho, seed)
        return
    xi = make_sparse_feature(n, rho, seed)
    assert abs(xi.values @ xi.values - n) <= 1e-9 * n
    assert np.count_nonzero(xi.values) == int(np.floor(rho * n + 0.5))


@pytest.mark.parametrize("rho", [0.0, -0.1, 1.5])
def test_sparse_feature_bad_rho(rho):
    with pytest.raises(DomainError):
        make_sparse_feature(10, rho, 0)


def test_prior_point_gives_ones():
    xi = feature_from_prior(7, PriorMeasure.point(1.0), "iid", 0)
    np.testing.assert_allclose(xi.values, 1.0)


def test_prior_deterministic_alternates():
    prior = PriorMeasure(np.array([0.0, np.sqrt(2)]), np.array([0.5, 0.5]))
    xi = feature_from_prior(6, prior, "deterministic")
    np.testing.assert_allclose(xi.values, [0, np.sqrt(2)] * 3, atol=1e-15)


def test_prior_iid_fraction():
    xi = feature_from_prior(10_000, PriorMeasure.sparse(0.3), "iid", 5)
    frac = np.mean(xi.values != 0)
    assert abs(frac - 0.3) <= 0.02
    assert abs(xi.values @ xi.values - 10_000) < 1e-8


def test_prior_validation():
    with pytest.raises(ConfigError):
        PriorMeasure(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    with pytest.raises(ConfigError):
        PriorMeasure(np.array([1.0]), np.array([0.9]))


def test_observation_projection(rng):
    xi = make_sparse_feature(50, 0.3, 2)
    n = xi.n
    for c in (-1.0, 0.0, 2.5):
        y = sample_observation(xi, c, rng)
        a = y - xi.values * c / np.sqrt(n)
        assert abs(xi.values @ a) < 1e-12 * n
        assert abs(xi.values @ y / np.sqrt(n) - c) < 1e-12


def test_observation_noise_covariance():
    # Monte-Carlo covariance of a against I - xi xi^T / n
    xi = feature_from_prior(50, PriorMeasure.sparse(0.3), "deterministic")
    n, N = xi.n, 100_000
    rng = np.random.default_rng(9)
    g = rng.standard_normal((N, n))
    a = g - np.outer(g @ xi.values / n, xi.values)
    # check the construction used by sample_observation on a few draws
    for i in range(3):
        r = np.random.default_rng(100 + i)
        y = sample_observation(xi, 0.0, r)
        g0 = np.random.default_rng(100 + i).standard_normal(n)
        np.testing.assert_allclose(y, g0 - (xi.values @ g0 / n) * xi.values, atol=1e-14)
    cov = a.T @ a / N
    target = np.eye(n) - np.outer(xi.values, xi.values) / n
    # Var(a_i a_j) = S_ii S_jj + S_ij^2 for a Gaussian vector with covariance S
    d = np.diag(target)
    se = np.sqrt((np.outer(d, d) + target**2) / N)
    assert np.all(np.abs(cov - target) <= 5 * se + 1e-15)


def test_source_moments():
    assert source_moments(rademacher()) == (1.0, 1.0)
    m4, m6 = source_moments(three_atom())
    assert abs(m4 - 3) < 1e-12 and abs(m6 - 9) < 1e-12
    s = three_atom()
    assert abs(s.weights @ s.values) < 1e-12 and abs(s.weights @ s.values**2 - 1) < 1e-12
    m4, _ = source_moments(sparse_ternary(0.25))
    assert abs(m4 - 4.0) < 1e-12


def test_gaussian_matching_atoms():
    # 3-point Gauss-Hermite rule matches N(0,1) moments up to order 5, so m4 = 3
    x, w = np.polynomial.hermite_e.hermegauss(3)
    s = SourceDist.from_atoms(x, w / w.sum())
    assert abs(s.m4 - 3.0) < 1e-12
    x, w = np.polynomial.hermite_e.hermegauss(4)
    s = SourceDist.from_atoms(x, w / w.sum())
    assert abs(s.m4 - 3.0) < 1e-12 and abs(s.m6 - 15.0) < 1e-12


def test_source_validation():
    with pytest.raises(ConfigError):
        SourceDist(np.array([0.0, 2.0]), np.array([0.5, 0.5]))
    s = SourceDist.from_atoms([0.0, 2.0], [1, 1], standardize=True)
    assert abs(s.weights @ s.values) < 1e-12 and abs(s.weights @ s.values**2 - 1) < 1e-12


def test_source_sample_moments():
    s = sparse_ternary(0.3)
    N = 200_000
    c = s.sample(np.random.default_rng(4), N)
    assert abs(c.mean()) < 5 * np.sqrt(1 / N)
    assert abs(c.var() - 1) < 5 * np.sqrt((s.m4 - 1) / N)


def test_schedule():
    s = StepSchedule.constant(0.1)
    assert s.tau(123.0) == 0.1
    t = StepSchedule("table", 0.2, ((0.0, 0.2), (10.0, 0.1)))
    assert t.tau(5.0) == pytest.approx(0.15)
    assert t.tau(50.0) == pytest.approx(0.1)
    with pytest.raises(ConfigError):
        StepSchedule.constant(0.0)
    with pytest.raises(ConfigError):
        StepSchedule("table", 0.1, ((0.0, 0.1), (1.0, -0.1)))
