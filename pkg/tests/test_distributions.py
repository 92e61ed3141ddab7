import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special, stats

from cgfn import autodiff as ad
from cgfn import distributions as dist
from cgfn.autodiff import Parameter

from conftest import directional_fd, rel_err


def test_beta_22_at_half():
    p = dist.beta_mixture([1.0], [2.0], [2.0])
    assert dist.log_density(p, np.array([0.5])).item() == pytest.approx(np.log(1.5))


def test_beta_matches_scipy_on_interval(rng):
    w, a, b = np.array([0.3, 0.7]), np.array([0.4, 3.0]), np.array([2.5, 0.8])
    p = dist.beta_mixture(w, a, b, lo=1.0, hi=3.0)
    x = rng.uniform(1.0, 3.0, size=20)
    got = np.array([dist.log_density(p, np.array([v])).item() for v in x])
    ref = np.log(sum(wk * stats.beta.pdf(x, ak, bk, loc=1.0, scale=2.0) for wk, ak, bk in zip(w, a, b)))
    assert np.allclose(got, ref, rtol=1e-12)


def test_beta_outside_support_is_minus_inf():
    p = dist.beta_mixture([1.0], [2.0], [2.0])
    assert dist.log_density(p, np.array([1.5])).item() == -np.inf


def test_beta_validation():
    with pytest.raises(ValueError):
        dist.beta_mixture([0.5, 0.6], [1, 1], [1, 1])
    with pytest.raises(ValueError):
        dist.beta_mixture([1.0], [0.05], [1.0])
    with pytest.raises(ValueError):
        dist.beta_mixture([1.0], [1.0], [1.0], lo=1.0, hi=1.0)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@given(
    st.floats(0.1, 5.1), st.floats(0.1, 5.1), st.floats(0.1, 5.1), st.floats(0.1, 5.1), st.floats(0.05, 0.95)
)
def test_beta_mixture_integrates_to_one(a1, b1, a2, b2, w):
    p = dist.beta_mixture([w, 1 - w], [a1, a2], [b1, b2], lo=-0.5, hi=0.7)

    def f(x):
        return np.exp(dist.log_density(p, np.array([x])).item())

    total = sum(integrate.quad(f, lo, hi, limit=200)[0] for lo, hi in ((-0.5, 0.1), (0.1, 0.7)))
    assert total == pytest.approx(1.0, abs=1e-4)


def test_beta_sample_moments(rng):
    p = dist.beta_mixture(np.tile([0.25, 0.75], (200_000, 1)), np.tile([2.0, 0.5], (200_000, 1)),
                          np.tile([5.0, 0.5], (200_000, 1)), lo=0.0, hi=2.0)
    x = dist.sample(p, rng)
    mean = 2.0 * (0.25 * 2 / 7 + 0.75 * 0.5)
    assert abs(x.mean() - mean) < 3 * x.std() / np.sqrt(x.size)
    assert x.min() >= 2.0 * dist.BETA_SAMPLE_CLIP and x.max() <= 2.0 * (1 - dist.BETA_SAMPLE_CLIP)


def test_beta_raw_parametrisation_bounds(rng):
    raw = ad.Tensor(rng.standard_normal((10, 6)) * 20)
    p = dist.beta_mixture_from_raw(raw, 0.0, 1.0)
    assert np.all(p.alpha.value >= dist.BETA_MIN) and np.all(p.alpha.value <= dist.BETA_MAX)
    assert np.allclose(p.weights.sum(1), 1.0)


def test_beta_density_gradient(rng):
    raw = Parameter(rng.standard_normal((6, 6)))
    lo, hi = rng.uniform(0, 1, 6), rng.uniform(1.5, 2, 6)
    x = rng.uniform(lo, hi)
    a, n = directional_fd(lambda: dist.log_density(dist.beta_mixture_from_raw(raw, lo, hi), x).sum(), [raw], rng)
    assert rel_err(a, n) < 1e-6


def test_gaussian_log_density():
    p = dist.diag_gaussian(np.zeros((1, 2)), np.ones((1, 2)))
    assert dist.log_density(p, np.zeros((1, 2))).item() == pytest.approx(-np.log(2 * np.pi))
    p1 = dist.diag_gaussian(np.zeros((1, 1)), np.ones((1, 1)))
    assert dist.log_density(p1, np.array([1.0])).item() == pytest.approx(-0.5 * np.log(2 * np.pi) - 0.5)
    with pytest.raises(ValueError):
        dist.diag_gaussian(np.zeros((1, 1)), np.zeros((1, 1)))


def test_gaussian_sample_moments(rng):
    p = dist.diag_gaussian(np.tile([1.0, -2.0], (100_000, 1)), np.tile([4.0, 0.25], (100_000, 1)))
    x = dist.sample(p, rng)
    assert np.allclose(x.mean(0), [1.0, -2.0], atol=0.02)
    assert np.allclose(x.var(0), [4.0, 0.25], rtol=0.02)


@pytest.mark.parametrize("k", [1e-8, 0.3, 2.0, 14.9, 15.1, 60.0, 700.0])
def test_log_i0_against_scipy(k):
    ref = np.log(special.i0e(k)) + k
    assert dist.log_i0(np.array([k]))[0] == pytest.approx(ref, rel=1e-12, abs=1e-13)
    assert dist.bessel_ratio(np.array([k]))[0] == pytest.approx(special.i1e(k) / special.i0e(k), rel=1e-11, abs=1e-14)


def test_von_mises_matches_scipy(rng):
    p = dist.von_mises_mixture([0.2, 0.8], [1.0, 4.0], [0.5, 8.0])
    x = rng.uniform(0, 2 * np.pi, 10)
    got = np.array([dist.log_density(p, np.array([v])).item() for v in x])
    ref = np.log(0.2 * stats.vonmises.pdf(x, 0.5, loc=1.0) + 0.8 * stats.vonmises.pdf(x, 8.0, loc=4.0))
    assert np.allclose(got, ref, rtol=1e-10)


def test_von_mises_zero_concentration_is_uniform():
    p = dist.von_mises_mixture([1.0], [2.0], [1e-12])
    assert dist.log_density(p, np.array([0.3])).item() == pytest.approx(-np.log(2 * np.pi))


def test_von_mises_periodic_and_normalised():
    p = dist.von_mises_mixture([0.5, 0.5], [0.0, 3.0], [3.0, 0.7])
    f = lambda v: np.exp(dist.log_density(p, np.array([v])).item())  # noqa: E731
    assert f(1.2) == pytest.approx(f(1.2 + 2 * np.pi), rel=1e-12)
    assert integrate.quad(f, 0, 2 * np.pi)[0] == pytest.approx(1.0, abs=1e-10)


def test_von_mises_gradient_through_bessel(rng):
    raw = Parameter(rng.standard_normal((4, 6)))
    x = rng.uniform(0, 2 * np.pi, 4)
    a, n = directional_fd(lambda: dist.log_density(dist.von_mises_mixture_from_raw(raw), x).sum(), [raw], rng)
    assert rel_err(a, n) < 1e-6


def test_von_mises_samples_wrapped(rng):
    p = dist.von_mises_mixture(np.tile([1.0], (50_000, 1)), np.tile([0.1], (50_000, 1)), np.tile([4.0], (50_000, 1)))
    x = dist.sample(p, rng)
    assert x.min() >= 0 and x.max() < 2 * np.pi
    circ_mean = np.angle(np.exp(1j * x).mean())
    assert abs(circ_mean - 0.1) < 0.01


def test_wrapped_distance():
    assert dist.wrapped_distance(0.1, 2 * np.pi - 0.1) == pytest.approx(0.2)
    assert dist.wrapped_distance(0.0, np.pi) == pytest.approx(np.pi)


def test_uniform_beta_log_density_zero(rng):
    p = dist.beta_mixture([1.0], [1.0], [1.0])
    assert dist.log_density(p, np.array([rng.uniform()])).item() == pytest.approx(0.0, abs=1e-14)


def test_uniform_beta_sample_mean(rng):
    n = 100_000
    x = dist.sample(dist.beta_mixture(np.ones((n, 1)), np.ones((n, 1)), np.ones((n, 1))), rng)
    assert abs(x.mean() - 0.5) < 0.01


def test_gaussian_mean3_var4(rng):
    n = 100_000
    x = dist.sample(dist.diag_gaussian(np.full((n, 1), 3.0), np.full((n, 1), 4.0)), rng)[:, 0]
    assert abs(x.mean() - 3.0) < 3 * 2.0 / np.sqrt(n)
    # var of the sample variance for a Gaussian is 2 sigma^4 / (n-1)
    assert abs(x.var(ddof=1) - 4.0) < 3 * np.sqrt(2 * 16.0 / (n - 1))


def test_von_mises_concentrated_circular_mean(rng):
    n = 20_000
    p = dist.von_mises_mixture(np.ones((n, 1)), np.full((n, 1), np.pi), np.full((n, 1), 50.0))
    x = dist.sample(p, rng)
    assert dist.wrapped_distance(np.angle(np.exp(1j * x).mean()) % (2 * np.pi), np.pi) < 0.05


def test_beta_samples_match_density(rng):
    n = 100_000
    p = dist.beta_mixture(np.tile([0.4, 0.6], (n, 1)), np.tile([2.0, 4.0], (n, 1)), np.tile([3.0, 2.0], (n, 1)))
    x = dist.sample(p, rng)
    # interior grid keeps the kernel estimate clear of boundary bias at 0 and 1
    grid = np.linspace(0.05, 0.95, 200)
    kde = stats.gaussian_kde(x)(grid)
    q = dist.beta_mixture([0.4, 0.6], [2.0, 4.0], [3.0, 2.0])
    dens = np.exp([dist.log_density(q, np.array([g])).item() for g in grid])
    assert np.max(np.abs(kde - dens)) < 0.05


def test_von_mises_samples_match_density(rng):
    n = 100_000
    p = dist.von_mises_mixture(np.tile([0.3, 0.7], (n, 1)), np.tile([1.0, 4.0], (n, 1)), np.tile([2.0, 5.0], (n, 1)))
    x = dist.sample(p, rng)
    grid = np.linspace(0.0, 2 * np.pi, 200, endpoint=False)
    # periodic images of the samples make the Gaussian estimate wrap around the circle
    kde = stats.gaussian_kde(x)
    wrapped = sum(kde(grid + s) for s in (-2 * np.pi, 0.0, 2 * np.pi))
    q = dist.von_mises_mixture([0.3, 0.7], [1.0, 4.0], [2.0, 5.0])
    dens = np.exp([dist.log_density(q, np.array([g])).item() for g in grid])
    assert np.max(np.abs(wrapped - dens)) < 0.05
