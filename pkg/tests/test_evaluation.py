import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from cgfn import evaluation as ev
from cgfn.envs import EuclidEnv
from cgfn.envs.quarterdisc import GRID_REWARD_MAX, grid_reward

UNIT_SQUARE = np.array([[0.0, 1.0], [0.0, 1.0]])


def test_uniform_target_accepts_everything(rng):
    x, rate = ev.rejection_sample(lambda p: np.zeros(len(p)), UNIT_SQUARE, 1.0, 1000, rng)
    assert rate == 1.0 and x.shape == (1000, 2)


def test_grid_acceptance_rate_matches_quadrature(rng):
    _, rate = ev.rejection_sample(lambda p: np.log(grid_reward(p)), UNIT_SQUARE, GRID_REWARD_MAX, 100_000, rng)
    m = 2000
    c = (np.arange(m) + 0.5) / m
    gx, gy = np.meshgrid(c, c)
    integral = grid_reward(np.stack([gx.ravel(), gy.ravel()], 1)).mean()
    assert rate == pytest.approx(integral / GRID_REWARD_MAX, abs=0.01)


def test_beta_target_mean(rng):
    a, b = 2.0, 5.0
    logpdf = lambda p: stats.beta.logpdf(p[:, 0], a, b)  # noqa: E731
    x, _ = ev.rejection_sample(logpdf, np.array([[0.0, 1.0]]), stats.beta.pdf(0.2, a, b), 50_000, rng)
    assert abs(x.mean() - a / (a + b)) < 3 * x.std() / np.sqrt(len(x))


def test_rejection_aborts_on_low_acceptance(rng):
    spike = lambda p: np.where(np.abs(p[:, 0] - 0.5) < 1e-7, 0.0, -np.inf)  # noqa: E731
    with pytest.raises(ev.EvaluationError):
        ev.rejection_sample(spike, UNIT_SQUARE, 1.0, 10, rng, chunk=50_000)
    with pytest.raises(ev.EvaluationError):
        ev.rejection_sample(lambda p: np.full(len(p), 2.0), UNIT_SQUARE, 1.0, 10, rng)


def test_pmf_jsd_hand_value():
    assert ev.jsd_from_pmfs([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.215762, abs=1e-6)


@given(arrays(np.float64, 6, elements=st.floats(0, 10)), arrays(np.float64, 6, elements=st.floats(0, 10)))
def test_pmf_jsd_symmetric_and_bounded(p, q):
    if p.sum() <= 0 or q.sum() <= 0:
        return
    a, b = ev.jsd_from_pmfs(p, q), ev.jsd_from_pmfs(q, p)
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 <= a <= np.log(2.0)


def test_identical_samples_have_small_jsd(rng):
    x = rng.random((5000, 2))
    assert ev.jsd_estimate(x, x.copy(), UNIT_SQUARE, res=100).jsd <= 0.01


def test_disjoint_clouds_reach_log_two(rng):
    a = 0.2 + 0.02 * rng.standard_normal((3000, 2))
    b = 0.8 + 0.02 * rng.standard_normal((3000, 2))
    assert ev.jsd_estimate(a, b, UNIT_SQUARE, res=100).jsd == pytest.approx(np.log(2.0), abs=0.02)


def test_single_kernel_is_gaussian():
    kde = ev.Kde(np.array([[0.0, 0.0], [0.0, 0.0]]), bandwidth=[0.5, 2.0])
    assert kde([[0.3, -1.0]])[0] == pytest.approx(stats.norm.pdf(0.3, 0, 0.5) * stats.norm.pdf(-1.0, 0, 2.0))


def test_grid_and_pointwise_evaluation_agree(rng):
    kde = ev.Kde(rng.standard_normal((500, 2)))
    xs, ys = np.linspace(-2, 2, 7), np.linspace(-1, 3, 5)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], 1)
    assert np.allclose(kde.evaluate_grid(xs, ys, chunk=77).ravel(), kde(pts), rtol=1e-12)


def test_scott_bandwidth_formula(rng):
    x = rng.standard_normal((1000, 2)) * [1.0, 3.0]
    assert np.allclose(ev.scott_bandwidth(x), x.std(0, ddof=1) * 1000 ** (-1 / 6))


def test_torus_kde_shift_invariant_and_normalised(rng):
    x = rng.vonmises(0.0, 2.0, (2000, 2)) % (2 * np.pi)
    xs, ys = ev.grid_axes(np.array([[0, 2 * np.pi]] * 2), 120)
    a = ev.Kde(x, torus=True).evaluate_grid(xs, ys)
    b = ev.Kde(x + 2 * np.pi, torus=True).evaluate_grid(xs, ys)
    assert np.allclose(a, b, rtol=1e-10)
    assert a.sum() * (2 * np.pi / 120) ** 2 == pytest.approx(1.0, abs=1e-3)


def test_grid_axes_are_cell_centres():
    xs, ys = ev.grid_axes(np.array([[0.0, 1.0], [-1.0, 1.0]]), 4)
    assert np.allclose(xs, [0.125, 0.375, 0.625, 0.875]) and np.allclose(ys, [-0.75, -0.25, 0.25, 0.75])


def test_bounds_of_unit_ratios():
    rep = ev.bounds_from_log_weights(np.zeros(3))
    assert rep.b == 0.0 and rep.b_rw == 0.0 and rep.k == 3


def test_non_finite_ratios_excluded():
    rep = ev.bounds_from_log_weights(np.array([0.0, -np.inf, np.log(2.0)]))
    assert rep.excluded == 1 and rep.b_rw == pytest.approx(np.log(1.5))
    with pytest.raises(ev.EvaluationError):
        ev.bounds_from_log_weights(np.array([-np.inf]))


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-50, 50)))
def test_jensen_ordering(log_w):
    rep = ev.bounds_from_log_weights(log_w)
    assert rep.b <= rep.b_rw + 1e-12 * max(1.0, abs(rep.b_rw))


def test_untrained_sampler_has_negative_b(rng):
    env = EuclidEnv(T=20, hidden=16, t_features=8)
    rep = ev.logz_bounds(env, env.init_model(rng), 1000, rng, chunk=300)
    assert rep.k == 1000 and rep.b < -1.0 and rep.b <= rep.b_rw


def test_jsd_swap_symmetry(rng):
    a = rng.beta(2.0, 5.0, (4000, 2))
    b = rng.random((4000, 2))
    ab = ev.jsd_estimate(a, b, UNIT_SQUARE, res=80).jsd
    ba = ev.jsd_estimate(b, a, UNIT_SQUARE, res=80).jsd
    assert abs(ab - ba) < 0.005
