import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from cgfn import autodiff as ad
from cgfn import objectives as obj
from cgfn import oracle
from cgfn.autodiff import Parameter, Tape, backprop
from cgfn.envs.base import LogTerms, TransitionTerms

from conftest import directional_fd, rel_err

R_TOY = np.array([1.0, 3.0])


def test_tb_examples():
    assert obj.tb_loss(np.log(4.0), np.log(0.25), 0.0, 0.0).item() == pytest.approx(0.0, abs=1e-30)
    assert obj.tb_loss(0.0, np.log(0.5), 0.0, 0.0).item() == pytest.approx(0.48045, abs=1e-5)


def test_db_examples():
    assert obj.db_loss(0.3, -1.2, 0.3, -1.2).item() == 0.0
    assert obj.db_loss(0.0, np.log(0.5), np.log(2.0), np.log(0.25)).item() == pytest.approx(0.0, abs=1e-30)
    assert obj.rm_loss(np.log(2.0), np.log(0.5), 0.0).item() == pytest.approx(0.0, abs=1e-30)


def oracle_instance(seed, n=8):
    rng = np.random.default_rng(seed)
    dag = oracle.random_dag(n, rng)
    k = oracle.kernels_from_dag(dag)
    flow = oracle.flow_from_backward(dag, oracle.random_backward(dag, rng))
    return dag, k, oracle.density_view(dag, k, flow)


@pytest.mark.parametrize("seed", range(5))
def test_losses_vanish_on_oracle_flow(seed):
    dag, k, view = oracle_instance(seed)
    for path in oracle.enumerate_trajectories(dag):
        lpf, lpb, lr = view.trajectory_terms(path)
        assert obj.tb_loss(view.log_z, lpf, lpb, lr).item() <= 1e-20
    for u, v in dag.edges:
        if v == dag.sink:
            assert obj.rm_loss(view.log_u[u], view.log_pf[u, v], view.log_r[u]).item() <= 1e-20
        else:
            assert obj.db_loss(view.log_u[u], view.log_pf[u, v], view.log_u[v], view.log_pb[v, u]).item() <= 1e-20


@pytest.mark.parametrize("seed", range(5))
def test_flow_matching_vanishes_on_oracle_flow(seed):
    dag, k, view = oracle_instance(seed)
    for v in range(1, dag.n - 1):
        par = dag.parents(v)
        # inflow density: sum over parents of u(s) p_F(s, v) against the backward reference kernel
        log_in = special.logsumexp([view.log_u[s] + view.log_pf[s, v] + np.log(k.kappa_b[v, s]) for s in par])
        assert obj.fm_loss(log_in, view.log_u[v]).item() <= 1e-20


def test_single_parent_fm_reduces_to_db_residual():
    # one deterministic parent: inflow = u(s) p_F(s, s'), so FM equals DB with p_B = 1
    a = obj.fm_loss(0.2 + np.log(0.3), -0.4).item()
    assert a == pytest.approx(obj.db_loss(0.2, np.log(0.3), -0.4, 0.0).item())


def test_minus_inf_reward_is_skipped():
    terms = LogTerms(ad.Tensor(np.array([-1.0, -2.0])), ad.Tensor(np.zeros(2)), np.array([0.0, -np.inf]))
    loss, info = obj.trajectory_balance(0.5, terms)
    assert info["skipped"] == 1 and loss.item() == pytest.approx(0.25)


def test_detailed_balance_sums_per_trajectory():
    z = lambda *v: ad.Tensor(np.array(v, dtype=float))  # noqa: E731
    terms = TransitionTerms(
        log_u_s=z(0.0, 1.0, 0.0), log_pf=z(0.0, 0.0, 0.0), log_u_next=z(1.0, 0.0, 2.0), log_pb=z(0.0, 0.0, 0.0),
        traj=np.array([0, 0, 1]), log_u_x=z(0.0, 0.0), log_pf_stop=z(0.0, 0.0), log_r=np.array([1.0, 0.0]),
    )
    loss, _ = obj.detailed_balance(terms, alpha=0.5)
    # trajectory 0: 1 + 1 + 0.5 * 1; trajectory 1: 4 + 0
    assert loss.item() == pytest.approx((2.5 + 4.0) / 2)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.randoms())
def test_tb_batch_order_invariant(values, rnd):
    pf = np.array(values)
    pb = pf[::-1] * 0.3
    r = np.cos(pf)
    perm = list(range(len(pf)))
    rnd.shuffle(perm)
    a, _ = obj.trajectory_balance(0.7, LogTerms(ad.Tensor(pf), ad.Tensor(pb), r))
    b, _ = obj.trajectory_balance(0.7, LogTerms(ad.Tensor(pf[perm]), ad.Tensor(pb[perm]), r[perm]))
    assert a.item() == pytest.approx(b.item(), rel=1e-12, abs=1e-300)


# Bernoulli toy: one move to terminal a (prob sigmoid(theta)) or b, rewards (1, 3) ---------


def toy_terms(theta, pick_a):
    lp = ad.where(pick_a, ad.log_sigmoid(theta), ad.log_sigmoid(-theta))
    return LogTerms(lp, ad.Tensor(np.zeros(len(pick_a))), np.log(np.where(pick_a, R_TOY[0], R_TOY[1])))


def analytic_kl_grad(t):
    p = special.expit(t)
    return p * (1 - p) * ((np.log(p) - np.log(R_TOY[0])) - (np.log(1 - p) - np.log(R_TOY[1])))


def batch_grads(kind, t, rng, batches, size, log_z=0.0):
    out = []
    for _ in range(batches):
        theta = Parameter(t)
        pick = rng.random(size) < special.expit(t)
        with Tape() as tape:
            terms = toy_terms(theta, pick)
            if kind == "rkl":
                loss, _ = obj.reverse_kl(terms)
            else:
                loss, _ = obj.trajectory_balance(log_z, terms)
        out.append(backprop(tape, loss, [theta])[0])
    return np.array(out)


def test_reverse_kl_gradient_matches_analytic(rng):
    t = 0.8
    g = batch_grads("rkl", t, rng, 100, 1000)
    se = g.std(ddof=1) / np.sqrt(len(g))
    assert abs(g.mean() - analytic_kl_grad(t)) < 3 * se


def test_reverse_kl_stationary_at_target(rng):
    g = batch_grads("rkl", special.logit(0.25), rng, 50, 4000)
    assert abs(g.mean()) < 3 * g.std(ddof=1) / np.sqrt(len(g)) + 1e-12
    assert abs(analytic_kl_grad(special.logit(0.25))) < 1e-15


def test_on_policy_tb_gradient_is_twice_kl_gradient(rng):
    t = -0.4
    g_tb = batch_grads("tb", t, rng, 100, 1000, log_z=0.3)
    g_kl = batch_grads("rkl", t, rng, 100, 1000)
    se = np.hypot(g_tb.std(ddof=1), 2 * g_kl.std(ddof=1)) / 10.0
    assert abs(g_tb.mean() - 2 * g_kl.mean()) < 3 * se
    assert np.sign(g_tb.mean()) == np.sign(analytic_kl_grad(t))


def test_off_policy_reverse_kl_uses_weights(rng):
    t = 0.8
    theta = Parameter(t)
    pick = rng.random(200_000) < 0.5
    with Tape() as tape:
        terms = toy_terms(theta, pick)
        loss, info = obj.reverse_kl(terms, log_pi=np.full(len(pick), np.log(0.5)))
    g = backprop(tape, loss, [theta])[0]
    assert info["ess"] > 1000 and not info["flagged"]
    assert g == pytest.approx(analytic_kl_grad(t), abs=0.01)


def test_forward_kl_perfect_sampler_weights_equal():
    log_pf = np.log([0.25, 0.75, 0.25])
    terms = LogTerms(ad.Tensor(log_pf), ad.Tensor(np.zeros(3)), np.log([1.0, 3.0, 1.0]))
    # pi = P_F = R P_B / Z makes every ratio equal
    w, ess = obj.normalized_weights(terms.log_r + 0.0 - log_pf)
    assert np.allclose(w, 1 / 3) and ess == pytest.approx(3.0)


def test_forward_kl_uniform_weights_is_mean_nll():
    log_pf = ad.Tensor(np.log([0.2, 0.5, 0.9]))
    terms = LogTerms(log_pf, ad.Tensor(np.zeros(3)), np.zeros(3))
    loss, _ = obj.forward_kl(terms, np.zeros(3))
    assert loss.item() == pytest.approx(-np.mean(np.log([0.2, 0.5, 0.9])))


def test_forward_kl_minimiser_matches_target(rng):
    theta = Parameter(0.0)
    pick = rng.random(100_000) < 0.5
    log_pi = np.full(len(pick), np.log(0.5))
    for _ in range(3000):
        with Tape() as tape:
            loss, _ = obj.forward_kl(toy_terms(theta, pick), log_pi)
        theta.value = theta.value - 0.5 * backprop(tape, loss, [theta])[0]
    # weighted MLE: empirical reward share of a
    share = pick.sum() * 1.0 / (pick.sum() * 1.0 + (~pick).sum() * 3.0)
    assert special.expit(theta.item()) == pytest.approx(share, abs=1e-4)
    assert special.expit(theta.item()) == pytest.approx(0.25, abs=1e-2)


def test_gradients_of_composites_match_fd(rng):
    x = Parameter(rng.standard_normal(6))
    lz = Parameter(0.3)
    traj = np.array([0, 0, 1, 2, 2, 2])

    def loss():
        t = TransitionTerms(ad.sin(x), x * 0.5, ad.cos(x), x * x * 0.1, traj,
                            x[np.array([0, 2, 3])], x[np.array([1, 2, 5])] * 0.2, np.array([0.1, -0.2, 0.5]))
        db, _ = obj.detailed_balance(t, 0.7)
        fm, _ = obj.flow_matching(ad.tanh(x), x * 0.3, traj, t, 1.3)
        tb, _ = obj.trajectory_balance(lz, LogTerms(x[np.array([0, 1, 2])], x[np.array([3, 4, 5])], np.zeros(3)))
        return db + fm + tb

    a, n = directional_fd(loss, [x, lz], rng)
    assert rel_err(a, n) < 1e-6


def test_objective_dispatch_errors(rng):
    with pytest.raises(ValueError):
        obj.objective("bogus", None, None, None)
    with pytest.raises(ValueError):
        obj.objective("fm", None, None, None, fm_nodes=8)
