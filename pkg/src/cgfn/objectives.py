"""Balance losses (trajectory, detailed, flow, reward matching) and KL baselines.

The elementwise functions work on floats, arrays or tensors alike.  The batch
reductions take the differentiable terms produced by an environment and
return ``(loss, info)`` where ``loss`` is a scalar tensor and ``info`` holds
plain-number diagnostics.  Trajectories whose terminal reward is zero
(``log r = -inf``) are dropped from the batch mean and counted in
``info["skipped"]``.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from . import autodiff as ad

KINDS = ("tb", "db", "fm", "rkl", "fkl")


# elementwise losses -------------------------------------------------------------


def tb_loss(log_z, log_pf, log_pb, log_r):
    """(log Z + sum log p_F - log r - sum log p_B)^2."""
    return ad.square(ad.as_tensor(log_z) + log_pf - log_r - log_pb)


def db_loss(log_u_s, log_pf, log_u_next, log_pb):
    """(log u(s) + log p_F(s, s') - log u(s') - log p_B(s', s))^2."""
    return ad.square(ad.as_tensor(log_u_s) + log_pf - log_u_next - log_pb)


def rm_loss(log_u_x, log_pf_stop, log_r):
    """(log u(x) + log p_F(x, sink) - log r(x))^2."""
    return ad.square(ad.as_tensor(log_u_x) + log_pf_stop - log_r)


def fm_loss(log_inflow, log_u):
    """(log of the parent integral - log u(s'))^2."""
    return ad.square(ad.as_tensor(log_inflow) - log_u)


# masking ------------------------------------------------------------------------


def _valid(log_r):
    log_r = np.asarray(log_r, dtype=np.float64)
    valid = np.isfinite(log_r)
    return valid, np.where(valid, log_r, 0.0)


def _masked_mean(per_traj, valid):
    count = int(valid.sum())
    if count == 0:
        return ad.Tensor(0.0) * per_traj.sum()
    return (per_traj * valid.astype(np.float64)).sum() * (1.0 / count)


# batch objectives -----------------------------------------------------------------


def trajectory_balance(log_z, terms):
    valid, log_r = _valid(terms.log_r)
    per = tb_loss(log_z, terms.log_pf, terms.log_pb, log_r)
    return _masked_mean(per, valid), {"skipped": int((~valid).sum())}


def detailed_balance(terms, alpha=1.0):
    """Per trajectory: sum of DB over its moves + alpha * RM at its terminal state."""
    valid, log_r = _valid(terms.log_r)
    n = len(valid)
    db = db_loss(terms.log_u_s, terms.log_pf, terms.log_u_next, terms.log_pb)
    per = ad.segment_sum(db, terms.traj, n) + alpha * rm_loss(terms.log_u_x, terms.log_pf_stop, log_r)
    return _masked_mean(per, valid), {"skipped": int((~valid).sum())}


def flow_matching(log_inflow, log_u, traj, terms, alpha=1.0):
    """Per trajectory: sum of FM over its non-source states + alpha * RM."""
    valid, log_r = _valid(terms.log_r)
    n = len(valid)
    per = ad.segment_sum(fm_loss(log_inflow, log_u), traj, n)
    per = per + alpha * rm_loss(terms.log_u_x, terms.log_pf_stop, log_r)
    return _masked_mean(per, valid), {"skipped": int((~valid).sum())}


def normalized_weights(log_w):
    """Self-normalised importance weights and their effective sample size."""
    log_w = np.asarray(log_w, dtype=np.float64)
    w = np.exp(log_w - special.logsumexp(log_w))
    return w, float(1.0 / np.sum(w * w))


def reverse_kl_coefficients(terms, log_pi=None):
    """Detached weights and advantages of the reverse-KL score-function surrogate.

    On policy (``log_pi`` is None) every trajectory has weight 1/B; off
    policy the weights are P_F/pi, self-normalised.  The baseline is the
    weighted mean of the per-trajectory objective log P_F - log r - log P_B.
    """
    valid, log_r = _valid(terms.log_r)
    idx = np.flatnonzero(valid)
    f = terms.log_pf.value - log_r - terms.log_pb.value
    w = np.zeros(len(valid))
    if log_pi is None:
        w[idx] = 1.0 / max(len(idx), 1)
        ess = float(len(idx))
    elif idx.size:
        w[idx], ess = normalized_weights(terms.log_pf.value[idx] - np.asarray(log_pi)[idx])
    else:
        ess = 0.0
    baseline = float(np.sum(w[idx] * f[idx])) if idx.size else 0.0
    adv = np.where(valid, f - baseline, 0.0)
    info = {"skipped": int((~valid).sum()), "ess": ess, "flagged": ess < 2.0, "kl": baseline}
    return w, adv, info


def reverse_kl_surrogate(terms, w, adv):
    """sum_i w_i [adv_i log P_F(tau_i) + log P_F(tau_i) - log P_B(tau_i)] with w, adv held fixed."""
    return (terms.log_pf * (w * adv)).sum() + ((terms.log_pf - terms.log_pb) * w).sum()


def reverse_kl(terms, log_pi=None):
    """Score-function surrogate for grad E_{P_F}[log P_F - log r - log P_B].

    The surrogate's value is not the KL; ``info["kl"]`` carries the estimate.
    """
    w, adv, info = reverse_kl_coefficients(terms, log_pi)
    return reverse_kl_surrogate(terms, w, adv), info


def forward_kl(terms, log_pi):
    """Weighted negative log-likelihood sum_i w_i * (-log P_F(tau_i)).

    Weights are proportional to r(x) P_B(tau | x) / pi(tau), self-normalised.
    """
    valid, log_r = _valid(terms.log_r)
    idx = np.flatnonzero(valid)
    w = np.zeros(len(valid))
    ess = 0.0
    if idx.size:
        log_w = log_r[idx] + terms.log_pb.value[idx] - np.asarray(log_pi)[idx]
        w[idx], ess = normalized_weights(log_w)
    loss = -(terms.log_pf * w).sum()
    return loss, {"skipped": int((~valid).sum()), "ess": ess, "flagged": ess < 2.0}


def objective(kind, env, model, batch, alpha=1.0, fm_nodes=64, off_policy=False):
    """Composite training loss of ``kind`` for a batch sampled from ``env``.

    ``off_policy`` makes the reverse-KL baseline importance-weight by the
    recorded sampling density ``batch.log_pi``.
    """
    if kind == "tb":
        return trajectory_balance(model.log_z, env.log_terms(model, batch))
    if kind == "db":
        return detailed_balance(env.transition_terms(model, batch), alpha)
    if kind == "fm":
        if fm_nodes < 16:
            raise ValueError("flow matching needs at least 16 quadrature nodes")
        inflow, log_u, traj = env.fm_terms(model, batch, fm_nodes)
        return flow_matching(inflow, log_u, traj, env.transition_terms(model, batch), alpha)
    if kind == "rkl":
        return reverse_kl(env.log_terms(model, batch), batch.log_pi if off_policy else None)
    if kind == "fkl":
        return forward_kl(env.log_terms(model, batch), batch.log_pi)
    raise ValueError(f"unknown objective {kind!r}; choose from {KINDS}")
