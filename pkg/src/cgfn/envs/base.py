"""Shared environment contract, trajectory containers and rollout driver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad


class ContractError(ValueError):
    """An environment operation was called outside its domain."""


class PolicyDiverged(FloatingPointError):
    """A policy network produced non-finite outputs during a rollout."""


SOURCE, INTERIOR, SINK = "source", "interior", "sink"


@dataclass
class Trajectory:
    """One complete trajectory ``s0, s1, ..., s_n, sink``.

    ``log_pf[t]`` is the forward log-density of ``s_t -> s_{t+1}`` for
    ``t = 0..n`` (the last entry is the move into the sink).  ``log_pb[t]``
    is the backward log-density of ``s_{t+1} -> s_t`` for ``t = 0..n-1``;
    the step back into the source is deterministic and stored as 0.
    """

    states: list
    log_pf: np.ndarray
    log_pb: np.ndarray
    log_r: float | None = None

    @property
    def n(self):
        return len(self.states) - 1

    @property
    def tags(self):
        return [SOURCE] + [INTERIOR] * self.n + [SINK]


def trajectory_log_terms(traj):
    """(sum log p_F, sum log p_B, log r) of a complete trajectory."""
    if traj.log_r is None:
        raise ContractError("trajectory has no terminal reward")
    if len(traj.log_pf) != traj.n + 1 or len(traj.log_pb) != traj.n:
        raise ContractError(
            f"trajectory with {traj.n} interior states needs {traj.n + 1} forward and {traj.n} backward terms"
        )
    return float(np.sum(traj.log_pf)), float(np.sum(traj.log_pb)), float(traj.log_r)


@dataclass
class TrajectoryBatch:
    """A batch of trajectories stored as padded arrays.

    ``states[b, t]`` is ``s_t`` for ``t <= lengths[b]``; padding repeats the
    terminal state.  ``log_pf``/``log_pb`` follow the per-step layout of
    :class:`Trajectory` with zeros in the padding.  ``log_pi`` is the
    log-density under the sampling policy (equal to the summed ``log_pf`` on
    policy).  ``extras`` carries env-specific action records.
    """

    states: np.ndarray
    lengths: np.ndarray
    log_pf: np.ndarray
    log_pb: np.ndarray
    log_r: np.ndarray
    log_pi: np.ndarray
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.lengths)

    @property
    def terminal_states(self):
        return self.states[np.arange(len(self)), self.lengths]

    def sums(self):
        return self.log_pf.sum(1), self.log_pb.sum(1), self.log_r

    def trajectory(self, b):
        n = int(self.lengths[b])
        return Trajectory(
            states=[self.states[b, t] for t in range(n + 1)],
            log_pf=self.log_pf[b, : n + 1].copy(),
            log_pb=self.log_pb[b, :n].copy(),
            log_r=float(self.log_r[b]),
        )


@dataclass
class LogTerms:
    """Differentiable per-trajectory aggregates used by the trajectory-level losses."""

    log_pf: ad.Tensor  # (B,)
    log_pb: ad.Tensor  # (B,)
    log_r: np.ndarray  # (B,)


@dataclass
class TransitionTerms:
    """Differentiable per-transition terms for detailed balance plus terminal reward matching.

    Transition ``k`` goes ``s -> s'`` inside trajectory ``traj[k]``.
    """

    log_u_s: ad.Tensor
    log_pf: ad.Tensor
    log_u_next: ad.Tensor
    log_pb: ad.Tensor
    traj: np.ndarray
    # terminal reward matching, one row per trajectory
    log_u_x: ad.Tensor
    log_pf_stop: ad.Tensor
    log_r: np.ndarray


def check_finite(name, *arrays):
    for a in arrays:
        v = a.value if isinstance(a, ad.Tensor) else np.asarray(a)
        if not np.all(np.isfinite(v)):
            raise PolicyDiverged(f"non-finite {name} during rollout")


class Environment:
    """Measurable pointed graph with policies supplied by a model.

    Subclasses define:

    ``max_traj_len``
        bound N on the number of non-source states of any trajectory.
    ``rollout(model, n, rng, eps)``
        sample ``n`` trajectories with exploration ``eps``; densities are
        recorded under the unperturbed model.
    ``log_terms(model, batch)``
        recompute the per-trajectory sums of a batch as differentiable
        tensors (for training).
    ``reward_logdensity(x)``
        log-density of the reward w.r.t. the reference measure.
    """

    name = "abstract"
    max_traj_len = 0
    dim = 0

    def init_model(self, rng, **kwargs):
        raise NotImplementedError

    def rollout(self, model, n, rng, eps=0.0):
        raise NotImplementedError

    def log_terms(self, model, batch):
        raise NotImplementedError

    def transition_terms(self, model, batch):
        raise ContractError(f"{self.name} does not provide detailed-balance terms")

    def reward_logdensity(self, x):
        raise NotImplementedError

    def is_terminating(self, s):
        raise NotImplementedError

    def exploration_perturb(self, params, eps, t=None):
        raise NotImplementedError
