"""Ten-step walk on the torus [0, 2*pi)^2 with von Mises mixture policies.

Each move draws a new pair of angles from two independent five-component von
Mises mixtures, conditioned on the current angles and the step index.  The
walk stops after exactly ``T`` moves.  Densities are taken with respect to
Lebesgue measure on the torus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import distributions as dist
from ..autodiff import Parameter
from ..nn import ConfigError, Mlp, MlpSpec
from .base import ContractError, Environment, LogTerms, TrajectoryBatch, check_finite

TWO_PI = 2.0 * np.pi
LOG_UNIFORM = -2.0 * np.log(TWO_PI)


def torus_reward_logdensity(angles):
    """3 log(sin 3psi + cos 2phi + 2); -inf on the zero set."""
    a = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    base = np.sin(3.0 * a[:, 0]) + np.cos(2.0 * a[:, 1]) + 2.0
    with np.errstate(divide="ignore"):
        return 3.0 * np.log(np.maximum(base, 0.0))


TORUS_REWARD_MAX = 64.0


def angle_features(angles, harmonics=5):
    """sin(k psi), cos(k psi), sin(k phi), cos(k phi) for k = 1..harmonics."""
    a = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    k = np.arange(1, harmonics + 1)
    psi = a[:, :1] * k
    phi = a[:, 1:2] * k
    return np.concatenate([np.sin(psi), np.cos(psi), np.sin(phi), np.cos(phi)], axis=1)


@dataclass
class TorusModel:
    pf_net: Mlp
    pb_net: Mlp
    log_z: Parameter

    @property
    def policy_params(self):
        return [*self.pf_net.params, *self.pb_net.params]

    @property
    def logz_params(self):
        return [self.log_z]

    @property
    def params(self):
        return self.policy_params + self.logz_params


class TorusEnv(Environment):
    name = "torus"
    dim = 2

    def __init__(self, T=10, hidden=(512, 512, 512, 512), components=5, harmonics=5):
        if T < 1:
            raise ConfigError("need T >= 1")
        self.T = int(T)
        self.hidden = tuple(int(h) for h in hidden)
        self.components = int(components)
        self.harmonics = int(harmonics)
        self.max_traj_len = self.T
        self.n_in = 4 * self.harmonics + self.T + 1

    def init_model(self, rng):
        widths = [self.n_in, *self.hidden, 6 * self.components]
        return TorusModel(
            pf_net=Mlp(MlpSpec(widths), rng, prefix="pf"),
            pb_net=Mlp(MlpSpec(widths), rng, prefix="pb"),
            log_z=Parameter(0.0, name="log_z"),
        )

    def features(self, angles, t):
        t = np.asarray(t, dtype=int)
        onehot = np.zeros((len(t), self.T + 1))
        onehot[np.arange(len(t)), t] = 1.0
        return np.concatenate([angle_features(angles, self.harmonics), onehot], axis=1)

    def _mixtures(self, raw):
        k = 3 * self.components
        return dist.von_mises_mixture_from_raw(raw[:, :k]), dist.von_mises_mixture_from_raw(raw[:, k:])

    def forward_heads(self, model, angles, t):
        if np.any(np.asarray(t) >= self.T):
            raise ContractError("no forward move after the last step")
        return self._mixtures(model.pf_net(self.features(angles, t)))

    def backward_heads(self, model, angles, t):
        if np.any(np.asarray(t) < 2):
            raise ContractError("the step back into the source is deterministic")
        return self._mixtures(model.pb_net(self.features(angles, t)))

    @staticmethod
    def pair_logdensity(mixtures, target):
        psi, phi = mixtures
        target = np.atleast_2d(target)
        return dist.log_density(psi, target[:, 0]) + dist.log_density(phi, target[:, 1])

    def reward_logdensity(self, x):
        return torus_reward_logdensity(x)

    @property
    def reward_bound(self):
        return TORUS_REWARD_MAX

    @property
    def domain(self):
        return np.array([[0.0, TWO_PI], [0.0, TWO_PI]])

    def is_terminating(self, t):
        return t == self.T

    def exploration_perturb(self, params, eps, t=None):
        return float(eps)

    def rollout(self, model, n, rng, eps=0.0):
        if eps < 0:
            raise ContractError("exploration rate must be nonnegative")
        T = self.T
        states = np.zeros((n, T + 1, 2))
        log_pf = np.zeros((n, T + 1))
        log_pb = np.zeros((n, T + 1))
        log_pi = np.zeros(n)
        for t in range(T):
            cur = states[:, t]
            mix = self.forward_heads(model, cur, np.full(n, t))
            check_finite("policy outputs", *(m.conc for m in mix), *(m.loc for m in mix))
            nxt = np.stack([dist.sample(mix[0], rng), dist.sample(mix[1], rng)], axis=1)
            if eps > 0:
                explore = rng.random(n) < eps
                nxt = np.where(explore[:, None], rng.uniform(0.0, TWO_PI, size=(n, 2)), nxt)
            lp = self.pair_logdensity(mix, nxt).value
            log_pf[:, t] = lp
            log_pi += lp if eps <= 0 else np.logaddexp(np.log1p(-eps) + lp, np.log(eps) + LOG_UNIFORM)
            states[:, t + 1] = nxt
            if t >= 1:
                back = self.backward_heads(model, nxt, np.full(n, t + 1))
                log_pb[:, t] = self.pair_logdensity(back, cur).value
        log_r = self.reward_logdensity(states[:, T])
        return TrajectoryBatch(states, np.full(n, T), log_pf, log_pb, log_r, log_pi)

    def log_terms(self, model, batch):
        n, T = len(batch), self.T
        cur = batch.states[:, :T].reshape(-1, 2)
        nxt = batch.states[:, 1:].reshape(-1, 2)
        t = np.tile(np.arange(T), n)
        lpf = self.pair_logdensity(self.forward_heads(model, cur, t), nxt).reshape(n, T).sum(axis=1)
        if T >= 2:
            back_from = batch.states[:, 2:].reshape(-1, 2)
            back_to = batch.states[:, 1:T].reshape(-1, 2)
            tb = np.tile(np.arange(2, T + 1), n)
            lpb = self.pair_logdensity(self.backward_heads(model, back_from, tb), back_to)
            lpb = lpb.reshape(n, T - 1).sum(axis=1)
        else:
            lpb = ad.Tensor(np.zeros(n))
        return LogTerms(lpf, lpb, batch.log_r)
