"""Fixed-length diffusion chain through copies of R^d.

States are ``(x_t, t)`` with the source at ``(0, 0)``.  The forward policy is
Gaussian with a learned drift and fixed variance ``sigma / T``; the backward
policy is the Brownian bridge pinned at the origin.  After ``T`` moves the
chain stops deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .. import autodiff as ad
from ..autodiff import Parameter
from ..nn import ConfigError, Mlp, MlpSpec, fourier_time_features
from .base import ContractError, Environment, LogTerms, TrajectoryBatch, check_finite

LOG_2PI = float(np.log(2.0 * np.pi))


# targets --------------------------------------------------------------------


@dataclass(frozen=True)
class TargetDensity:
    name: str
    dim: int
    log_z: float = 0.0
    # mode spacing of the nine Gaussians, or the std of x_1 for the funnel
    scale: float = 5.0

    def log_density(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ContractError(f"{self.name} expects points of dimension {self.dim}")
        if self.name == "nine-gaussians":
            return nine_gaussians_logdensity(x, self.scale)
        if self.name == "funnel":
            return funnel_logdensity(x, self.scale)
        raise ConfigError(f"unknown target {self.name!r}")


NINE_GAUSSIAN_MEANS = np.array([(a, b) for a in (-5.0, 0.0, 5.0) for b in (-5.0, 0.0, 5.0)])


def nine_gaussians_logdensity(x, spacing=5.0):
    """Equal-weight mixture of unit-covariance Gaussians centred on {-5, 0, 5}^2 (for spacing 5)."""
    means = NINE_GAUSSIAN_MEANS * (spacing / 5.0)
    d2 = ((x[:, None, :] - means[None]) ** 2).sum(-1)
    return special.logsumexp(-0.5 * d2, axis=1) - np.log(9.0) - LOG_2PI


def funnel_logdensity(x, scale=3.0):
    """x_1 ~ N(0, scale^2); x_i | x_1 ~ N(0, exp(x_1)) for the remaining coordinates."""
    v = x[:, 0]
    rest = x[:, 1:]
    k = rest.shape[1]
    s2 = scale * scale
    head = -0.5 * (LOG_2PI + np.log(s2) + v * v / s2)
    tail = -0.5 * (k * (LOG_2PI + v) + (rest * rest).sum(1) * np.exp(-v))
    return head + tail


TARGETS = {
    "nine-gaussians": TargetDensity("nine-gaussians", 2),
    "funnel": TargetDensity("funnel", 10, scale=3.0),
}


# model ------------------------------------------------------------------------


@dataclass
class DriftModel:
    x_branch: Mlp
    t_branch: Mlp
    joint: Mlp
    log_z: Parameter

    @property
    def policy_params(self):
        return [*self.x_branch.params, *self.t_branch.params, *self.joint.params]

    @property
    def logz_params(self):
        return [self.log_z]

    @property
    def params(self):
        return self.policy_params + self.logz_params


def gaussian_logpdf(x, mean, var):
    """Isotropic Gaussian log-density, summed over the last axis; ``var`` is a scalar."""
    d = x.shape[-1]
    return -0.5 * (ad.square(x - mean) * (1.0 / var)).sum(axis=-1) - 0.5 * d * (LOG_2PI + np.log(var))


class EuclidEnv(Environment):
    name = "euclid"

    def __init__(self, target="nine-gaussians", T=100, sigma=None, hidden=64, t_features=128, dim=None,
                 target_scale=None):
        if target not in TARGETS:
            raise ConfigError(f"unknown target {target!r}; choose from {sorted(TARGETS)}")
        self.target = TARGETS[target]
        if target_scale is not None:
            if target_scale <= 0:
                raise ConfigError("target_scale must be positive")
            self.target = replace(self.target, scale=float(target_scale))
        if dim is not None and dim != self.target.dim:
            raise ConfigError(f"{target} lives in dimension {self.target.dim}")
        if sigma is None:
            sigma = 5.0 if target == "nine-gaussians" else 1.0
        if T < 1 or sigma <= 0:
            raise ConfigError("need T >= 1 and sigma > 0")
        self.T = int(T)
        self.sigma = float(sigma)
        self.dim = self.target.dim
        self.hidden = int(hidden)
        self.t_features = int(t_features)
        self.max_traj_len = self.T
        self.var = self.sigma / self.T
        self._time_table = fourier_time_features(np.arange(self.T), self.t_features, self.T)

    def init_model(self, rng):
        h = self.hidden
        return DriftModel(
            x_branch=Mlp(MlpSpec([self.dim, h, h]), rng, prefix="x"),
            t_branch=Mlp(MlpSpec([self.t_features, h, h]), rng, prefix="t"),
            joint=Mlp(MlpSpec([2 * h, h, h, self.dim]), rng, prefix="joint", zero_last=True),
            log_z=Parameter(0.0, name="log_z"),
        )

    def drift(self, model, x, t):
        """Network drift at states ``x`` (M, d) and integer steps ``t`` (M,)."""
        t = np.asarray(t, dtype=int)
        if np.any(t < 0) or np.any(t >= self.T):
            raise ContractError("forward policy is defined for steps 0..T-1 only")
        steps, inv = np.unique(t, return_inverse=True)
        ht = model.t_branch(self._time_table[steps])[inv]
        hx = model.x_branch(x)
        return model.joint(ad.leaky_relu(ad.concat([hx, ht], axis=1)))

    def forward_heads(self, model, x, t):
        return ad.as_tensor(x) + self.drift(model, x, t) * (1.0 / self.T), self.var

    def backward_heads(self, x, t):
        """Mean and variance of x_{t-1} given x_t under the pinned bridge (t >= 2)."""
        if np.any(np.asarray(t) < 2):
            raise ContractError("the step back into the source is deterministic")
        t = np.asarray(t, dtype=np.float64)
        frac = (t - 1.0) / t
        return np.asarray(x) * frac[..., None], self.var * frac

    def pf_logdensity(self, model, x_t, t, x_next):
        mean, var = self.forward_heads(model, x_t, t)
        return gaussian_logpdf(np.asarray(x_next, dtype=np.float64), mean, var)

    def pb_logdensity(self, x_t, t, x_prev):
        mean, var = self.backward_heads(x_t, t)
        d = self.dim
        diff = np.asarray(x_prev) - mean
        return -0.5 * (diff * diff).sum(-1) / var - 0.5 * d * (LOG_2PI + np.log(var))

    def reward_logdensity(self, x):
        return self.target.log_density(x)

    def is_terminating(self, t):
        return t == self.T

    def exploration_perturb(self, var, eps, t=None):
        """Sampling variance after adding eps^2 / T."""
        return var + eps * eps / self.T

    def rollout(self, model, n, rng, eps=0.0):
        if eps < 0:
            raise ContractError("exploration rate must be nonnegative")
        T, d = self.T, self.dim
        xs = np.zeros((n, T + 1, d))
        log_pf = np.zeros((n, T + 1))
        log_pb = np.zeros((n, T + 1))
        log_pi = np.zeros(n)
        var_pi = self.exploration_perturb(self.var, eps)
        for t in range(T):
            x = xs[:, t]
            mean = x + self.drift(model, x, np.full(n, t)).value / T
            check_finite("drift", mean)
            nxt = mean + np.sqrt(var_pi) * rng.standard_normal((n, d))
            xs[:, t + 1] = nxt
            diff2 = ((nxt - mean) ** 2).sum(1)
            log_pf[:, t] = -0.5 * diff2 / self.var - 0.5 * d * (LOG_2PI + np.log(self.var))
            log_pi += -0.5 * diff2 / var_pi - 0.5 * d * (LOG_2PI + np.log(var_pi))
            if t >= 1:
                log_pb[:, t] = self.pb_logdensity(nxt, np.full(n, t + 1), x)
        log_r = self.reward_logdensity(xs[:, T])
        return TrajectoryBatch(xs, np.full(n, T), log_pf, log_pb, log_r, log_pi)

    def log_terms(self, model, batch):
        n, T, d = len(batch), self.T, self.dim
        x = batch.states[:, :T].reshape(-1, d)
        nxt = batch.states[:, 1:].reshape(-1, d)
        t = np.tile(np.arange(T), n)
        lp = gaussian_logpdf(nxt, ad.as_tensor(x) + self.drift(model, x, t) * (1.0 / T), self.var)
        return LogTerms(lp.reshape(n, T).sum(axis=1), ad.Tensor(batch.log_pb.sum(1)), batch.log_r)
