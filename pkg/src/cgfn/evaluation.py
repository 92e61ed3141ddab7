"""Sample-quality metrics: KDE-based Jensen-Shannon divergence and log-partition bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

TWO_PI = 2.0 * np.pi
MIN_ACCEPTANCE = 1e-4
DEFAULT_RES = 200
DEFAULT_N = 100_000


class EvaluationError(RuntimeError):
    pass


# rejection sampling ---------------------------------------------------------------


def rejection_sample(logdensity, domain, bound, n, rng, chunk=100_000, min_rate=MIN_ACCEPTANCE):
    """Exact draws from the density proportional to ``exp(logdensity)`` on a box.

    ``domain`` is a ``(d, 2)`` array of bounds, ``bound`` an upper bound ``M``
    on the unnormalised density.  Returns ``(samples, acceptance_rate)``.
    """
    domain = np.asarray(domain, dtype=np.float64)
    lo, hi = domain[:, 0], domain[:, 1]
    log_m = np.log(bound)
    out, proposed, accepted = [], 0, 0
    while accepted < n:
        x = lo + (hi - lo) * rng.random((chunk, len(lo)))
        lr = np.asarray(logdensity(x), dtype=np.float64)
        if np.any(lr > log_m + 1e-12):
            raise EvaluationError(f"density exceeds the rejection bound {bound}")
        keep = np.log(rng.random(chunk)) < lr - log_m
        proposed += chunk
        accepted += int(keep.sum())
        out.append(x[keep])
        if accepted / proposed < min_rate:
            raise EvaluationError(f"acceptance rate {accepted / proposed:.2e} below {min_rate:.0e}")
    return np.concatenate(out)[:n], accepted / proposed


# kernel density estimation --------------------------------------------------------


def scott_bandwidth(samples):
    samples = np.atleast_2d(samples)
    n, d = samples.shape
    return samples.std(axis=0, ddof=1) * n ** (-1.0 / (d + 4))


class Kde:
    """Gaussian product-kernel KDE with a diagonal Scott bandwidth.

    With ``torus=True`` samples are wrapped into ``[0, 2*pi)`` and each
    kernel is summed over its images shifted by ``-2*pi, 0, 2*pi``.
    """

    def __init__(self, samples, bandwidth=None, torus=False):
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if samples.shape[0] < 2:
            raise EvaluationError("a KDE needs at least two samples")
        self.torus = bool(torus)
        self.samples = np.mod(samples, TWO_PI) if torus else samples
        bw = scott_bandwidth(self.samples) if bandwidth is None else np.broadcast_to(bandwidth, samples.shape[1])
        self.bandwidth = np.asarray(bw, dtype=np.float64)
        if np.any(self.bandwidth <= 0):
            raise EvaluationError("bandwidth must be positive")

    @property
    def shifts(self):
        return (-TWO_PI, 0.0, TWO_PI) if self.torus else (0.0,)

    def _kernel(self, grid, centres, h):
        diff = grid[:, None] - centres[None, :]
        k = np.zeros_like(diff)
        for m in self.shifts:
            k += np.exp(-0.5 * ((diff + m) / h) ** 2)
        return k / (h * np.sqrt(TWO_PI))

    def evaluate_grid(self, xs, ys, chunk=20_000):
        """Density on the product grid ``xs`` x ``ys`` as an array of shape (len(xs), len(ys))."""
        if self.samples.shape[1] != 2:
            raise EvaluationError("grid evaluation is for 2-D samples")
        out = np.zeros((len(xs), len(ys)))
        hx, hy = self.bandwidth
        for i in range(0, len(self.samples), chunk):
            part = self.samples[i : i + chunk]
            out += self._kernel(xs, part[:, 0], hx) @ self._kernel(ys, part[:, 1], hy).T
        return out / len(self.samples)

    def __call__(self, points, chunk=20_000):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(len(points))
        for i in range(0, len(self.samples), chunk):
            part = self.samples[i : i + chunk]
            prod = np.ones((len(points), len(part)))
            for j, h in enumerate(self.bandwidth):
                prod *= self._kernel(points[:, j], part[:, j], h)
            out += prod.sum(1)
        return out / len(self.samples)


def grid_axes(domain, res=DEFAULT_RES):
    """Cell-centre coordinates of a ``res`` x ``res`` grid over a 2-D box."""
    domain = np.asarray(domain, dtype=np.float64)
    return [lo + (np.arange(res) + 0.5) * (hi - lo) / res for lo, hi in domain]


# divergence -----------------------------------------------------------------------


def jsd_from_pmfs(p, q):
    """Jensen-Shannon divergence (natural log) between two pmfs on the same support."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)
    kl_p = np.sum(special.rel_entr(p, m))
    kl_q = np.sum(special.rel_entr(q, m))
    return float(min(max(0.5 * (kl_p + kl_q), 0.0), np.log(2.0)))


@dataclass
class JsdReport:
    jsd: float
    n_a: int
    n_b: int
    res: int
    torus: bool = False

    def to_dict(self):
        return {"jsd": self.jsd, "n_a": self.n_a, "n_b": self.n_b, "res": self.res, "torus": self.torus}


def jsd_estimate(samples_a, samples_b, domain, res=DEFAULT_RES, torus=False):
    """KDE both sample sets, score a shared grid, normalise to pmfs and take the JSD."""
    xs, ys = grid_axes(domain, res)
    pa = Kde(samples_a, torus=torus).evaluate_grid(xs, ys)
    pb = Kde(samples_b, torus=torus).evaluate_grid(xs, ys)
    return JsdReport(jsd_from_pmfs(pa, pb), len(samples_a), len(samples_b), res, torus)


# log-partition bounds -----------------------------------------------------------------


@dataclass
class LogZBoundReport:
    b: float
    b_rw: float
    k: int
    excluded: int = 0
    log_w: np.ndarray = field(default=None, repr=False)

    @property
    def b_se(self):
        return float(np.std(self.log_w, ddof=1) / np.sqrt(len(self.log_w))) if len(self.log_w) > 1 else float("nan")

    def to_dict(self):
        return {"b": self.b, "b_rw": self.b_rw, "k": self.k, "excluded": self.excluded, "b_se": self.b_se}


def bounds_from_log_weights(log_w):
    """B = mean log w and B_RW = log mean w, skipping non-finite ratios."""
    log_w = np.asarray(log_w, dtype=np.float64)
    ok = np.isfinite(log_w)
    kept = log_w[ok]
    if kept.size == 0:
        raise EvaluationError("no finite importance ratios")
    b = float(np.mean(kept))
    b_rw = float(special.logsumexp(kept) - np.log(kept.size))
    return LogZBoundReport(b, b_rw, int(kept.size), int((~ok).sum()), kept)


def logz_bounds(env, model, k, rng, chunk=500):
    """Bounds from ``k`` fresh on-policy rollouts: log w = log r + sum log p_B - sum log p_F."""
    parts = []
    for i in range(0, k, chunk):
        batch = env.rollout(model, min(chunk, k - i), rng)
        lpf, lpb, lr = batch.sums()
        with np.errstate(invalid="ignore"):
            parts.append(lr + lpb - lpf)
    return bounds_from_log_weights(np.concatenate(parts))


def terminal_samples(env, model, n, rng, chunk=5_000):
    return np.concatenate([env.rollout(model, min(chunk, n - i), rng).terminal_states for i in range(0, n, chunk)])


def model_jsd(env, model, n, rng, res=DEFAULT_RES, reference=None):
    """JSD between ``n`` terminal states of the model and ``n`` rejection samples of the reward."""
    torus = env.name == "torus"
    if reference is None:
        reference, _ = rejection_sample(env.reward_logdensity, env.domain, env.reward_bound, n, rng)
    samples = terminal_samples(env, model, n, rng)
    return jsd_estimate(samples, reference, env.domain, res, torus=torus)
