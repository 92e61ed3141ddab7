"""Policy distribution families: Beta mixtures on intervals, diagonal Gaussians,
von Mises mixtures on the circle.

All parameter containers hold :class:`~cgfn.autodiff.Tensor` values with a
leading batch axis, so that :func:`log_density` is differentiable with respect
to whatever network produced them.  Sampling works on the plain values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))
TWO_PI = 2.0 * np.pi

#: value returned by :func:`log_density` for points outside the support
OUTSIDE_SUPPORT = -np.inf

BETA_MIN, BETA_MAX = 0.1, 5.1
#: Beta draws are kept this far from the interval ends so densities stay finite
BETA_SAMPLE_CLIP = 1e-6
_TINY = 1e-300


@dataclass
class BetaMixtureParams:
    log_weights: Tensor  # (B, K), normalised
    alpha: Tensor  # (B, K)
    beta: Tensor  # (B, K)
    lo: np.ndarray  # (B,)
    hi: np.ndarray  # (B,)

    @property
    def weights(self):
        return np.exp(self.log_weights.value)


@dataclass
class DiagGaussianParams:
    mean: Tensor  # (B, d)
    var: Tensor  # (B, d)


@dataclass
class VonMisesMixtureParams:
    log_weights: Tensor  # (B, K)
    loc: Tensor  # (B, K)
    conc: Tensor  # (B, K)

    @property
    def weights(self):
        return np.exp(self.log_weights.value)


def _batch_const(x, n):
    x = np.asarray(x, dtype=np.float64)
    return np.broadcast_to(x, (n,)) if x.ndim == 0 else x


def beta_mixture(weights, alpha, beta, lo=0.0, hi=1.0):
    """Build Beta-mixture parameters from explicit numeric values.

    Accepts 1-d arrays (a single distribution) or 2-d ``(B, K)`` arrays.
    """
    weights, alpha, beta = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (weights, alpha, beta))
    if np.any(weights < 0) or np.any(np.abs(weights.sum(-1) - 1.0) > 1e-9):
        raise ValueError("mixture weights must lie on the simplex")
    if np.any(alpha < BETA_MIN) or np.any(alpha > BETA_MAX) or np.any(beta < BETA_MIN) or np.any(beta > BETA_MAX):
        raise ValueError(f"Beta concentrations must lie in [{BETA_MIN}, {BETA_MAX}]")
    n = weights.shape[0]
    lo, hi = _batch_const(lo, n), _batch_const(hi, n)
    if np.any(lo >= hi):
        raise ValueError("empty support interval")
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return BetaMixtureParams(Tensor(logw), Tensor(alpha), Tensor(beta), lo, hi)


def beta_mixture_from_raw(raw, lo, hi):
    """Map unconstrained network outputs ``(B, 3K)`` to Beta-mixture parameters.

    Layout: ``[logits | alpha | beta]``; concentrations pass through a scaled
    sigmoid onto ``[0.1, 5.1]``.
    """
    k = raw.shape[1] // 3
    logits, a_raw, b_raw = raw[:, :k], raw[:, k : 2 * k], raw[:, 2 * k :]
    alpha = BETA_MIN + (BETA_MAX - BETA_MIN) * ad.sigmoid(a_raw)
    beta = BETA_MIN + (BETA_MAX - BETA_MIN) * ad.sigmoid(b_raw)
    n = raw.shape[0]
    return BetaMixtureParams(ad.log_softmax(logits), alpha, beta, _batch_const(lo, n), _batch_const(hi, n))


def von_mises_mixture(weights, loc, conc):
    weights, loc, conc = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (weights, loc, conc))
    if np.any(weights < 0) or np.any(np.abs(weights.sum(-1) - 1.0) > 1e-9):
        raise ValueError("mixture weights must lie on the simplex")
    if np.any(conc <= 0):
        raise ValueError("von Mises concentrations must be positive")
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return VonMisesMixtureParams(Tensor(logw), Tensor(np.mod(loc, TWO_PI)), Tensor(conc))


def von_mises_mixture_from_raw(raw):
    """``(B, 3K)`` outputs ``[logits | loc | conc]`` -> softmax / 2*pi*sigmoid / softplus."""
    k = raw.shape[1] // 3
    logits, loc_raw, conc_raw = raw[:, :k], raw[:, k : 2 * k], raw[:, 2 * k :]
    return VonMisesMixtureParams(ad.log_softmax(logits), TWO_PI * ad.sigmoid(loc_raw), ad.softplus(conc_raw))


def diag_gaussian(mean, var):
    mean = ad.as_tensor(np.atleast_2d(mean) if not isinstance(mean, Tensor) else mean)
    var = ad.as_tensor(np.atleast_2d(var) if not isinstance(var, Tensor) else var)
    if np.any(var.value <= 0):
        raise ValueError("Gaussian variances must be positive")
    return DiagGaussianParams(mean, var)


# modified Bessel function I0 ---------------------------------------------

_SERIES_TERMS = 80
_ASYMP_TERMS = 24
_SWITCH = 15.0


def _series(k, order):
    # sum_m (k/2)^(2m+order) / (m! (m+order)!), evaluated by a running ratio
    q = (k * k / 4.0)[..., None]
    m = np.arange(_SERIES_TERMS)
    ratios = q / ((m + 1.0) * (m + 1.0 + order))
    terms = np.concatenate([np.ones_like(q), np.cumprod(ratios[..., :-1], axis=-1)], axis=-1)
    s = terms.sum(-1)
    return s if order == 0 else s * (k / 2.0)


def _asymptotic(k, order):
    # e^k / sqrt(2 pi k) * sum_j (-1)^j prod_{i<=j}(4 nu^2 - (2i-1)^2) / (j! (8k)^j)
    nu4 = 4.0 * order * order
    total = np.ones_like(k)
    term = np.ones_like(k)
    for j in range(1, _ASYMP_TERMS):
        term = term * -(nu4 - (2 * j - 1) ** 2) / (j * 8.0 * k)
        total = total + term
    return total


def log_i0(k):
    """log I0(k) for k >= 0: power series below 15, asymptotic expansion above."""
    k = np.asarray(k, dtype=np.float64)
    small = k < _SWITCH
    ks = np.where(small, k, 0.0)
    kl = np.where(small, _SWITCH, k)
    out_small = np.log(_series(ks, 0))
    out_large = kl - 0.5 * np.log(2.0 * np.pi * kl) + np.log(_asymptotic(kl, 0))
    return np.where(small, out_small, out_large)


def bessel_ratio(k):
    """I1(k) / I0(k), the derivative of :func:`log_i0`."""
    k = np.asarray(k, dtype=np.float64)
    small = k < _SWITCH
    ks = np.where(small, k, 0.0)
    kl = np.where(small, _SWITCH, k)
    r_small = _series(ks, 1) / _series(ks, 0)
    r_large = _asymptotic(kl, 1) / _asymptotic(kl, 0)
    return np.where(small, r_small, r_large)


def log_i0_tensor(k):
    k = ad.as_tensor(k)
    kv = k.value
    return ad.primitive(log_i0(kv), (k,), lambda g: (g * bessel_ratio(kv),))


# densities ------------------------------------------------------------------


def _beta_log_density(p, x):
    x = np.asarray(x, dtype=np.float64)
    width = p.hi - p.lo
    inside = (x >= p.lo) & (x <= p.hi)
    xs = np.where(inside, x, 0.5 * (p.lo + p.hi))
    log_u = np.log(np.maximum((xs - p.lo) / width, _TINY))[:, None]
    log_1mu = np.log(np.maximum((p.hi - xs) / width, _TINY))[:, None]
    a, b = p.alpha, p.beta
    comp = (a - 1.0) * log_u + (b - 1.0) * log_1mu + ad.gammaln(a + b) - ad.gammaln(a) - ad.gammaln(b)
    out = ad.logsumexp(p.log_weights + comp, axis=-1) - np.log(width)
    if inside.all():
        return out
    return ad.where(inside, out, np.full(x.shape, OUTSIDE_SUPPORT))


def _gaussian_log_density(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if p.mean.shape[-1] == 1 else x[None, :]
    diff = x - p.mean
    per_dim = -0.5 * (LOG_2PI + ad.log(p.var) + ad.square(diff) / p.var)
    return per_dim.sum(axis=-1)


def _von_mises_log_density(p, x):
    x = np.asarray(x, dtype=np.float64)[:, None]
    comp = p.conc * ad.cos(x - p.loc) - LOG_2PI - log_i0_tensor(p.conc)
    return ad.logsumexp(p.log_weights + comp, axis=-1)


def log_density(params, x):
    """Natural-log density of ``x`` (one point per batch row).

    Beta mixtures are densities on ``[lo, hi]`` (including the ``1/(hi-lo)``
    factor) and give :data:`OUTSIDE_SUPPORT` off the interval.  Gaussians are
    densities on R^d, von Mises mixtures on the circle.
    """
    if isinstance(params, BetaMixtureParams):
        return _beta_log_density(params, x)
    if isinstance(params, DiagGaussianParams):
        return _gaussian_log_density(params, x)
    if isinstance(params, VonMisesMixtureParams):
        return _von_mises_log_density(params, x)
    raise TypeError(f"unsupported parameter family {type(params).__name__}")


# sampling -------------------------------------------------------------------


def _pick_components(log_weights, rng):
    w = np.exp(log_weights)
    cdf = np.cumsum(w, axis=-1)
    u = rng.random((w.shape[0], 1)) * cdf[:, -1:]
    idx = (u > cdf).sum(axis=-1)
    return np.minimum(idx, w.shape[1] - 1)


def sample(params, rng, clip=BETA_SAMPLE_CLIP):
    """Draw one point per batch row.

    Beta draws use the two-Gamma construction (numpy's Gamma sampler is
    Marsaglia-Tsang) and are clipped ``clip`` away from the interval ends;
    von Mises draws use numpy's Best-Fisher rejection sampler and are wrapped
    to ``[0, 2*pi)``.
    """
    if isinstance(params, BetaMixtureParams):
        idx = _pick_components(params.log_weights.value, rng)
        rows = np.arange(idx.size)
        a = params.alpha.value[rows, idx]
        b = params.beta.value[rows, idx]
        g1 = rng.standard_gamma(a)
        g2 = rng.standard_gamma(b)
        with np.errstate(invalid="ignore"):
            u = g1 / (g1 + g2)
        u = np.where(np.isfinite(u), u, 0.5)
        u = np.clip(u, clip, 1.0 - clip)
        return params.lo + (params.hi - params.lo) * u
    if isinstance(params, DiagGaussianParams):
        mean, var = params.mean.value, params.var.value
        return mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    if isinstance(params, VonMisesMixtureParams):
        idx = _pick_components(params.log_weights.value, rng)
        rows = np.arange(idx.size)
        loc = params.loc.value[rows, idx]
        conc = params.conc.value[rows, idx]
        return np.mod(rng.vonmises(loc, conc), TWO_PI)
    raise TypeError(f"unsupported parameter family {type(params).__name__}")


def wrapped_distance(a, b):
    """Geodesic distance between angles on the circle."""
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)
