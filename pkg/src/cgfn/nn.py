"""Multilayer perceptrons, Adam, and time features built on :mod:`cgfn.autodiff`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

ACTIVATIONS = {
    "leaky-relu": lambda x: ad.leaky_relu(x, 0.01),
    "tanh": ad.tanh,
    "identity": lambda x: x,
}


class ConfigError(ValueError):
    """Raised for inconsistent model or experiment configuration."""


@dataclass
class MlpSpec:
    """Layer widths ``[in, hidden..., out]`` and hidden-layer activations."""

    widths: list
    activation: object = "leaky-relu"

    def __post_init__(self):
        if len(self.widths) < 2 or any(int(w) <= 0 for w in self.widths):
            raise ConfigError(f"invalid MLP widths {self.widths}")
        self.widths = [int(w) for w in self.widths]
        acts = self.hidden_activations()
        for a in acts:
            if a not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def hidden_activations(self):
        n_hidden = self.n_layers - 1
        if isinstance(self.activation, str):
            return [self.activation] * n_hidden
        acts = list(self.activation)
        if len(acts) != n_hidden:
            raise ConfigError(f"need {n_hidden} activations, got {len(acts)}")
        return acts


def init_mlp_params(spec, rng, prefix="mlp", zero_last=False):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weights and biases."""
    params = []
    for i, (n_in, n_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = 1.0 / np.sqrt(n_in)
        last = i == spec.n_layers - 1
        if last and zero_last:
            w = np.zeros((n_in, n_out))
            b = np.zeros(n_out)
        else:
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            b = rng.uniform(-bound, bound, size=n_out)
        params.append(Parameter(w, name=f"{prefix}.w{i}"))
        params.append(Parameter(b, name=f"{prefix}.b{i}"))
    return params


def mlp_forward(spec, params, x):
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise ConfigError(f"MLP expects input width {spec.widths[0]}, got shape {x.shape}")
    acts = spec.hidden_activations()
    h = x
    for i in range(spec.n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < spec.n_layers - 1:
            h = ACTIVATIONS[acts[i]](h)
    return h


class Mlp:
    def __init__(self, spec, rng, prefix="mlp", zero_last=False):
        self.spec = spec
        self.params = init_mlp_params(spec, rng, prefix=prefix, zero_last=zero_last)

    def __call__(self, x):
        return mlp_forward(self.spec, self.params, x)


def fourier_time_features(t, dim, horizon):
    """Sine/cosine features of step index ``t`` (scalar or array) on a log-spaced ladder.

    Frequencies run geometrically from ``2*pi/horizon`` (one period over the
    whole horizon) up to ``pi/2`` (period of four steps).  Returns an array of
    shape ``t.shape + (dim,)``: the first ``dim/2`` entries are sines, the
    rest cosines.
    """
    if dim <= 0 or dim % 2:
        raise ConfigError(f"Fourier feature dimension must be even and positive, got {dim}")
    k = dim // 2
    omega = fourier_frequencies(k, horizon)
    arg = np.asarray(t, dtype=np.float64)[..., None] * omega
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def fourier_frequencies(k, horizon):
    base = 2.0 * np.pi / horizon
    if k == 1:
        return np.array([base])
    top = max(np.pi / 2.0, base)
    return base * (top / base) ** (np.arange(k) / (k - 1))


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_update(state, params, grads):
    """One in-place Adam step on ``params`` (tensors) given ``grads`` (arrays)."""
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(grads) != len(params):
        raise ValueError("params and grads differ in length")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    """Adam over parameter groups, each with its own base learning rate.

    The effective rate of every group is its base rate times
    ``decay ** (iteration // decay_every)``.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, decay=1.0, decay_every=0):
        self.groups = [(list(params), AdamState(lr=lr, betas=betas, eps=eps)) for params, lr in groups]
        self.base_lrs = [lr for _, lr in groups]
        self.decay = decay
        self.decay_every = decay_every
        self.iteration = 0

    @property
    def params(self):
        return [p for params, _ in self.groups for p in params]

    def step(self, grads):
        if self.decay_every:
            factor = self.decay ** (self.iteration // self.decay_every)
        else:
            factor = 1.0
        i = 0
        for (params, state), base in zip(self.groups, self.base_lrs):
            state.lr = base * factor
            adam_update(state, params, grads[i : i + len(params)])
            i += len(params)
        self.iteration += 1


def flatten_params(params):
    return np.concatenate([p.value.ravel() for p in params]) if params else np.zeros(0)


def assign_flat(params, flat):
    flat = np.asarray(flat, dtype=np.float64)
    i = 0
    for p in params:
        n = p.value.size
        p.value = flat[i : i + n].reshape(p.value.shape).copy()
        i += n
    if i != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, parameters need {i}")


__all__ = [
    "ConfigError",
    "MlpSpec",
    "Mlp",
    "init_mlp_params",
    "mlp_forward",
    "fourier_time_features",
    "AdamState",
    "adam_update",
    "Adam",
    "flatten_params",
    "assign_flat",
    "Tensor",
]
