"""Experiment configuration: a JSON-serialisable record plus named presets."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .nn import ConfigError

ENVS = ("grid", "euclid", "torus")
OBJECTIVES = ("tb", "db", "fm", "rkl", "fkl")


@dataclass
class ExperimentConfig:
    name: str = "custom"
    env: str = "grid"
    env_params: dict = field(default_factory=dict)
    objective: str = "tb"
    alpha: float = 1.0
    fm_nodes: int = 64
    # exploration rate, linearly annealed from eps_start to eps_end over the run
    eps_start: float = 0.0
    eps_end: float = 0.0
    lr: float = 1e-3
    lr_logz: float = 1e-1
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    batch_size: int = 128
    iterations: int = 1000
    eval_every: int = 500
    eval_samples: int = 10_000
    final_eval_samples: int = 100_000
    grid_res: int = 200
    seed: int = 0
    out_dir: str = "runs/custom"
    record_wall_clock: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective in ("db", "fm") and self.env != "grid":
            raise ConfigError(f"{self.objective} needs a state-flow head, available only on the grid env")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.fm_nodes < 16:
            raise ConfigError("fm_nodes must be at least 16")
        if self.eps_start < 0 or self.eps_end < 0:
            raise ConfigError("exploration rates must be nonnegative")
        if self.batch_size < 1 or self.iterations < 0 or self.eval_every < 0:
            raise ConfigError("batch_size >= 1, iterations >= 0, eval_every >= 0 required")
        if self.lr <= 0 or self.lr_logz <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("learning rates must be positive and 0 < lr_decay <= 1")

    @property
    def off_policy(self):
        return self.eps_start > 0 or self.eps_end > 0

    def epsilon(self, it):
        if self.iterations <= 1:
            return self.eps_start
        frac = min(it / (self.iterations - 1), 1.0)
        return self.eps_start + (self.eps_end - self.eps_start) * frac

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "preset" in data:
            base = preset(data.pop("preset")).to_dict()
            base.update(data)
            data = base
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**copy.deepcopy(data))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_json(fh.read())


def _grid(name, objective, rho, learned_pb):
    return ExperimentConfig(
        name=name,
        env="grid",
        env_params={"rho": rho, "learned_pb": learned_pb, "hidden": [128, 128, 128], "termination": "arc"},
        objective=objective,
        alpha=1.0,
        lr=1e-3,
        lr_logz=1e-1,
        lr_decay=0.5,
        lr_decay_every=2500,
        batch_size=128,
        iterations=20_000,
        eval_every=1000,
        eval_samples=10_000,
        final_eval_samples=100_000,
        out_dir=f"runs/{name}",
    )


def _euclid(name, target, objective, off_policy, T=100, iterations=1500):
    k = 2000 if target == "nine-gaussians" else 6000
    return ExperimentConfig(
        name=name,
        env="euclid",
        env_params={"target": target, "T": T, "sigma": 5.0 if target == "nine-gaussians" else 1.0,
                    "hidden": 64, "t_features": 128},
        objective=objective,
        eps_start=0.1 if off_policy else 0.0,
        eps_end=0.0,
        lr=1e-2,
        lr_logz=1e-1,
        batch_size=300,
        iterations=iterations,
        eval_every=250,
        eval_samples=k,
        final_eval_samples=k,
        out_dir=f"runs/{name}",
    )


def _torus(name):
    return ExperimentConfig(
        name=name,
        env="torus",
        env_params={"T": 10, "hidden": [512, 512, 512, 512], "components": 5, "harmonics": 5},
        objective="tb",
        lr=1e-5,
        lr_logz=1e-2,
        batch_size=100,
        iterations=5000,
        eval_every=1000,
        eval_samples=10_000,
        final_eval_samples=100_000,
        out_dir=f"runs/{name}",
    )


def _build_presets():
    out = {}
    for rho, tag in ((0.25, "rho025"), (0.1, "rho01")):
        for obj in ("tb", "db"):
            out[f"grid-{obj}-{tag}"] = _grid(f"grid-{obj}-{tag}", obj, rho, True)
            out[f"grid-{obj}-{tag}-uniformpb"] = _grid(f"grid-{obj}-{tag}-uniformpb", obj, rho, False)
    for obj in ("tb", "rkl", "fkl"):
        for policy in ("onpolicy", "offpolicy"):
            name = f"euclid-9g-{policy}-{obj}"
            out[name] = _euclid(name, "nine-gaussians", obj, policy == "offpolicy")
    out["euclid-funnel-offpolicy-tb"] = _euclid("euclid-funnel-offpolicy-tb", "funnel", "tb", True)
    out["euclid-funnel-onpolicy-tb"] = _euclid("euclid-funnel-onpolicy-tb", "funnel", "tb", False)
    out["euclid-funnel-reduced"] = _euclid("euclid-funnel-reduced", "funnel", "tb", True, T=32, iterations=500)
    out["torus-r6-tb"] = _torus("torus-r6-tb")
    return out


PRESETS = _build_presets()


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])
