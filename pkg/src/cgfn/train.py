"""Training loop, metrics persistence, checkpoints and density-grid export."""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import evaluation as ev
from .config import ExperimentConfig
from .envs import EuclidEnv, PolicyDiverged, QuarterDiscEnv, TorusEnv
from .nn import Adam, ConfigError, assign_flat, flatten_params
from .objectives import objective

METRIC_COLUMNS = ("iteration", "loss", "log_z", "jsd", "b", "b_rw", "wall_clock", "skipped")
EUCLID_GRID_DOMAIN = np.array([[-10.0, 10.0], [-10.0, 10.0]])


def build_env(config):
    p = dict(config.env_params)
    if config.env == "grid":
        return QuarterDiscEnv(**p)
    if config.env == "euclid":
        return EuclidEnv(**p)
    if config.env == "torus":
        return TorusEnv(**p)
    raise ConfigError(f"unknown env {config.env!r}")


def build_optimizer(model, config):
    return Adam(
        [(model.policy_params, config.lr), (model.logz_params, config.lr_logz)],
        decay=config.lr_decay,
        decay_every=config.lr_decay_every,
    )


# metrics ------------------------------------------------------------------------


class MetricsWriter:
    """Append-only CSV with a fixed header; missing metrics are empty fields."""

    def __init__(self, path):
        self.path = path
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_COLUMNS)

    def write(self, row):
        unknown = set(row) - set(METRIC_COLUMNS)
        if unknown:
            raise ValueError(f"unknown metric columns {sorted(unknown)}")
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# checkpoints -------------------------------------------------------------------


def _prefix(path):
    for ext in (".json", ".bin"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path


def save_checkpoint(path, model, config, **meta):
    """Flat little-endian float64 parameter dump plus a JSON sidecar of names and shapes."""
    prefix = _prefix(path)
    params = model.params
    flatten_params(params).astype("<f8").tofile(prefix + ".bin")
    sidecar = {
        "config": config.to_dict(),
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
        **meta,
    }
    with open(prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return prefix + ".json"


def load_checkpoint(path):
    """Return ``(config, env, model, meta)`` restored bit-exactly from disk."""
    prefix = _prefix(path)
    with open(prefix + ".json") as fh:
        sidecar = json.load(fh)
    config = ExperimentConfig.from_dict(sidecar.pop("config"))
    env = build_env(config)
    model = env.init_model(np.random.default_rng(0))
    shapes = [tuple(p["shape"]) for p in sidecar["params"]]
    if shapes != [p.shape for p in model.params]:
        raise ConfigError("checkpoint shapes do not match the configured model")
    assign_flat(model.params, np.fromfile(prefix + ".bin", dtype="<f8"))
    return config, env, model, sidecar


# evaluation and export ------------------------------------------------------------


def evaluate(env, model, config, rng, n):
    if env.name == "euclid":
        rep = ev.logz_bounds(env, model, n, rng)
        return {"b": rep.b, "b_rw": rep.b_rw}
    rep = ev.model_jsd(env, model, n, rng, res=config.grid_res)
    return {"jsd": rep.jsd}


def grid_domain(env):
    if env.name == "euclid":
        if env.dim != 2:
            raise ConfigError("density-grid export needs a 2-D state space")
        return EUCLID_GRID_DOMAIN
    return env.domain


def density_grid(env, model, res, n, rng):
    """KDE of ``n`` terminal states on a ``res`` x ``res`` grid, normalised to integrate to 1."""
    domain = grid_domain(env)
    samples = ev.terminal_samples(env, model, n, rng)
    xs, ys = ev.grid_axes(domain, res)
    dens = ev.Kde(samples, torus=env.name == "torus").evaluate_grid(xs, ys)
    cell = np.prod((domain[:, 1] - domain[:, 0]) / res)
    return dens / (dens.sum() * cell), domain


def export_density_grid(env, model, path, res=200, n=100_000, rng=None):
    """Write the density grid as CSV: row ``i`` is the first coordinate's i-th cell centre."""
    rng = np.random.default_rng(0) if rng is None else rng
    grid, domain = density_grid(env, model, res, n, rng)
    np.savetxt(path, grid, delimiter=",", fmt="%.10e")
    return grid, domain


# training -------------------------------------------------------------------------


@dataclass
class RunResult:
    status: str
    iterations: int
    last_good_iteration: int
    final: dict = field(default_factory=dict)
    out_dir: str = ""
    env: object = None
    model: object = None


def _finite_grads(grads):
    return all(np.all(np.isfinite(g)) for g in grads)


def run_experiment(config, out_dir=None, log=None, export_grid=True):
    """Train per ``config``; write metrics.csv, checkpoint and density grid under ``out_dir``.

    Deterministic given the seed: training and evaluation draw from separate
    generators, and wall-clock times are only recorded when requested.
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(config.to_json())
    rng = np.random.default_rng(config.seed)
    eval_rng = np.random.default_rng([config.seed, 1])
    env = build_env(config)
    model = env.init_model(rng)
    opt = build_optimizer(model, config)
    writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
    ckpt = os.path.join(out_dir, "checkpoint")
    start = time.perf_counter()
    losses, skipped = [], 0
    has_logz = config.objective == "tb"

    def row(it, metrics):
        r = {"iteration": it, "loss": float(np.mean(losses)) if losses else None, "skipped": skipped}
        if has_logz:
            r["log_z"] = float(model.log_z.value)
        if config.record_wall_clock:
            r["wall_clock"] = time.perf_counter() - start
        r.update(metrics)
        writer.write(r)
        losses.clear()

    for it in range(config.iterations):
        try:
            batch = env.rollout(model, config.batch_size, rng, config.epsilon(it))
            with ad.Tape() as tape:
                loss, info = objective(
                    config.objective, env, model, batch, config.alpha, config.fm_nodes, config.off_policy
                )
            grads = ad.backprop(tape, loss, opt.params)
        except PolicyDiverged as err:
            return _abort(config, model, out_dir, ckpt, it, str(err), log, env)
        if not np.isfinite(loss.item()) or not _finite_grads(grads):
            return _abort(config, model, out_dir, ckpt, it, "non-finite loss or gradient", log, env)
        opt.step(grads)
        losses.append(loss.item())
        skipped += info.get("skipped", 0)
        done = it + 1
        if config.eval_every and done % config.eval_every == 0 and done < config.iterations:
            metrics = evaluate(env, model, config, eval_rng, config.eval_samples)
            row(done, metrics)
            if log:
                log(f"[{config.name}] iter {done}: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))

    final = evaluate(env, model, config, eval_rng, config.final_eval_samples)
    row(config.iterations, final)
    save_checkpoint(ckpt, model, config, iteration=config.iterations, status="complete",
                    last_good_iteration=config.iterations)
    if export_grid and (env.name != "euclid" or env.dim == 2):
        export_density_grid(env, model, os.path.join(out_dir, "density_grid.csv"), config.grid_res,
                            min(config.final_eval_samples, 100_000), eval_rng)
    if log:
        log(f"[{config.name}] final: " + ", ".join(f"{k}={v:.4f}" for k, v in final.items()))
    return RunResult("complete", config.iterations, config.iterations, final, out_dir, env, model)


def _abort(config, model, out_dir, ckpt, it, reason, log, env):
    save_checkpoint(ckpt, model, config, iteration=it, status="aborted", last_good_iteration=it, reason=reason)
    if log:
        log(f"[{config.name}] aborted at iteration {it}: {reason}")
    return RunResult("aborted", it, it, {"reason": reason}, out_dir, env, model)
