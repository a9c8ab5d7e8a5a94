"""Reproducible experiment runner.

Usage::

    liebridge <experiment> --config <file> [--seed N] [--out DIR] [--print-config]

Experiments: bm, bridge, fermi, kpoint, mh, metric-mle, spd-mean,
s2-kernel, s2-aniso.  Configs are key=value lines (# comments allowed)
or a JSON object; unknown keys are rejected.  Every run writes its
artifacts plus a manifest.json with per-file SHA-256 checksums; a rerun
with the same config and seed reproduces the checksums bit for bit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import estimators as est
from . import fiber as fiber_mod
from . import sde
from .lie_core import MetricParam, so3_exp, gl_exp
from .spaces import HomogeneousSpec, S2Space, SPDSpace, make_space

__version__ = "0.1.0"

EXPERIMENTS = (
    "bm",
    "bridge",
    "fermi",
    "kpoint",
    "mh",
    "metric-mle",
    "spd-mean",
    "s2-kernel",
    "s2-aniso",
)

_DEFAULTS = {
    "bm": dict(space="so3", T=1.0, steps=100, n_paths=10),
    "bridge": dict(space="so3", T=1.0, steps=100, n_paths=10, target=[0.0, 0.0, 1.0]),
    "fermi": dict(space="s2", T=1.0, steps=100, n_paths=10, target=[1.0, 0.0, 0.0]),
    "kpoint": dict(
        space="abelian:1", T=4.0, steps=80, n_paths=100, target=[1.0], k_points=5
    ),
    "mh": dict(
        space="abelian:1",
        T=4.0,
        steps=80,
        K=1000,
        target=[1.0],
        k_points=5,
        bridges_per_eval=8,
        proposal_scale=0.3,
    ),
    "metric-mle": dict(
        space="so3",
        T=0.1,
        steps=20,
        n_samples=128,
        m=4,
        eta=0.2,
        K=200,
        metric=[0.2, 0.0, 0.0, 0.2, 0.0, 0.8],
    ),
    "spd-mean": dict(
        space="spd3", T=0.25, steps=15, n_samples=64, m=3, eta=0.75, K=100
    ),
    "s2-kernel": dict(space="s2", T=0.5, n_bridges=384, n_samples=16, steps=50),
    "s2-aniso": dict(
        space="so3",
        T_list=[0.5, 1.0, 1.5, 2.0],
        n_samples=512,
        n_bridges=3,
        metric=[0.2, 0.0, 0.0, 0.2, 0.0, 0.8],
    ),
}


class ConfigError(ValueError):
    """Raised on malformed or inconsistent experiment configs."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    space: str = "so3"
    T: float = 1.0
    T_list: list = field(default_factory=list)
    steps: int = 100
    n_paths: int = 10
    n_bridges: int = 1
    n_samples: int = 0
    K: int = 0
    m: int = 1
    eta: float = 0.1
    metric: object = "identity"
    target: list = field(default_factory=list)
    output_dir: str = "."
    bridges_per_eval: int = 8
    proposal_scale: float = 0.3
    k_points: int = 5

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}"
            )
        if self.seed is None:
            raise ConfigError("seed is required (no wall-clock default)")
        self.seed = int(self.seed)
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        for key in ("T", "eta", "proposal_scale"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("steps", "n_paths", "n_bridges", "m", "bridges_per_eval", "k_points"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("n_samples", "K"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative")
        if any(t <= 0 for t in self.T_list):
            raise ConfigError("T_list entries must be positive")

    def metric_param(self, d):
        if isinstance(self.metric, str):
            if self.metric != "identity":
                raise ConfigError(f"bad metric literal {self.metric!r}")
            return MetricParam(np.eye(d))
        vals = [float(v) for v in self.metric]
        if d == 3 and len(vals) == 6:
            t00, t01, t02, t11, t12, t22 = vals
            return MetricParam(
                np.array([[t00, t01, t02], [t01, t11, t12], [t02, t12, t22]])
            )
        if len(vals) == d:
            return MetricParam(np.diag(vals))
        raise ConfigError(
            f"metric needs 'identity', {d} diagonal entries, or 6 upper-triangle entries"
        )


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_LIST_KEYS = {"T_list", "target", "metric"}
_INT_KEYS = {
    "seed",
    "steps",
    "n_paths",
    "n_bridges",
    "n_samples",
    "K",
    "m",
    "bridges_per_eval",
    "k_points",
}
_FLOAT_KEYS = {"T", "eta", "proposal_scale"}
_STR_KEYS = {"experiment", "space", "output_dir"}


def parse_config(text, experiment=None):
    """Parse a key=value or JSON config document into an ExperimentConfig."""
    text = text.strip()
    if text.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("JSON config must be an object")
        raw = {str(k): v for k, v in raw.items()}
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            raw[key.strip()] = val.strip()
    if experiment is not None:
        raw.setdefault("experiment", experiment)
        if raw["experiment"] != experiment:
            raise ConfigError(
                f"config names experiment {raw['experiment']!r} but {experiment!r} was requested"
            )
    unknown = set(raw) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "experiment" not in raw:
        raise ConfigError("experiment is required")
    kwargs = dict(_DEFAULTS.get(str(raw["experiment"]), {}))
    kwargs.update({k: _coerce(k, v) for k, v in raw.items()})
    if "seed" not in kwargs:
        raise ConfigError("seed is required (no wall-clock default)")
    return ExperimentConfig(**kwargs)


def _coerce(key, val):
    if key in _STR_KEYS:
        return str(val)
    if key in _INT_KEYS:
        try:
            return int(val)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {val!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(val)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {val!r}") from None
    if key in _LIST_KEYS:
        if key == "metric" and isinstance(val, str) and val.strip() == "identity":
            return "identity"
        if isinstance(val, str):
            items = [v for v in val.replace(",", " ").split() if v]
        elif isinstance(val, (list, tuple)):
            items = list(val)
        else:
            raise ConfigError(f"{key} must be a list, got {val!r}")
        try:
            return [float(v) for v in items]
        except (TypeError, ValueError):
            raise ConfigError(f"{key} entries must be numbers, got {val!r}") from None
    raise ConfigError(f"unknown config key {key!r}")


def render_config(config):
    """Serialize a config as key=value lines; parse(render(c)) == c."""
    lines = []
    for f in fields(ExperimentConfig):
        val = getattr(config, f.name)
        if f.name in _LIST_KEYS:
            if isinstance(val, str):
                lines.append(f"{f.name}={val}")
            elif val:
                lines.append(f"{f.name}=" + ",".join(repr(float(v)) for v in val))
        elif f.name in _FLOAT_KEYS:
            lines.append(f"{f.name}={float(val)!r}")
        else:
            lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# experiment bodies
# ---------------------------------------------------------------------------

class RunManifest:
    """Record of one experiment run: config, artifacts, checksums."""

    def __init__(self, config, files, wall_time_s):
        self.config = config
        self.files = dict(files)
        self.wall_time_s = float(wall_time_s)
        self.version = __version__

    def to_dict(self):
        return {
            "version": self.version,
            "config": render_config(self.config).strip().splitlines(),
            "files": self.files,
            "wall_time_s": self.wall_time_s,
        }


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _target_point(config, spec):
    """Interpret the target literal as a group element of ``spec``."""
    t = np.asarray(config.target, dtype=float)
    if spec.name == "so3":
        if t.shape != (3,):
            raise ConfigError("so3 target needs 3 rotation-vector coordinates")
        return so3_exp(t)
    if spec.name == "gl3":
        if t.shape != (9,):
            raise ConfigError("gl3 target needs 9 algebra coordinates")
        return gl_exp(t.reshape(3, 3))
    if t.shape != (spec.dim,):
        raise ConfigError(f"{spec.name} target needs {spec.dim} coordinates")
    return t


def _target_base_point(config, space):
    t = np.asarray(config.target, dtype=float)
    if isinstance(space, S2Space):
        if t.shape != (3,) or not np.linalg.norm(t) > 0:
            raise ConfigError("s2 target needs a nonzero 3-vector")
        return t / np.linalg.norm(t)
    if isinstance(space, SPDSpace):
        if t.shape != (6,):
            raise ConfigError("spd3 target needs 6 upper-triangle entries")
        t00, t01, t02, t11, t12, t22 = t
        V = np.array([[t00, t01, t02], [t01, t11, t12], [t02, t12, t22]])
        if np.any(np.linalg.eigvalsh(V) <= 0):
            raise ConfigError("spd3 target must be positive definite")
        return V
    raise ConfigError(f"space {space.name!r} has no base-point targets")


def _write_paths(path_batch, outdir, files):
    for i in range(path_batch.n_paths):
        name = "paths.csv" if i == 0 else f"paths_{i:03d}.csv"
        with open(os.path.join(outdir, name), "w") as fh:
            sde.write_path_csv(path_batch, i, fh)
        files.append(name)


def run_experiment(config):
    """Dispatch a validated config and write artifacts; returns the manifest."""
    t_start = time.perf_counter()
    outdir = config.output_dir
    os.makedirs(outdir, exist_ok=True)
    noise = sde.NoiseStream(config.seed).child(EXPERIMENTS.index(config.experiment))
    files = []

    if config.experiment in ("bm", "bridge", "kpoint"):
        spec = make_space(config.space)
        spec = spec.with_metric(config.metric_param(spec.dim).A)
        grid = sde.TimeGrid(config.T, config.steps)
        if config.experiment == "bm":
            batch = sde.sample_brownian_motion(spec, grid, noise, config.n_paths)
        elif config.experiment == "bridge":
            v = _target_point(config, spec)
            batch = sde.sample_guided_bridge(spec, v, grid, noise, config.n_paths)
        else:
            if spec.dim != 1 or spec.is_matrix:
                raise ConfigError("kpoint experiment runs on abelian:1")
            pts = fiber_mod.lattice_points(config.target[0], k=config.k_points)
            batch = fiber_mod.sample_kpoint_bridge(
                spec, fiber_mod.PointSetTarget(pts), grid, noise, config.n_paths
            )
        _write_paths(batch, outdir, files)

    elif config.experiment == "fermi":
        space = make_space(config.space)
        if not isinstance(space, HomogeneousSpec):
            raise ConfigError("fermi experiment needs a homogeneous space")
        grid = sde.TimeGrid(config.T, config.steps)
        v = _target_base_point(config, space)
        batch = fiber_mod.sample_fermi_bridge(space, v, grid, noise, config.n_paths)
        _write_paths(batch, outdir, files)

    elif config.experiment == "mh":
        grid = sde.TimeGrid(config.T, config.steps)
        if config.space.startswith("abelian"):
            spec = make_space(config.space)
            pts = fiber_mod.lattice_points(config.target[0], k=config.k_points)
            target = fiber_mod.PointSetTarget(pts)
            chain = fiber_mod.mh_fiber_sampler(
                target,
                config.K,
                config.bridges_per_eval,
                grid,
                noise,
                proposal_scale=config.proposal_scale,
                spec=spec,
            )
        elif config.space == "s2":
            space = make_space("s2")
            target = fiber_mod.FiberTarget(space, _target_base_point(config, space))
            chain = fiber_mod.mh_fiber_sampler(
                target,
                config.K,
                config.bridges_per_eval,
                grid,
                noise,
                proposal_scale=config.proposal_scale,
            )
        else:
            raise ConfigError("mh experiment runs on abelian:1 or s2")
        with open(os.path.join(outdir, "mh.csv"), "w") as fh:
            fiber_mod.write_mh_csv(chain, fh)
        files.append("mh.csv")

    elif config.experiment == "metric-mle":
        spec = make_space(config.space)
        true_metric = config.metric_param(spec.dim)
        data_spec = spec.with_metric(true_metric.A)
        grid = sde.TimeGrid(config.T, config.steps)
        data = sde.sample_brownian_motion(
            data_spec, grid, noise.child(0), config.n_samples, keep_path=False
        ).endpoints()
        trace = est.metric_mle(
            data,
            np.eye(spec.dim),
            config.eta,
            config.K,
            config.m,
            spec,
            noise.child(1),
            T=config.T,
            steps=config.steps,
        )
        with open(os.path.join(outdir, "trace.csv"), "w") as fh:
            trace.write_csv(fh)
        files.append("trace.csv")

    elif config.experiment == "spd-mean":
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(99,))
        )
        W = rng.normal(scale=0.2, size=(config.n_samples, 3, 3))
        sym = 0.5 * (W + np.swapaxes(W, -1, -2))
        data = gl_exp(sym)
        trace = est.diffusion_mean_spd(
            data,
            np.eye(3),
            config.eta,
            config.K,
            config.m,
            noise,
            T=config.T,
            steps=config.steps,
        )
        with open(os.path.join(outdir, "trace.csv"), "w") as fh:
            trace.write_csv(fh)
        files.append("trace.csv")

    elif config.experiment == "s2-kernel":
        thetas = np.linspace(0.0, np.pi * 0.95, config.n_samples)
        with open(os.path.join(outdir, "grid.csv"), "w") as fh:
            fh.write("theta,estimate,mc_std_error,exact\n")
            for i, th in enumerate(thetas):
                v = np.array([np.sin(th), 0.0, np.cos(th)])
                d = est.s2_kernel_is(
                    v, config.T, config.n_bridges, noise.child(i), steps=config.steps
                )
                ex = float(est.s2_exact_kernel(th, config.T, 20))
                fh.write(f"{th:.12g},{d.value:.12g},{d.mc_std_error:.12g},{ex:.12g}\n")
        files.append("grid.csv")

    elif config.experiment == "s2-aniso":
        metric = config.metric_param(3)
        T_list = config.T_list or [config.T]
        grids = est.pushforward_density_grid(
            metric, T_list, config.n_samples, config.n_bridges, noise
        )
        for g in grids:
            name = f"grid_T{g.T:g}.csv"
            with open(os.path.join(outdir, name), "w") as fh:
                g.write_csv(fh)
            files.append(name)

    checksums = {name: _sha256(os.path.join(outdir, name)) for name in files}
    manifest = RunManifest(config, checksums, time.perf_counter() - t_start)
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _apply_thread_cap():
    cap = os.environ.get("LIEBRIDGE_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="liebridge",
        description="Brownian motion and guided bridges on matrix Lie groups",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="key=value or JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output directory")
    parser.add_argument(
        "--print-config", action="store_true", help="echo the effective config and exit"
    )
    args = parser.parse_args(argv)

    _apply_thread_cap()
    try:
        with open(args.config) as fh:
            config = parse_config(fh.read(), experiment=args.experiment)
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.output_dir = args.out
        if args.print_config:
            sys.stdout.write(render_config(config))
            return 0
        manifest = run_experiment(config)
    except (ConfigError, OSError, ValueError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(record) + "\n")
        return 1
    sys.stdout.write(
        f"wrote {len(manifest.files)} artifact(s) to {config.output_dir} "
        f"in {manifest.wall_time_s:.2f}s\n"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
