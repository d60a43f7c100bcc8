"""Command-line experiment runner.

Every subcommand reads a JSON config (unknown keys are rejected) and writes
plot-ready CSV/JSON files into the output directory. Errors go to stderr as a
single line starting with ``error:``; invalid configs exit 2, numerical
blow-ups exit 3.

Seed precedence: ``--seed`` flag, then ``SESGD_SIM_SEED``, then the config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import SimNetwork, run_training
from .core import ALGORITHMS, ConfigError, NetworkConfig, NumericalError, TrainConfig
from .costmodel import idle_table, profile_time
from .models import (LogisticTask, MLPTask, Task, load_csv_dataset, make_logistic, make_mlp,
                     make_quadratic, surrogate_f_star)
from .netsim import BUNDLED_PROFILES, LayerProfile, LinkModel, load_profile
from .theory import run_campaign

SEED_ENV = "SESGD_SIM_SEED"

_TASK_KEYS = {
    "quadratic": {"kind", "dim", "n_samples", "seed", "spread", "center", "x0_offset"},
    "logistic": {"kind", "dim", "n_samples", "seed", "separation", "l2", "csv", "x0_offset"},
    "mlp": {"kind", "in_dim", "hidden", "classes", "n_samples", "seed", "separation", "csv", "x0_offset"},
}


def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class SweepSpec:
    taus: list[float] = field(default_factory=lambda: [1e-4, 5e-4, 1e-3, 2e-3, 5e-3])
    n_values: list[int] = field(default_factory=lambda: [4, 16])


@dataclass
class TheorySpec:
    epsilon: float = 0.05
    seeds: int = 20
    probe_count: int = 32
    probe_radius: float = 1.0


@dataclass
class ExperimentConfig:
    train: TrainConfig
    network: NetworkConfig
    task: dict
    algorithm: str = "sesgd"
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    profile: str | None = None
    profiles: list[str] = field(default_factory=lambda: list(BUNDLED_PROFILES))
    out_dir: str = "out"
    sweep: SweepSpec = field(default_factory=SweepSpec)
    theory: TheorySpec = field(default_factory=TheorySpec)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        for key in ("train", "network", "task"):
            if key not in data:
                raise ConfigError(f"config: missing section {key!r}")
        kwargs = dict(data)
        kwargs["train"] = _strict(TrainConfig, data["train"], "train")
        kwargs["network"] = _strict(NetworkConfig, data["network"], "network")
        kwargs["task"] = _check_task(data["task"])
        if "sweep" in data:
            kwargs["sweep"] = _strict(SweepSpec, data["sweep"], "sweep")
        if "theory" in data:
            kwargs["theory"] = _strict(TheorySpec, data["theory"], "theory")
        cfg = cls(**kwargs)
        for name in [cfg.algorithm, *cfg.algorithms]:
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}")
        return cfg


def _check_task(spec) -> dict:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("task: expected an object with a 'kind'")
    kind = spec["kind"]
    if kind not in _TASK_KEYS:
        raise ConfigError(f"task: unknown kind {kind!r}")
    unknown = sorted(set(spec) - _TASK_KEYS[kind])
    if unknown:
        raise ConfigError(f"task: unknown keys {unknown} for kind {kind!r}")
    return dict(spec)


def build_task(spec: dict) -> Task:
    kind = spec["kind"]
    seed = spec.get("seed", 0)
    if kind == "quadratic":
        return make_quadratic(spec.get("dim", 2), spec.get("n_samples", 256), seed,
                              spread=spec.get("spread", 1.0), center=spec.get("center", 0.0))
    if kind == "logistic":
        if "csv" in spec:
            X, y = load_csv_dataset(spec["csv"])
            X = np.hstack([X, np.ones((X.shape[0], 1))])
            return LogisticTask(X, y, spec.get("l2", 5e-4))
        return make_logistic(spec.get("dim", 10), spec.get("n_samples", 2048), seed,
                             separation=spec.get("separation", 1.0), l2=spec.get("l2", 5e-4))
    if "csv" in spec:
        X, y = load_csv_dataset(spec["csv"])
        task = MLPTask(X, y, spec.get("hidden", 16), int(spec.get("classes", y.max() + 1)), init_seed=seed)
    else:
        task = make_mlp(spec.get("in_dim", 4), spec.get("hidden", 16), spec.get("classes", 3),
                        spec.get("n_samples", 1024), seed, separation=spec.get("separation", 3.0))
    task.f_star = surrogate_f_star(task)
    return task


def initial_point(task: Task, spec: dict) -> np.ndarray:
    """``x0_offset`` shifts the start away from the optimum (convex tasks only)."""
    if "x0_offset" not in spec:
        return task.initial_params()
    optimum = getattr(task, "optimum", None)
    if optimum is None:
        raise ConfigError("task: x0_offset needs a task with a known optimum")
    return optimum + float(spec["x0_offset"])


def load_config(path: str | os.PathLike, args: argparse.Namespace) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(data)
    seed = None
    if os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV], 0)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _profile_for(cfg: ExperimentConfig) -> LayerProfile | None:
    return load_profile(cfg.profile) if cfg.profile else None


def _train_cell(args):
    cfg, seed = args
    task = build_task(cfg.task)
    train = dataclasses.replace(cfg.train, seed=seed)
    link = LinkModel(cfg.network)
    trace, final = run_training(cfg.algorithm, train, task, link, profile=_profile_for(cfg),
                                x0=initial_point(task, cfg.task))
    return seed, trace, final, task.loss(final)


def cmd_train(cfg: ExperimentConfig, seeds: int = 1, parallel: int = 1) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(cfg, cfg.train.seed + s) for s in range(seeds)]
    results = _map(_train_cell, cells, parallel)
    for seed, trace, final, loss in results:
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite final loss for seed {seed}")
        suffix = "" if seeds == 1 else f"_s{seed}"
        _write_csv(out / f"trace{suffix}.csv", ["iter", "sim_time_s", "handshakes", "loss", "max_divergence"],
                   ([r.t, r.sim_clock_s, r.handshakes, r.loss, r.max_divergence] for r in trace.records))
        _write_json(out / f"final_model{suffix}.json", {
            "algorithm": cfg.algorithm, "seed": seed, "iterations": len(trace),
            "loss": loss, "params": [float(v) for v in final],
        })
    return 0


def schedule(algorithm: str, train: TrainConfig) -> list[int]:
    """Group size used for communication in each iteration of one period (1 = none)."""
    n, m, H = train.n, train.group_size, train.local_period
    if algorithm == "ring-sgd":
        return [n]
    if algorithm == "sesgd":
        return [m]
    if algorithm == "local-sgd":
        return [1] * (H - 1) + [n]
    if algorithm == "local-sesgd":
        return [1] * (H - 1) + [m]
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def sweep_rows(cfg: ExperimentConfig, profile: LayerProfile) -> list[tuple]:
    rows = []
    for tau in cfg.sweep.taus:
        link = LinkModel(NetworkConfig(cfg.network.bandwidth, tau))
        net = SimNetwork(link, profile)
        for algorithm in cfg.algorithms:
            sizes = schedule(algorithm, cfg.train)
            sim = [net.iteration(m) for m in sizes]
            sim_time = sum(e for e, _ in sim) / len(sizes)
            handshakes = sum(s.handshakes for _, s in sim) / len(sizes)
            analytic = sum(profile_time(profile, link, m) for m in sizes) / len(sizes)
            rows.append((tau, algorithm, sim_time, handshakes, analytic))
    return rows


def cmd_latency_sweep(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.profile:
        profile = load_profile(cfg.profile)
    else:
        profile = SimNetwork.for_task(LinkModel(cfg.network), build_task(cfg.task)).profile
    _write_csv(out / "sweep.csv", ["tau_s", "algorithm", "sim_iter_time_s", "handshakes", "analytic_iter_time_s"],
               sweep_rows(cfg, profile))
    return 0


def cmd_idle_table(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profiles = [load_profile(p) for p in cfg.profiles]
    rows = idle_table(profiles, cfg.sweep.n_values, LinkModel(cfg.network))
    _write_csv(out / "idle.csv", ["model", "workers", "idle_s", "proportion"],
               ((r.model, r.workers, r.idle_s, r.proportion) for r in rows))
    return 0


def cmd_theory(cfg: ExperimentConfig, seeds: int | None = None, parallel: int = 1) -> int:
    n, k = cfg.train.n, cfg.train.k
    if k >= n:
        raise ConfigError(f"theory needs k < n, got n={n}, k={k}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = build_task(cfg.task)
    spec = cfg.theory
    report = run_campaign(task, n, k, spec.epsilon, seeds or spec.seeds, b=cfg.train.b,
                          x0=initial_point(task, cfg.task), probe_count=spec.probe_count,
                          probe_radius=spec.probe_radius, base_seed=cfg.train.seed,
                          link=LinkModel(cfg.network), parallel=parallel)
    _write_json(out / "theory_report.json", report)
    return 0


def _map(fn, items, parallel: int):
    if parallel > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sesgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "latency-sweep", "idle-table", "theory"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seeds", type=int, default=None, help="number of seeds to run")
        p.add_argument("--seed", type=int, default=None, help=f"base seed (overrides {SEED_ENV} and config)")
        p.add_argument("--parallel", type=int, default=1, help="worker processes for independent cells")
    sub.add_parser("version")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "version":
        print(__version__)
        return 0
    try:
        with np.errstate(all="ignore"):
            return _dispatch(args)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args)
    if args.seeds is not None and args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    if args.command == "train":
        return cmd_train(cfg, args.seeds or 1, args.parallel)
    if args.command == "latency-sweep":
        return cmd_latency_sweep(cfg)
    if args.command == "idle-table":
        return cmd_idle_table(cfg)
    return cmd_theory(cfg, args.seeds, args.parallel)


if __name__ == "__main__":
    sys.exit(main())
