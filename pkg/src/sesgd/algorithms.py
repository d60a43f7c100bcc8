"""Ring-SGD, Local-SGD, SESGD and Local-SESGD on simulated workers.

All workers advance in lockstep inside one process. Each step draws minibatches
from the workers' private shards, runs the numerical collectives, and charges
simulated time for the iteration through :class:`SimNetwork`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .collectives import RingGroup, ring_allreduce_mean, slice_bounds
from .core import ALGORITHMS, MASK64, NumericalError, Rng64, TrainConfig, mix64, vec_axpy
from .models import Task
from .netsim import CommStats, LayerProfile, LinkModel, simulate_overlapped_iteration
from .shuffle import GroupAssignment, generate_groups

SAMPLE_SALT = 0xDA7A


def sample_seed(seed: int, worker: int) -> int:
    return mix64((seed ^ (worker + 1) ^ SAMPLE_SALT) & MASK64)


@dataclass
class WorkerState:
    worker: int
    params: np.ndarray
    staging: np.ndarray
    shard: tuple[int, int]
    sample_rng: Rng64
    velocity: np.ndarray | None = None

    def draw_minibatch(self, b: int) -> list[int]:
        start, end = self.shard
        return [start + self.sample_rng.bounded(end - start) for _ in range(b)]


def init_workers(task: Task, cfg: TrainConfig, x0: np.ndarray | None = None) -> list[WorkerState]:
    """Every worker starts from the same parameters on its own contiguous shard."""
    if task.n_samples < cfg.n:
        raise ValueError(f"{task.n_samples} samples cannot be sharded over {cfg.n} workers")
    x0 = task.initial_params() if x0 is None else np.asarray(x0, dtype=np.float64)
    if x0.shape != (task.dim,):
        raise ValueError(f"initial parameters have shape {x0.shape}, task dim is {task.dim}")
    states = []
    for w in range(cfg.n):
        states.append(WorkerState(
            worker=w,
            params=x0.copy(),
            staging=x0.copy(),
            shard=slice_bounds(task.n_samples, cfg.n, w),
            sample_rng=Rng64(sample_seed(cfg.seed, w)),
            velocity=np.zeros(task.dim) if cfg.momentum else None,
        ))
    return states


class SimNetwork:
    """Per-iteration simulated time for a layer profile, cached by group size."""

    def __init__(self, link: LinkModel, profile: LayerProfile):
        self.link = link
        self.profile = profile
        self._cache: dict[int, tuple[float, CommStats]] = {}

    def iteration(self, group_size: int) -> tuple[float, CommStats]:
        if group_size not in self._cache:
            self._cache[group_size] = simulate_overlapped_iteration(self.profile, group_size, self.link)
        return self._cache[group_size]

    @classmethod
    def for_task(cls, link: LinkModel, task: Task) -> "SimNetwork":
        # one fp64 tensor holding every parameter, no compute cost
        return cls(link, LayerProfile.uniform(1, 8 * task.dim, 0.0, name=f"{task.name}-flat"))


@dataclass
class StepStats:
    handshakes: int
    iter_time: float
    synced: bool
    digest: str
    max_grad_norm: float


def _local_direction(state: WorkerState, task: Task, cfg: TrainConfig) -> tuple[np.ndarray, float]:
    g = task.grad(state.params, state.draw_minibatch(cfg.b))
    norm = float(np.linalg.norm(g))
    if state.velocity is not None:
        state.velocity = cfg.momentum * state.velocity + g
        return state.velocity, norm
    return g, norm


def _global_group(n: int, t: int) -> GroupAssignment:
    return GroupAssignment(iteration=t, groups=(tuple(range(n)),))


def _average_within(states: list[WorkerState], groups: GroupAssignment, values: Callable[[WorkerState], np.ndarray],
                    mode: str) -> None:
    for members in groups.groups:
        outs, _ = ring_allreduce_mean(RingGroup(members), [values(states[w]) for w in members], mode)
        for w, out in zip(members, outs):
            states[w].params = out


def ring_sgd_step(states: list[WorkerState], task: Task, cfg: TrainConfig, net: SimNetwork, t: int) -> StepStats:
    """Average minibatch gradients over all workers, then take the same step everywhere."""
    n = len(states)
    directions, norms = zip(*(_local_direction(s, task, cfg) for s in states))
    group = RingGroup(tuple(range(n)))
    averaged, handshakes = ring_allreduce_mean(group, list(directions), cfg.collective_mode)
    for s, g in zip(states, averaged):
        s.params = vec_axpy(-cfg.eta, g, s.params)
    elapsed, stats = net.iteration(n)
    return StepStats(stats.handshakes, elapsed, True, _global_group(n, t).digest(), max(norms))


def local_sgd_step(states: list[WorkerState], task: Task, cfg: TrainConfig, net: SimNetwork, t: int) -> StepStats:
    """One local step; every ``local_period`` iterations average parameters globally."""
    n = len(states)
    norms = []
    for s in states:
        d, norm = _local_direction(s, task, cfg)
        s.params = vec_axpy(-cfg.eta, d, s.params)
        norms.append(norm)
    if (t + 1) % cfg.local_period:
        elapsed, _ = net.iteration(1)
        return StepStats(0, elapsed, False, "", max(norms))
    groups = _global_group(n, t)
    _average_within(states, groups, lambda s: s.params, cfg.collective_mode)
    elapsed, stats = net.iteration(n)
    return StepStats(stats.handshakes, elapsed, True, groups.digest(), max(norms))


def _stage_local_update(states, task, cfg) -> list[float]:
    # x_hat = x - eta * (1/b) sum_j grad f(x; xi_j), gradients at the iteration-start x
    norms = []
    for s in states:
        d, norm = _local_direction(s, task, cfg)
        s.staging = vec_axpy(-cfg.eta, d, s.params)
        norms.append(norm)
    return norms


def sesgd_step(states: list[WorkerState], task: Task, cfg: TrainConfig, net: SimNetwork, t: int) -> StepStats:
    """Local update into the staging copy, reshuffle groups, average staging within groups."""
    n = len(states)
    norms = _stage_local_update(states, task, cfg)
    groups = generate_groups(cfg.seed, t, n, cfg.k)
    _average_within(states, groups, lambda s: s.staging, cfg.collective_mode)
    elapsed, stats = net.iteration(n // cfg.k)
    return StepStats(stats.handshakes, elapsed, True, groups.digest(), max(norms))


def local_sesgd_step(states: list[WorkerState], task: Task, cfg: TrainConfig, net: SimNetwork, t: int) -> StepStats:
    """SESGD whose shuffle and group average only fire every ``local_period`` iterations."""
    n = len(states)
    norms = _stage_local_update(states, task, cfg)
    if (t + 1) % cfg.local_period:
        for s in states:
            s.params = s.staging.copy()
        elapsed, _ = net.iteration(1)
        return StepStats(0, elapsed, False, "", max(norms))
    groups = generate_groups(cfg.seed, t, n, cfg.k)
    _average_within(states, groups, lambda s: s.staging, cfg.collective_mode)
    elapsed, stats = net.iteration(n // cfg.k)
    return StepStats(stats.handshakes, elapsed, True, groups.digest(), max(norms))


STEP_FUNCTIONS: dict[str, Callable[..., StepStats]] = {
    "ring-sgd": ring_sgd_step,
    "local-sgd": local_sgd_step,
    "sesgd": sesgd_step,
    "local-sesgd": local_sesgd_step,
}
assert tuple(STEP_FUNCTIONS) == ALGORITHMS


def final_global_average(states: list[WorkerState], mode: str = "lockstep") -> np.ndarray:
    """Ring-allreduce the final parameters over all workers; every worker keeps the mean."""
    outs, _ = ring_allreduce_mean(RingGroup(tuple(s.worker for s in states)), [s.params for s in states], mode)
    for s, out in zip(states, outs):
        s.params = out
    return outs[0].copy()


@dataclass
class TraceRecord:
    """State after iteration ``t`` has completed."""

    t: int
    sim_clock_s: float
    handshakes: int
    loss: float
    max_divergence: float
    digest: str
    synced: bool
    max_grad_norm: float


@dataclass
class SimTrace:
    algorithm: str
    records: list[TraceRecord] = field(default_factory=list)
    # worker-mean parameters at the start of every iteration, plus the end state
    mean_snapshots: list[np.ndarray] | None = None
    worker_snapshots: list[np.ndarray] | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


def _max_divergence(states: list[WorkerState]) -> float:
    X = np.stack([s.params for s in states])
    n = len(states)
    best = 0.0
    for i in range(n - 1):
        best = max(best, float(np.max(np.linalg.norm(X[i + 1:] - X[i], axis=1))))
    return best


def run_training(algorithm: str, cfg: TrainConfig, task: Task, link: LinkModel,
                 profile: LayerProfile | None = None, x0: np.ndarray | None = None,
                 keep_snapshots: bool = False, keep_worker_snapshots: bool = False,
                 step_fn: Callable[..., StepStats] | None = None) -> tuple[SimTrace, np.ndarray]:
    """Run ``cfg.T`` iterations of ``algorithm`` and return the trace and global-mean model."""
    if step_fn is None:
        if algorithm not in STEP_FUNCTIONS:
            raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {', '.join(ALGORITHMS)}")
        step_fn = STEP_FUNCTIONS[algorithm]
    net = SimNetwork(link, profile) if profile is not None else SimNetwork.for_task(link, task)
    states = init_workers(task, cfg, x0)
    trace = SimTrace(algorithm)
    if keep_snapshots:
        trace.mean_snapshots = [np.mean([s.params for s in states], axis=0)]
    if keep_worker_snapshots:
        trace.worker_snapshots = [np.stack([s.params for s in states])]
    clock = 0.0
    for t in range(cfg.T):
        st = step_fn(states, task, cfg, net, t)
        clock += st.iter_time
        mean = np.mean([s.params for s in states], axis=0)
        loss = task.loss(mean)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at iteration {t}")
        trace.records.append(TraceRecord(
            t=t, sim_clock_s=clock, handshakes=st.handshakes, loss=loss,
            max_divergence=_max_divergence(states), digest=st.digest, synced=st.synced,
            max_grad_norm=st.max_grad_norm,
        ))
        if keep_snapshots:
            trace.mean_snapshots.append(mean)
        if keep_worker_snapshots:
            trace.worker_snapshots.append(np.stack([s.params for s in states]))
    final = final_global_average(states, cfg.collective_mode)
    return trace, final
