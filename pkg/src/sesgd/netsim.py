"""Discrete-event model of ring collectives on a full-duplex network.

A handshake is one ring round: every worker simultaneously sends one slice to
its successor and receives one from its predecessor. A send of ``s`` bytes
takes ``latency + s / bandwidth``; rounds are bulk-synchronous, so a round ends
when its slowest transfer does. The latency share of that time is idle time.

The overlap scheduler releases layer gradients in backward order and runs at
most one allreduce at a time per worker link, first come first served. This is
one consistent reading of compute/communication overlap, not the only one.
"""

from __future__ import annotations

import heapq
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

from .collectives import slice_bounds
from .core import NetworkConfig


@dataclass(frozen=True)
class LinkModel:
    config: NetworkConfig

    @property
    def latency(self) -> float:
        return self.config.latency

    @property
    def bandwidth(self) -> float:
        return self.config.bandwidth

    def payload_time(self, nbytes: int) -> float:
        return nbytes / self.config.bandwidth

    def transfer_time(self, nbytes: int) -> float:
        return self.config.latency + nbytes / self.config.bandwidth


@dataclass
class CommStats:
    """Per-worker communication accounting.

    ``handshakes`` is the count for each worker (identical across workers in
    the bulk-synchronous model); ``bytes_sent`` is indexed by ring position.
    ``total_time`` covers communication only.
    """

    handshakes: int = 0
    bytes_sent: list[int] = field(default_factory=list)
    busy_time: float = 0.0
    idle_time: float = 0.0
    total_time: float = 0.0

    def merge(self, other: "CommStats") -> None:
        self.handshakes += other.handshakes
        if len(self.bytes_sent) < len(other.bytes_sent):
            self.bytes_sent.extend([0] * (len(other.bytes_sent) - len(self.bytes_sent)))
        for i, v in enumerate(other.bytes_sent):
            self.bytes_sent[i] += v
        self.busy_time += other.busy_time
        self.idle_time += other.idle_time
        self.total_time += other.total_time


class EventLoop:
    """Minimal time-ordered event queue. Ties run in scheduling order."""

    def __init__(self) -> None:
        self.now = 0.0
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()

    def at(self, when: float, action: Callable[[], None]) -> None:
        if when < self.now:
            raise ValueError(f"cannot schedule at {when} before now={self.now}")
        heapq.heappush(self._queue, (when, next(self._seq), action))

    def after(self, delay: float, action: Callable[[], None]) -> None:
        self.at(self.now + delay, action)

    def run(self) -> float:
        while self._queue:
            when, _, action = heapq.heappop(self._queue)
            self.now = when
            action()
        return self.now


class _RingProcess:
    """Drives one ring allreduce of ``nbytes`` over ``m`` workers inside a loop."""

    def __init__(self, loop: EventLoop, m: int, nbytes: int, link: LinkModel,
                 on_done: Callable[[CommStats], None]):
        self.loop = loop
        self.m = m
        self.link = link
        self.on_done = on_done
        self.slices = [slice_bounds(nbytes, m, s) for s in range(m)]
        self.stats = CommStats(bytes_sent=[0] * m)
        self.start = 0.0
        self.round = 0
        self.pending = 0
        self.round_start = 0.0

    def begin(self) -> None:
        self.start = self.loop.now
        if self.m == 1:
            self.on_done(self.stats)
            return
        self._round()

    def _slice_sent_by(self, p: int) -> int:
        m, r = self.m, self.round
        s = (p - r - 1) % m if r < m - 1 else (p - (r - m + 1)) % m
        a, b = self.slices[s]
        return b - a

    def _round(self) -> None:
        self.pending = self.m
        self.round_start = self.loop.now
        for p in range(self.m):
            size = self._slice_sent_by(p)
            self.stats.bytes_sent[p] += size
            self.loop.after(self.link.transfer_time(size), self._arrived)

    def _arrived(self) -> None:
        self.pending -= 1
        if self.pending:
            return
        # round barrier: all m transfers of this handshake are done
        elapsed = self.loop.now - self.round_start
        self.stats.handshakes += 1
        self.stats.idle_time += self.link.latency
        self.stats.busy_time += elapsed - self.link.latency
        self.round += 1
        if self.round < 2 * (self.m - 1):
            self._round()
            return
        self.stats.total_time = self.loop.now - self.start
        self.on_done(self.stats)


def simulate_ring_allreduce(m: int, message_bytes: int, link: LinkModel) -> tuple[float, CommStats]:
    """Elapsed seconds and per-worker stats for one ring allreduce."""
    if m < 1:
        raise ValueError(f"group size must be >= 1, got {m}")
    if message_bytes < 0:
        raise ValueError(f"message size must be >= 0, got {message_bytes}")
    loop = EventLoop()
    result: list[CommStats] = []
    _RingProcess(loop, m, int(message_bytes), link, result.append).begin()
    elapsed = loop.run()
    return elapsed, result[0]


@dataclass(frozen=True)
class Layer:
    index: int
    param_bytes: int
    compute_s: float


@dataclass(frozen=True)
class LayerProfile:
    """Layers in gradient-availability order (output layer first)."""

    layers: tuple[Layer, ...]
    name: str = "custom"

    def __post_init__(self):
        for layer in self.layers:
            if layer.param_bytes < 0 or layer.compute_s < 0:
                raise ValueError(f"negative size or compute time in layer {layer.index}")

    @classmethod
    def from_records(cls, records, name: str = "custom") -> "LayerProfile":
        layers = []
        for i, rec in enumerate(records):
            if set(rec) != {"bytes", "compute_s"}:
                raise ValueError(f"layer {i}: expected keys 'bytes' and 'compute_s', got {sorted(rec)}")
            layers.append(Layer(i, int(rec["bytes"]), float(rec["compute_s"])))
        return cls(tuple(layers), name)

    @classmethod
    def uniform(cls, count: int, nbytes: int, compute_s: float = 0.0, name: str = "uniform") -> "LayerProfile":
        return cls(tuple(Layer(i, nbytes, compute_s) for i in range(count)), name)

    def to_records(self) -> list[dict]:
        return [{"bytes": layer.param_bytes, "compute_s": layer.compute_s} for layer in self.layers]

    @property
    def total_compute(self) -> float:
        return sum(layer.compute_s for layer in self.layers)

    @property
    def total_bytes(self) -> int:
        return sum(layer.param_bytes for layer in self.layers)

    def __len__(self) -> int:
        return len(self.layers)


BUNDLED_PROFILES = ("resnet18-like", "densenet121-like", "vgg16-like")


def load_profile(name_or_path: str | Path) -> LayerProfile:
    """Load a bundled profile by name or a JSON file of ``{"bytes", "compute_s"}`` records."""
    if str(name_or_path) in BUNDLED_PROFILES:
        text = resources.files("sesgd").joinpath(f"profiles/{name_or_path}.json").read_text()
        name = str(name_or_path)
    else:
        path = Path(name_or_path)
        text = path.read_text()
        name = path.stem
    records = json.loads(text)
    if not isinstance(records, list) or not records:
        raise ValueError(f"profile {name!r} must be a non-empty JSON array")
    return LayerProfile.from_records(records, name)


def simulate_overlapped_iteration(profile: LayerProfile, group_size: int,
                                  link: LinkModel) -> tuple[float, CommStats]:
    """Backward pass overlapped with per-layer ring allreduces on one serial link.

    Layer ``l``'s gradient is ready once the compute of layers ``0..l`` has run;
    its allreduce starts when it is ready and the link is free. Returns the
    finish time of the last allreduce (or of compute, if later) and the
    aggregated communication stats.
    """
    if len(profile) == 0:
        raise ValueError("profile has no layers")
    if group_size < 1:
        raise ValueError(f"group size must be >= 1, got {group_size}")
    loop = EventLoop()
    stats = CommStats(bytes_sent=[0] * group_size)
    waiting: deque[Layer] = deque()
    link_busy = [False]
    finished = [0.0]

    def start_next() -> None:
        if link_busy[0] or not waiting:
            return
        layer = waiting.popleft()
        link_busy[0] = True
        _RingProcess(loop, group_size, layer.param_bytes, link, done).begin()

    def done(layer_stats: CommStats) -> None:
        stats.merge(layer_stats)
        finished[0] = loop.now
        link_busy[0] = False
        start_next()

    def ready(layer: Layer) -> Callable[[], None]:
        def action() -> None:
            waiting.append(layer)
            start_next()
        return action

    clock = 0.0
    for layer in profile.layers:
        clock += layer.compute_s
        loop.at(clock, ready(layer))
    end = loop.run()
    return max(end, finished[0]), stats


def idle_proportion(stats: CommStats) -> float:
    """Share of communication time spent on handshake latency."""
    if not stats.total_time > 0:
        raise ValueError("communication time is zero; idle proportion undefined")
    return stats.idle_time / stats.total_time
