"""Ring-AllReduce over in-memory workers: scatter-reduce then all-gather.

Member ``p`` of an ``m``-member ring sends to ``(p + 1) % m``. In scatter-reduce
step ``r`` it forwards its partial sum of slice ``(p - r - 1) % m``; the receiver
adds its own contribution. After ``m - 1`` steps member ``s`` owns the complete
sum of slice ``s``, which was accumulated in ring order starting at member
``(s + 1) % m``. The owner divides by ``m`` once, and ``m - 1`` all-gather steps
circulate the finished slices so every member ends with identical bytes.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RingGroup:
    members: tuple[int, ...]

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("ring group must have at least one member")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"duplicate members in {self.members}")
        if list(self.members) != sorted(self.members):
            raise ValueError(f"ring members must be ascending, got {self.members}")

    @property
    def size(self) -> int:
        return len(self.members)

    def successor(self, worker: int) -> int:
        p = self.members.index(worker)
        return self.members[(p + 1) % self.size]

    def predecessor(self, worker: int) -> int:
        p = self.members.index(worker)
        return self.members[(p - 1) % self.size]


def slice_bounds(length: int, m: int, s: int) -> tuple[int, int]:
    """Half-open range of slice ``s`` when ``length`` items are cut into ``m``."""
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    if not 0 <= s < m:
        raise ValueError(f"slice index {s} outside [0, {m})")
    return (s * length) // m, ((s + 1) * length) // m


def _check_inputs(group: RingGroup, inputs: Sequence[np.ndarray]) -> int:
    if len(inputs) != group.size:
        raise ValueError(f"{len(inputs)} inputs for a group of {group.size}")
    lengths = {np.shape(x) for x in inputs}
    if len(lengths) != 1:
        raise ValueError(f"input length mismatch: {sorted(lengths)}")
    (shape,) = lengths
    if len(shape) != 1:
        raise ValueError("inputs must be 1-D")
    return shape[0]


def _lockstep(inputs: Sequence[np.ndarray], length: int) -> list[np.ndarray]:
    m = len(inputs)
    buf = np.array(inputs, dtype=np.float64)
    bounds = [slice_bounds(length, m, s) for s in range(m)]
    # Within one step member p writes slice (p-r-2) and sends slice (p-r-1),
    # so updating in place never reads a value written in the same step.
    for r in range(m - 1):
        for p in range(m):
            a, b = bounds[(p - r - 1) % m]
            q = (p + 1) % m
            buf[q, a:b] = buf[p, a:b] + buf[q, a:b]
    for s in range(m):
        a, b = bounds[s]
        buf[s, a:b] = buf[s, a:b] / m
    for r in range(m - 1):
        for p in range(m):
            a, b = bounds[(p - r) % m]
            buf[(p + 1) % m, a:b] = buf[p, a:b]
    return [buf[p].copy() for p in range(m)]


def _threaded(inputs: Sequence[np.ndarray], length: int) -> list[np.ndarray]:
    m = len(inputs)
    bounds = [slice_bounds(length, m, s) for s in range(m)]
    inbox = [queue.Queue() for _ in range(m)]
    out: list[np.ndarray | None] = [None] * m
    errors: list[BaseException] = []

    def worker(p: int) -> None:
        try:
            x = np.array(inputs[p], dtype=np.float64)
            succ = inbox[(p + 1) % m]
            for r in range(m - 1):
                a, b = bounds[(p - r - 1) % m]
                succ.put((r, x[a:b].copy()))
                step, partial = inbox[p].get()
                assert step == r
                a, b = bounds[(p - r - 2) % m]
                x[a:b] = partial + x[a:b]
            a, b = bounds[p]
            x[a:b] = x[a:b] / m
            for r in range(m - 1):
                a, b = bounds[(p - r) % m]
                succ.put((m - 1 + r, x[a:b].copy()))
                step, done = inbox[p].get()
                assert step == m - 1 + r
                a, b = bounds[(p - r - 1) % m]
                x[a:b] = done
            out[p] = x
        except BaseException as exc:  # surfaced in the caller
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(p,)) for p in range(m)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return out  # type: ignore[return-value]


def ring_allreduce_mean(
    group: RingGroup, inputs: Sequence[np.ndarray], mode: str = "lockstep"
) -> tuple[list[np.ndarray], int]:
    """Elementwise mean of ``inputs`` delivered to every member of ``group``.

    ``inputs[p]`` belongs to ``group.members[p]``. Returns the per-member
    outputs (same order) and the number of handshakes each member performed.
    ``mode="threaded"`` runs one thread per member exchanging slices through
    FIFO queues and yields byte-identical results.
    """
    length = _check_inputs(group, inputs)
    m = group.size
    if m == 1:
        return [np.array(inputs[0], dtype=np.float64)], 0
    if mode == "lockstep":
        outputs = _lockstep(inputs, length)
    elif mode == "threaded":
        outputs = _threaded(inputs, length)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return outputs, 2 * (m - 1)

