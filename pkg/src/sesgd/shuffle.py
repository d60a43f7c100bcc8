"""Seed-synchronized per-iteration grouping of workers.

Every worker calls :func:`generate_groups` with the same shared seed and gets
the same partition, so no messages are needed to agree on the groups.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import GOLDEN_GAMMA, MASK64, Rng64, mix64, mix64_array


@dataclass(frozen=True)
class GroupAssignment:
    iteration: int
    groups: tuple[tuple[int, ...], ...]

    @property
    def membership(self) -> dict[int, int]:
        return {w: g for g, members in enumerate(self.groups) for w in members}

    def group_of(self, worker: int) -> tuple[int, ...]:
        for members in self.groups:
            if worker in members:
                return members
        raise KeyError(worker)

    def digest(self) -> str:
        text = ";".join(",".join(map(str, g)) for g in self.groups)
        return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()


def _check_nk(n: int, k: int) -> None:
    if k < 1 or n < 1:
        raise ValueError(f"need n >= 1 and k >= 1, got n={n}, k={k}")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if n % k:
        raise ValueError(f"k={k} does not divide n={n}")


def iteration_seed(seed: int, t: int) -> int:
    return mix64((seed ^ t) & MASK64)


def _canonical(perm, n: int, k: int) -> tuple[tuple[int, ...], ...]:
    m = n // k
    groups = [tuple(sorted(int(w) for w in perm[j * m:(j + 1) * m])) for j in range(k)]
    return tuple(sorted(groups))


def shuffled_workers(seed: int, t: int, n: int) -> list[int]:
    """Fisher-Yates permutation of ``range(n)`` for iteration ``t``."""
    rng = Rng64(iteration_seed(seed, t))
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.bounded(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def generate_groups(seed: int, t: int, n: int, k: int) -> GroupAssignment:
    """Partition ``n`` workers into ``k`` equal groups for iteration ``t``.

    Group ``j`` is the slice ``[j*n/k, (j+1)*n/k)`` of a uniformly shuffled
    permutation. Members are sorted ascending and groups are ordered by their
    smallest member, so the labels carry no meaning.
    """
    _check_nk(n, k)
    if t < 0:
        raise ValueError(f"iteration must be >= 0, got {t}")
    perm = shuffled_workers(seed, t, n)
    return GroupAssignment(iteration=t, groups=_canonical(perm, n, k))


def shuffled_workers_batch(seed: int, ts, n: int) -> np.ndarray:
    """Permutations for many iterations at once; row ``r`` equals
    ``shuffled_workers(seed, ts[r], n)`` exactly."""
    ts = np.asarray(ts, dtype=np.uint64)
    state = mix64_array(np.uint64(seed & MASK64) ^ ts)
    perm = np.tile(np.arange(n, dtype=np.int64), (len(ts), 1))
    rows = np.arange(len(ts))
    gamma = np.uint64(GOLDEN_GAMMA)
    for i in range(n - 1, 0, -1):
        bound = i + 1
        limit = ((1 << 64) // bound) * bound
        state = state + gamma
        draw = mix64_array(state)
        if limit <= MASK64:
            rejected = draw >= np.uint64(limit)
            while rejected.any():
                state[rejected] = state[rejected] + gamma
                draw[rejected] = mix64_array(state[rejected])
                rejected = draw >= np.uint64(limit)
        j = (draw % np.uint64(bound)).astype(np.int64)
        a = perm[:, i].copy()
        perm[:, i] = perm[rows, j]
        perm[rows, j] = a
    return perm


def group_ids_batch(seed: int, ts, n: int, k: int) -> np.ndarray:
    """Group label of every worker for each iteration in ``ts``.

    Returns an array of shape ``(len(ts), n)``; entry ``[r, w]`` is the
    position-based group index of worker ``w`` at iteration ``ts[r]``.
    """
    _check_nk(n, k)
    perm = shuffled_workers_batch(seed, ts, n)
    labels = np.empty_like(perm)
    slot_group = np.arange(n) // (n // k)
    rows = np.arange(perm.shape[0])[:, None]
    labels[rows, perm] = slot_group[None, :]
    return labels


def pair_split_probability(n: int, k: int) -> float:
    """Probability that two fixed workers are placed in different groups."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    _check_nk(n, k)
    return n * (k - 1) / (k * (n - 1))
