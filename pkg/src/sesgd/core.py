"""Shared value types, the splitmix64 generator and vector helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


class ConfigError(ValueError):
    """Raised when a configuration violates a precondition."""


class NumericalError(FloatingPointError):
    """Raised when parameters or losses stop being finite."""


def mix64(z: int) -> int:
    """splitmix64 output finalizer applied to a single 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


class Rng64:
    """splitmix64 stream. Identical seeds give identical streams everywhere."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def bounded(self, bound: int) -> int:
        """Unbiased integer in ``[0, bound)`` by rejection sampling."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        limit = ((1 << 64) // bound) * bound
        while True:
            x = self.next()
            if x < limit:
                return x % bound


def rng_next(rng: Rng64) -> int:
    return rng.next()


def rng_bounded(rng: Rng64, bound: int) -> int:
    return rng.bounded(bound)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized ``mix64`` over a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def as_param_vector(values) -> np.ndarray:
    """Copy ``values`` into a finite 1-D float64 array."""
    x = np.array(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("parameter vector has non-finite entries")
    return x


def vec_axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``a * x + y`` as a new vector."""
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x + y
    if not np.all(np.isfinite(out)):
        raise NumericalError("axpy produced non-finite entries")
    return out


def check_worker_id(worker: int, n: int) -> int:
    if not 0 <= worker < n:
        raise ValueError(f"worker id {worker} outside [0, {n})")
    return worker


@dataclass(frozen=True)
class NetworkConfig:
    """Link bandwidth in bytes/second and per-handshake latency in seconds."""

    bandwidth: float
    latency: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.latency >= 0:
            raise ConfigError(f"latency must be >= 0, got {self.latency}")


ALGORITHMS = ("ring-sgd", "local-sgd", "sesgd", "local-sesgd")


@dataclass(frozen=True)
class TrainConfig:
    n: int
    k: int = 1
    b: int = 1
    T: int = 1
    eta: float = 0.1
    seed: int = 0
    local_period: int = 1
    # experimental: per-worker momentum buffers, never communicated
    momentum: float = 0.0
    collective_mode: str = "lockstep"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"k must be in [1, n={self.n}], got {self.k}")
        if self.n % self.k:
            raise ConfigError(f"k={self.k} does not divide n={self.n}")
        if self.b < 1:
            raise ConfigError(f"b must be >= 1, got {self.b}")
        if self.T < 0:
            raise ConfigError(f"T must be >= 0, got {self.T}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if self.local_period < 1:
            raise ConfigError(f"local_period must be >= 1, got {self.local_period}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.collective_mode not in ("lockstep", "threaded"):
            raise ConfigError(f"unknown collective mode {self.collective_mode!r}")

    @property
    def group_size(self) -> int:
        return self.n // self.k
