"""Closed-form communication time and speedup estimates.

The exact per-tensor ring time ``2(m-1)(G/(m*nu) + tau)`` is the primary
formula. The large-``m`` approximations are exposed separately as
``*_approx`` and never substituted for the exact form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .netsim import LayerProfile, LinkModel, idle_proportion, simulate_overlapped_iteration


@dataclass(frozen=True)
class CostInputs:
    G: float
    nu: float
    tau: float
    n: int
    k: int
    tensors: int = 1

    def __post_init__(self):
        if self.G < 0 or not self.nu > 0 or self.tau < 0:
            raise ValueError("need G >= 0, nu > 0, tau >= 0")
        if self.n < 1 or self.k < 1 or self.tensors < 1:
            raise ValueError("need n, k, tensors >= 1")
        if self.n % self.k:
            raise ValueError(f"k={self.k} does not divide n={self.n}")


def ring_time(G: float, nu: float, tau: float, m: int) -> float:
    if m < 1:
        raise ValueError(f"group size must be >= 1, got {m}")
    return 2 * (m - 1) * (G / (m * nu) + tau)


def ring_time_approx(G: float, nu: float, tau: float, m: int) -> float:
    """Large-``m`` form ``2G/nu + 2*m*tau``."""
    return 2 * G / nu + 2 * m * tau


def sesgd_time(G: float, nu: float, tau: float, n: int, k: int) -> float:
    if k < 1 or n % k:
        raise ValueError(f"k={k} does not divide n={n}")
    return ring_time(G, nu, tau, n // k)


def sesgd_time_approx(G: float, nu: float, tau: float, n: int) -> float:
    """Form for ``k = sqrt(n)`` groups: ``2G/nu + 2*sqrt(n)*tau``."""
    return 2 * G / nu + 2 * math.sqrt(n) * tau


def predicted_speedup(inputs: CostInputs, compute_s_per_iter: float) -> float:
    """Non-overlapped Ring-SGD over SESGD iteration-time ratio."""
    c = inputs
    ring = compute_s_per_iter + c.tensors * ring_time(c.G, c.nu, c.tau, c.n)
    sesgd = compute_s_per_iter + c.tensors * sesgd_time(c.G, c.nu, c.tau, c.n, c.k)
    if sesgd == 0:
        return 1.0
    return ring / sesgd


def profile_time(profile: LayerProfile, link: LinkModel, m: int) -> float:
    """Non-overlapped iteration time: all compute, then every layer's ring allreduce."""
    comm = sum(ring_time(layer.param_bytes, link.bandwidth, link.latency, m) for layer in profile.layers)
    return profile.total_compute + comm


@dataclass(frozen=True)
class IdleRow:
    model: str
    workers: int
    idle_s: float
    proportion: float


def idle_table(profiles: Iterable[LayerProfile], n_list: Iterable[int], link: LinkModel) -> list[IdleRow]:
    """Idle seconds and idle share of communication for each profile and worker count."""
    rows = []
    n_list = list(n_list)
    for profile in profiles:
        for n in n_list:
            _, stats = simulate_overlapped_iteration(profile, n, link)
            proportion = idle_proportion(stats) if stats.total_time > 0 else 0.0
            rows.append(IdleRow(profile.name, n, stats.idle_time, proportion))
    return rows
