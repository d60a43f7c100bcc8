"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from sesgd.algorithms import SimNetwork, run_training
from sesgd.cli import main
from sesgd.collectives import RingGroup, ring_allreduce_mean
from sesgd.core import NetworkConfig, TrainConfig
from sesgd.costmodel import ring_time
from sesgd.models import make_logistic, make_mlp, make_quadratic
from sesgd.netsim import (BUNDLED_PROFILES, LayerProfile, LinkModel, idle_proportion, load_profile,
                          simulate_overlapped_iteration, simulate_ring_allreduce)
from sesgd.shuffle import group_ids_batch, pair_split_probability
from sesgd.theory import run_campaign

from test_models import central_difference


def link(tau=1e-4, nu=125e6):
    return LinkModel(NetworkConfig(nu, tau))


def verdict(number, title, ok, started, limit_s, detail):
    elapsed = time.perf_counter() - started
    ok = bool(ok) and elapsed < limit_s
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail} ({elapsed:.2f}s / {limit_s:g}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_handshake_arithmetic():
    t0 = time.perf_counter()
    _, three = simulate_ring_allreduce(3, 3000, link())
    fifty = LayerProfile.uniform(50, 40_000, name="fifty")
    _, ring = simulate_overlapped_iteration(fifty, 16, link())
    _, ses = simulate_overlapped_iteration(fifty, 16 // 4, link())
    got = (three.handshakes, ring.handshakes, ses.handshakes)
    verdict(1, "handshake arithmetic", got == (4, 1500, 300), t0, 1, f"m=3 / ring n=16 / SESGD k=4 -> {got}")


def test_02_cost_model_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(2, 33))
        G = int(rng.integers(1, 10 ** 6)) * m
        nu = float(10 ** rng.uniform(6, 10))
        tau = float(10 ** rng.uniform(-6, -2))
        elapsed, _ = simulate_ring_allreduce(m, G, link(tau, nu))
        closed = ring_time(G, nu, tau, m)
        worst = max(worst, abs(elapsed - closed) / closed)
    verdict(2, "cost-model exactness", worst <= 1e-12, t0, 5, f"max relative error {worst:.2e} over 100 configs")


def test_03_collective_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, identical = 0.0, True
    for _ in range(1000):
        m = int(rng.integers(1, 33))
        L = int(rng.integers(1, 10 ** 4 + 1))
        xs = [rng.standard_normal(L) * 10.0 ** rng.uniform(-3, 3) for _ in range(m)]
        outs, _ = ring_allreduce_mean(RingGroup(tuple(range(m))), xs)
        acc = np.zeros(L)
        for x in xs:
            acc = acc + x
        ref = acc / m
        # error relative to the magnitude of the averaged terms
        scale = np.maximum(np.mean(np.abs(xs), axis=0), np.finfo(float).tiny)
        worst = max(worst, float(np.max(np.abs(outs[0] - ref) / scale)))
        identical &= all(o.tobytes() == outs[0].tobytes() for o in outs)
    verdict(3, "collective correctness", worst <= 1e-12 and identical, t0, 30,
            f"max relative error {worst:.2e}, members byte-identical={identical}")


def test_04_reduction_identity():
    t0 = time.perf_counter()
    task = make_logistic(10, 4096, seed=0)
    worst, pointwise = 0.0, 0.0
    for seed in (0, 1, 2):
        cfg = TrainConfig(n=8, k=1, b=1, T=500, eta=0.5, seed=seed)
        ring, _ = run_training("ring-sgd", cfg, task, link(), keep_worker_snapshots=True)
        ses, _ = run_training("sesgd", cfg, task, link(), keep_worker_snapshots=True)
        for a, b in zip(ring.worker_snapshots[1:], ses.worker_snapshots[1:]):
            diff = np.abs(a - b)
            worst = max(worst, float(diff.max() / max(np.abs(a).max(), np.abs(b).max())))
            big = np.maximum(np.abs(a), np.abs(b))
            nz = big > 0
            pointwise = max(pointwise, float(np.max(diff[nz] / big[nz])))
    verdict(4, "reduction identity", worst <= 1e-12, t0, 10,
            f"max per-coordinate error relative to iterate scale {worst:.2e} "
            f"(pointwise {pointwise:.2e}) over 3 seeds x 500 iterations")


def test_05_shuffle_statistics():
    t0 = time.perf_counter()
    n, k, total, chunk = 16, 4, 10 ** 6, 100_000
    split = 0
    for start in range(0, total, chunk):
        labels = group_ids_batch(2024, np.arange(start, start + chunk), n, k)
        split += int(np.count_nonzero(labels[:, 0] != labels[:, 1]))
    p = pair_split_probability(n, k)
    sigma = math.sqrt(total * p * (1 - p))
    z = (split - total * p) / sigma
    verdict(5, "shuffle statistics", abs(z) <= 5 and p == pytest.approx(0.8), t0, 30,
            f"split frequency {split / total:.5f} vs {p:.5f} (z={z:+.2f})")


def test_06_convergence_parity():
    t0 = time.perf_counter()
    task = make_logistic(10, 4096, seed=0)
    finals = {"ring-sgd": [], "sesgd": []}
    for seed in range(5):
        cfg = TrainConfig(n=16, k=4, b=16, T=2000, eta=0.5, seed=seed)
        for algorithm in finals:
            _, final = run_training(algorithm, cfg, task, link())
            finals[algorithm].append(task.loss(final))
    ring, ses = np.mean(finals["ring-sgd"]), np.mean(finals["sesgd"])
    rel = abs(ses - ring) / ring
    quad = make_quadratic(2, 256, seed=0, spread=0.005)
    gaps = {}
    for algorithm in ("ring-sgd", "sesgd"):
        cfg = TrainConfig(n=16, k=4, b=1, T=2000, eta=0.1, seed=0)
        _, final = run_training(algorithm, cfg, quad, link(), x0=quad.optimum + 1.0)
        gaps[algorithm] = quad.loss(final) - quad.f_star
    ok = rel <= 0.02 and all(0 <= g <= 1e-6 for g in gaps.values())
    verdict(6, "convergence parity", ok, t0, 120,
            f"logistic SESGD {ses:.5f} vs Ring-SGD {ring:.5f} (rel {rel:.2e}); quadratic gaps "
            + ", ".join(f"{a} {g:.1e}" for a, g in gaps.items()))


def test_07_latency_speedup():
    t0 = time.perf_counter()
    profile = LayerProfile.uniform(50, 4096, name="latency-bound")
    ratios = []
    for tau in (1e-4, 5e-4, 1e-3, 2e-3, 5e-3):
        net = SimNetwork(link(tau), profile)
        ratios.append(net.iteration(16)[0] / net.iteration(4)[0])
    monotone = all(b >= a for a, b in zip(ratios, ratios[1:]))
    verdict(7, "latency speedup", 3 <= ratios[-1] <= 5.5 and monotone, t0, 60,
            "Ring/SESGD ratios " + ", ".join(f"{r:.3f}" for r in ratios) + f"; nondecreasing={monotone}")


def test_08_idle_time_trend():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in BUNDLED_PROFILES:
        profile = load_profile(name)
        p4 = idle_proportion(simulate_overlapped_iteration(profile, 4, link())[1])
        p16 = idle_proportion(simulate_overlapped_iteration(profile, 16, link())[1])
        ok &= p16 > p4
        parts.append(f"{name} {p4:.4f}->{p16:.4f}")
    verdict(8, "idle-time trend", ok, t0, 60, "; ".join(parts))


def test_09_theory_bounds():
    t0 = time.perf_counter()
    task = make_quadratic(2, 256, seed=0, spread=0.5)
    r = run_campaign(task, n=4, k=2, epsilon=0.05, seeds=20, x0=task.optimum + 0.5)
    div = r["divergence"]
    ok = r["lhs"] <= r["epsilon"] and r["lhs"] <= r["rhs"] and div["holds"]
    verdict(9, "theory bounds", ok, t0, 300,
            f"eta={r['eta']:.4g} T={r['T']}: mean ||grad||^2 {r['lhs']:.4g} <= eps {r['epsilon']} and rhs "
            f"{r['rhs']:.4g}; divergence {div['max_seed_mean']:.4g} <= {div['bound']:.4g}")


def test_10_gradient_verification():
    t0 = time.perf_counter()
    tasks = [make_quadratic(5, 40, seed=1), make_logistic(6, 80, seed=2), make_mlp(3, 4, 3, 60, seed=3)]
    rng = np.random.default_rng(10)
    worst = 0.0
    for task in tasks:
        for _ in range(10):
            x = rng.standard_normal(task.dim)
            fd = central_difference(task.loss, x)
            g = task.grad(x)
            worst = max(worst, float(np.max(np.abs(g - fd) / (1e-7 + 1e-5 * np.abs(fd)))))
    verdict(10, "gradient verification", worst <= 1.0, t0, 30,
            f"worst error / (atol 1e-7 + rtol 1e-5 |fd|) = {worst:.3f} over 3 tasks x 10 points")


def test_11_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = {
        "train": {"n": 4, "k": 2, "b": 1, "T": 100, "eta": 0.05, "seed": 7},
        "network": {"bandwidth": 125e6, "latency": 1e-4},
        "task": {"kind": "quadratic", "dim": 2, "n_samples": 256, "seed": 0, "spread": 0.5, "x0_offset": 0.5},
        "profile": "resnet18-like",
        "theory": {"epsilon": 0.2, "seeds": 2},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    mismatched = []
    for command in ("train", "latency-sweep", "idle-table", "theory"):
        runs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{command}-{rep}"
            assert main([command, "--config", str(path), "--out", str(out)]) == 0
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not runs[0] or runs[0] != runs[1]:
            mismatched.append(command)
    verdict(11, "CLI determinism", not mismatched, t0, 60,
            "all four subcommands byte-identical" if not mismatched else f"differs: {mismatched}")
