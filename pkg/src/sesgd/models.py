"""Small differentiable tasks with analytic gradients.

Each task exposes its dataset as a row-indexed collection of samples. ``loss``
and ``grad`` average over the rows named by ``idx`` (all rows when ``idx`` is
None); ``sample_grads`` returns one gradient row per sample, whose mean is
``grad``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class Task:
    dim: int
    n_samples: int
    name: str = "task"
    f_star: float | None = None

    def loss(self, params: np.ndarray, idx=None) -> float:
        raise NotImplementedError

    def grad(self, params: np.ndarray, idx=None) -> np.ndarray:
        raise NotImplementedError

    def sample_grads(self, params: np.ndarray, idx=None) -> np.ndarray:
        raise NotImplementedError

    def initial_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _rows(self, idx):
        return slice(None) if idx is None else np.asarray(idx, dtype=np.int64)


class QuadraticTask(Task):
    """``f(x) = mean_j 0.5 * ||x - c_j||^2``; L = 1 and ``x* = mean_j c_j``."""

    name = "quadratic"

    def __init__(self, centers: np.ndarray, x0: np.ndarray | None = None):
        centers = np.asarray(centers, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise ValueError("centers must be a non-empty 2-D array")
        self.centers = centers
        self.n_samples, self.dim = centers.shape
        self.optimum = centers.mean(axis=0)
        self.f_star = self.loss(self.optimum)
        self._x0 = np.zeros(self.dim) if x0 is None else np.asarray(x0, dtype=np.float64)

    def loss(self, params, idx=None):
        diff = params - self.centers[self._rows(idx)]
        return float(0.5 * np.mean(np.sum(diff * diff, axis=1)))

    def grad(self, params, idx=None):
        return params - self.centers[self._rows(idx)].mean(axis=0)

    def sample_grads(self, params, idx=None):
        return params[None, :] - self.centers[self._rows(idx)]

    def initial_params(self):
        return self._x0.copy()


def make_quadratic(dim: int, n_samples: int, seed: int, spread: float = 1.0,
                   center: float = 0.0, x0: np.ndarray | None = None) -> QuadraticTask:
    """Centers drawn from ``N(center, spread^2 I)``."""
    if dim < 1 or n_samples < 1:
        raise ValueError("dim and n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    centers = center + spread * rng.standard_normal((n_samples, dim))
    return QuadraticTask(centers, x0)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


class LogisticTask(Task):
    """Binary cross-entropy with a sigmoid link plus ``l2/2 * ||w||^2``.

    The regularizer is part of every per-sample loss, so its gradient ``l2*w``
    matches SGD weight decay of ``l2``.
    """

    name = "logistic"

    def __init__(self, X: np.ndarray, y: np.ndarray, l2: float = 5e-4):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (samples, dim) matching y")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("logistic labels must be 0 or 1")
        self.n_samples, self.dim = self.X.shape
        self.l2 = l2
        self.optimum = self._newton()
        self.f_star = self.loss(self.optimum)

    def loss(self, params, idx=None):
        rows = self._rows(idx)
        z = self.X[rows] @ params
        data = np.mean(np.logaddexp(0.0, z) - self.y[rows] * z)
        return float(data + 0.5 * self.l2 * params @ params)

    def grad(self, params, idx=None):
        rows = self._rows(idx)
        X = self.X[rows]
        r = _sigmoid(X @ params) - self.y[rows]
        return X.T @ r / X.shape[0] + self.l2 * params

    def sample_grads(self, params, idx=None):
        rows = self._rows(idx)
        X = self.X[rows]
        r = _sigmoid(X @ params) - self.y[rows]
        return X * r[:, None] + self.l2 * params[None, :]

    def accuracy(self, params) -> float:
        return float(np.mean((self.X @ params > 0) == (self.y == 1)))

    def _newton(self, iters: int = 100) -> np.ndarray:
        w = np.zeros(self.dim)
        eye = np.eye(self.dim)
        for _ in range(iters):
            g = self.grad(w)
            if np.linalg.norm(g) < 1e-13:
                break
            p = _sigmoid(self.X @ w)
            H = (self.X * (p * (1 - p))[:, None]).T @ self.X / self.n_samples + self.l2 * eye
            w = w - np.linalg.solve(H, g)
        return w


def make_logistic(dim: int, n_samples: int, seed: int, separation: float = 1.0,
                  l2: float = 5e-4) -> LogisticTask:
    """Two Gaussian blobs in ``dim - 1`` features plus a constant bias column.

    Class means sit at ``+-separation/2`` along a random unit direction.
    """
    if dim < 2:
        raise ValueError("logistic task needs dim >= 2 (features + bias)")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim - 1)
    direction /= np.linalg.norm(direction)
    y = (np.arange(n_samples) % 2).astype(np.float64)
    rng.shuffle(y)
    feats = rng.standard_normal((n_samples, dim - 1)) + np.outer(2 * y - 1, direction) * (separation / 2)
    X = np.hstack([feats, np.ones((n_samples, 1))])
    return LogisticTask(X, y, l2)


class MLPTask(Task):
    """One tanh hidden layer, softmax cross-entropy.

    Parameters are packed as ``[W1 (hidden x in), b1, W2 (classes x hidden), b2]``.
    """

    name = "mlp"

    def __init__(self, X: np.ndarray, labels: np.ndarray, hidden: int, classes: int,
                 init_seed: int = 0):
        if hidden < 1 or classes < 2:
            raise ValueError("need hidden >= 1 and classes >= 2")
        self.X = np.asarray(X, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.min() < 0 or self.labels.max() >= classes:
            raise ValueError("labels out of range")
        self.n_samples, self.in_dim = self.X.shape
        self.hidden = hidden
        self.classes = classes
        self.init_seed = init_seed
        self._shapes = [(hidden, self.in_dim), (hidden,), (classes, hidden), (classes,)]
        self.dim = sum(int(np.prod(s)) for s in self._shapes)

    def unpack(self, params):
        out, pos = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            out.append(params[pos:pos + size].reshape(shape))
            pos += size
        return out

    def _forward(self, params, rows):
        W1, b1, W2, b2 = self.unpack(params)
        X = self.X[rows]
        h = np.tanh(X @ W1.T + b1)
        logits = h @ W2.T + b2
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return X, h, logp

    def loss(self, params, idx=None):
        rows = self._rows(idx)
        _, _, logp = self._forward(params, rows)
        lab = self.labels[rows]
        return float(-np.mean(logp[np.arange(len(lab)), lab]))

    def _backward(self, params, rows):
        W1, b1, W2, b2 = self.unpack(params)
        X, h, logp = self._forward(params, rows)
        lab = self.labels[rows]
        dlogits = np.exp(logp)
        dlogits[np.arange(len(lab)), lab] -= 1.0
        dh = (dlogits @ W2) * (1.0 - h * h)
        return X, h, dlogits, dh

    def grad(self, params, idx=None):
        X, h, dlogits, dh = self._backward(params, self._rows(idx))
        B = X.shape[0]
        return np.concatenate([
            (dh.T @ X).ravel() / B, dh.sum(axis=0) / B,
            (dlogits.T @ h).ravel() / B, dlogits.sum(axis=0) / B,
        ])

    def sample_grads(self, params, idx=None):
        X, h, dlogits, dh = self._backward(params, self._rows(idx))
        B = X.shape[0]
        return np.hstack([
            np.einsum("bh,bi->bhi", dh, X).reshape(B, -1), dh,
            np.einsum("bc,bh->bch", dlogits, h).reshape(B, -1), dlogits,
        ])

    def initial_params(self):
        rng = np.random.default_rng(self.init_seed)
        parts = []
        for shape, fan_in in zip(self._shapes, [self.in_dim, self.in_dim, self.hidden, self.hidden]):
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=shape).ravel())
        return np.concatenate(parts)

    def accuracy(self, params) -> float:
        _, _, logp = self._forward(params, slice(None))
        return float(np.mean(logp.argmax(axis=1) == self.labels))


def make_mlp(in_dim: int, hidden: int, classes: int, n_samples: int, seed: int,
             separation: float = 3.0) -> MLPTask:
    """Gaussian class blobs with means of norm ~``separation``."""
    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, in_dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.arange(n_samples) % classes
    rng.shuffle(labels)
    X = means[labels] + rng.standard_normal((n_samples, in_dim))
    return MLPTask(X, labels, hidden, classes, init_seed=seed)


def surrogate_f_star(task: Task, steps: int = 5000, eta: float = 0.5) -> float:
    """Best full-batch loss seen along a long single-machine descent run.

    Stand-in for the global minimum of tasks without a closed form.
    """
    x = task.initial_params()
    best = task.loss(x)
    for _ in range(steps):
        x = x - eta * task.grad(x)
        best = min(best, task.loss(x))
    return best


def load_csv_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Rows of numeric features with an integer label in the last column.

    A first row that does not parse as numbers is treated as a header.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise ValueError(f"{path}: need at least one feature and a label")
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ValueError(f"{path}: ragged row {lineno} has {len(row)} fields, expected {width}")
    data = np.array([[float(v) for v in row[:-1]] for row in rows])
    labels = []
    for row in rows:
        label = float(row[-1])
        if label != int(label):
            raise ValueError(f"{path}: non-integer label {row[-1]!r}")
        labels.append(int(label))
    return data, np.array(labels, dtype=np.int64)


def estimate_constants(task: Task, probe_count: int, seed: int, center: np.ndarray | None = None,
                       radius: float = 1.0, stochastic: bool = False) -> tuple[float, float]:
    """Empirical smoothness and gradient-norm bounds over a ball of probes.

    ``L_hat`` is the largest gradient difference quotient over probe pairs.
    ``M_hat`` is the largest full-gradient norm, or with ``stochastic=True``
    the largest mean per-sample gradient norm (the expectation in the bounded
    gradient assumption).
    """
    if probe_count < 2:
        raise ValueError("need at least two probes")
    rng = np.random.default_rng(seed)
    center = task.initial_params() if center is None else np.asarray(center, dtype=np.float64)
    d = task.dim
    dirs = rng.standard_normal((probe_count, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * rng.uniform(size=probe_count) ** (1.0 / d)
    probes = center + dirs * radii[:, None]
    grads = np.array([task.grad(x) for x in probes])
    L_hat = 0.0
    for i in range(probe_count):
        for j in range(i + 1, probe_count):
            dist = np.linalg.norm(probes[i] - probes[j])
            if dist == 0.0:
                continue
            L_hat = max(L_hat, float(np.linalg.norm(grads[i] - grads[j]) / dist))
    if stochastic:
        M_hat = max(float(np.mean(np.linalg.norm(task.sample_grads(x), axis=1))) for x in probes)
    else:
        M_hat = float(np.max(np.linalg.norm(grads, axis=1)))
    return L_hat, M_hat
