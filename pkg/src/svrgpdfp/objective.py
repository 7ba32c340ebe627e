"""Smooth finite sums ``f(x) = (1/n) sum_i f_i(x)`` and their gradient oracles.

All supported losses are linear models ``f_i(x) = phi(a_i^T x; b_i)`` (plus an
optional ridge term), so per-sample gradients are ``phi'(a_i^T x) a_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "FiniteSum",
    "LeastSquares",
    "Logistic",
    "RidgeLogistic",
    "BatchScheme",
    "SvrgAnchor",
    "VarianceConstants",
    "make_anchor",
    "svrg_grad",
    "variance_constants",
    "bregman_f",
    "logistic_loss",
]


def logistic_loss(t):
    """``log(1 + exp(-t))`` evaluated without overflow."""
    t = np.asarray(t, dtype=float)
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(0.0, -t)


def _sigmoid(t):
    # 1 / (1 + exp(-t)), split by sign to stay finite
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class FiniteSum:
    """Base class holding the data matrix ``A`` (n x d) and targets ``b``."""

    kind = "abstract"
    ridge = 0.0

    def __init__(self, A, b):
        A = np.array(A, dtype=float, order="C", ndmin=2)
        b = np.array(b, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise ValueError(f"A has shape {A.shape} but b has length {b.shape[0]}")
        if A.shape[0] < 1:
            raise ValueError("need at least one sample")
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b
        self.n, self.d = A.shape
        self._row_sq = np.einsum("ij,ij->i", A, A)

    # per-kind scalar pieces: loss(t_i) and its derivative for margins t = A x
    def _loss(self, t, idx):
        raise NotImplementedError

    def _dloss(self, t, idx):
        raise NotImplementedError

    def _curvature(self):
        """Bound on ``phi''`` (so that ``L_i = curvature * ||a_i||^2 + 2 ridge``)."""
        raise NotImplementedError

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected x of length {self.d}, got shape {x.shape}")
        return x

    def sample_values(self, x) -> np.ndarray:
        x = self._check_x(x)
        vals = self._loss(self.A @ x, slice(None))
        if self.ridge:
            vals = vals + self.ridge * float(x @ x)
        return vals

    def value(self, x) -> float:
        return float(np.mean(self.sample_values(x)))

    def grad_sample(self, i: int, x) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"sample index {i} out of range [0, {self.n})")
        x = self._check_x(x)
        a = self.A[i]
        g = self._dloss(np.array([a @ x]), slice(i, i + 1))[0] * a
        if self.ridge:
            g = g + 2.0 * self.ridge * x
        return g

    def batch_grad(self, idx, x) -> np.ndarray:
        """Average gradient over the sample indices ``idx``."""
        x = self._check_x(x)
        Ab = self.A[idx]
        g = Ab.T @ self._dloss(Ab @ x, idx) / Ab.shape[0]
        if self.ridge:
            g = g + 2.0 * self.ridge * x
        return g

    def full_grad(self, x) -> np.ndarray:
        x = self._check_x(x)
        g = self.A.T @ self._dloss(self.A @ x, slice(None)) / self.n
        if self.ridge:
            g = g + 2.0 * self.ridge * x
        return g

    def batch_grad_diff(self, idx, x, x_ref) -> np.ndarray:
        """``(1/|idx|) sum_i (grad f_i(x) - grad f_i(x_ref))``."""
        Ab = self.A[idx]
        coeff = self._dloss(Ab @ x, idx) - self._dloss(Ab @ x_ref, idx)
        g = Ab.T @ coeff / Ab.shape[0]
        if self.ridge:
            g = g + 2.0 * self.ridge * (x - x_ref)
        return g

    @property
    def lipschitz(self) -> np.ndarray:
        """Per-sample gradient Lipschitz constants ``L_i``."""
        return self._curvature() * self._row_sq + 2.0 * self.ridge

    @property
    def l_max(self) -> float:
        return float(self.lipschitz.max())

    @property
    def strong_convexity(self) -> float:
        """Known strong convexity modulus of ``f`` (0 when none is guaranteed)."""
        return 2.0 * self.ridge

    def smoothness(self, iters: int = 100, seed: int = 0) -> float:
        """Upper estimate of the Lipschitz constant of ``grad f`` (never above ``l_max``)."""
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(self.d)
        u /= np.linalg.norm(u)
        rho = 0.0
        for _ in range(iters):
            w = self.A.T @ (self.A @ u)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            rho = float(u @ w)
            u = w / nw
        est = 1.01 * self._curvature() * rho / self.n + 2.0 * self.ridge
        return min(est, self.l_max)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, d={self.d})"


class LeastSquares(FiniteSum):
    """``f_i(x) = 0.5 * (a_i^T x - b_i)^2``."""

    kind = "LeastSquares"

    def _loss(self, t, idx):
        r = t - self.b[idx]
        return 0.5 * r * r

    def _dloss(self, t, idx):
        return t - self.b[idx]

    def _curvature(self):
        return 1.0


class Logistic(FiniteSum):
    """``f_i(x) = log(1 + exp(-b_i a_i^T x))`` with labels in {-1, +1}."""

    kind = "Logistic"

    def __init__(self, A, b):
        super().__init__(A, b)
        if not np.all(np.abs(self.b) == 1.0):
            raise ValueError("logistic labels must be -1 or +1")

    def _loss(self, t, idx):
        return logistic_loss(self.b[idx] * t)

    def _dloss(self, t, idx):
        y = self.b[idx]
        return -y * _sigmoid(-y * t)

    def _curvature(self):
        return 0.25


class RidgeLogistic(Logistic):
    """Logistic loss plus ``ridge * ||x||^2`` folded into every ``f_i``."""

    kind = "RidgeLogistic"

    def __init__(self, A, b, ridge):
        super().__init__(A, b)
        if not ridge > 0:
            raise ValueError("ridge weight must be positive")
        self.ridge = float(ridge)


@dataclass(frozen=True)
class BatchScheme:
    """Fixed partition of the samples into ``n // b`` contiguous blocks.

    ``order`` is the (optionally shuffled) sample order the blocks slice.
    """

    n: int
    b: int
    order: np.ndarray

    @classmethod
    def build(cls, n: int, b: int, shuffle_seed: int | None = None) -> "BatchScheme":
        if b < 1 or b > n:
            raise ValueError(f"batch size {b} outside [1, {n}]")
        if n % b:
            raise ValueError(f"batch size must divide n (n={n}, b={b})")
        order = np.arange(n)
        if shuffle_seed is not None:
            order = np.random.default_rng(shuffle_seed).permutation(n)
        order.setflags(write=False)
        return cls(n, b, order)

    @property
    def n_blocks(self) -> int:
        return self.n // self.b

    def block(self, k: int) -> np.ndarray:
        if not 0 <= k < self.n_blocks:
            raise IndexError(f"block {k} out of range [0, {self.n_blocks})")
        return self.order[k * self.b:(k + 1) * self.b]

    def blocks(self):
        return [self.block(k) for k in range(self.n_blocks)]


class SvrgAnchor(NamedTuple):
    x: np.ndarray
    z: np.ndarray


def make_anchor(f: FiniteSum, x) -> SvrgAnchor:
    x = np.array(x, dtype=float)
    return SvrgAnchor(x, f.full_grad(x))


def svrg_grad(f: FiniteSum, anchor: SvrgAnchor, scheme: BatchScheme, block: int, x) -> np.ndarray:
    """Variance-reduced estimate ``(1/b) sum_{i in I_k} (grad f_i(x) - grad f_i(x~)) + z~``."""
    idx = scheme.block(block)
    if scheme.n_blocks == 1:
        # the correction cancels exactly in exact arithmetic
        return f.full_grad(x)
    return f.batch_grad_diff(idx, np.asarray(x, dtype=float), anchor.x) + anchor.z


class VarianceConstants(NamedTuple):
    c_b: float
    M: float
    l_max: float


def variance_constants(f: FiniteSum, scheme: BatchScheme) -> VarianceConstants:
    """Return ``C_b = (n-b)/(b(n-1))``, ``M = 4 L_max C_b`` and ``L_max``."""
    n, b = scheme.n, scheme.b
    if n < 2:
        raise ValueError("variance constants need n >= 2")
    c_b = (n - b) / (b * (n - 1))
    l_max = f.l_max
    return VarianceConstants(c_b, 4.0 * l_max * c_b, l_max)


def bregman_f(f: FiniteSum, x, x_ref) -> float:
    """``D_f(x, x_ref) = f(x) - f(x_ref) - grad f(x_ref)^T (x - x_ref)``."""
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    return f.value(x) - f.value(x_ref) - float(f.full_grad(x_ref) @ (x - x_ref))
