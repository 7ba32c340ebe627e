"""Linear maps ``B : R^d -> R^r`` used in the composite term ``g(Bx)``.

All maps are immutable once built; ``apply`` and ``adjoint_apply`` are pure.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "LinearMap",
    "Identity",
    "Dense",
    "Grad2D",
    "Stacked",
    "SpectralBound",
    "spectral_bound",
    "rho_max_bound",
    "load_dense",
    "SAFETY_FACTOR",
]

SAFETY_FACTOR = 1.01


class DimensionError(ValueError):
    pass


def _as_vector(x, size, what):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != size:
        raise DimensionError(
            f"{what}: expected vector of length {size}, got shape {x.shape}"
        )
    return x


class LinearMap:
    """Base class. Subclasses implement ``_forward`` and ``_adjoint``."""

    kind = "abstract"

    def __init__(self, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("dimensions must be positive")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def apply(self, x) -> np.ndarray:
        return self._forward(_as_vector(x, self.in_dim, f"{self.kind}.apply"))

    def adjoint_apply(self, v) -> np.ndarray:
        return self._adjoint(_as_vector(v, self.out_dim, f"{self.kind}.adjoint_apply"))

    def _forward(self, x):
        raise NotImplementedError

    def _adjoint(self, v):
        raise NotImplementedError

    def exact_rho_max(self) -> float | None:
        """``rho_max(B B^T)`` when it is cheaply known exactly, else ``None``."""
        return None

    def to_dense(self) -> np.ndarray:
        """Materialize the matrix column by column (small maps only)."""
        eye = np.eye(self.in_dim)
        return np.column_stack([self._forward(eye[:, j]) for j in range(self.in_dim)])

    def __repr__(self):
        return f"{type(self).__name__}(in_dim={self.in_dim}, out_dim={self.out_dim})"


class Identity(LinearMap):
    kind = "Identity"

    def __init__(self, d: int):
        super().__init__(d, d)

    def _forward(self, x):
        return x.copy()

    def _adjoint(self, v):
        return v.copy()

    def exact_rho_max(self):
        return 1.0


class Dense(LinearMap):
    kind = "Dense"

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float, order="C", ndmin=2)
        if matrix.ndim != 2:
            raise ValueError("dense map needs a 2-D matrix")
        super().__init__(matrix.shape[1], matrix.shape[0])
        matrix.setflags(write=False)
        self.matrix = matrix

    def _forward(self, x):
        return self.matrix @ x

    def _adjoint(self, v):
        return self.matrix.T @ v

    def to_dense(self):
        return self.matrix.copy()

    #: largest Gram matrix side for which the exact eigenvalue is computed
    EXACT_LIMIT = 512

    def exact_rho_max(self):
        r, d = self.matrix.shape
        if min(r, d) > self.EXACT_LIMIT:
            return None
        gram = self.matrix.T @ self.matrix if d <= r else self.matrix @ self.matrix.T
        return float(max(np.linalg.eigvalsh(gram)[-1], 0.0))


class Grad2D(LinearMap):
    """Forward differences on a ``height x width`` image in row-major order.

    Output layout: all horizontal differences, then all vertical ones. The
    last column (resp. row) difference is zero (Neumann boundary).
    """

    kind = "Grad2D"

    def __init__(self, height: int, width: int):
        if height < 1 or width < 1:
            raise ValueError("image shape must be positive")
        self.height = int(height)
        self.width = int(width)
        npix = self.height * self.width
        super().__init__(npix, 2 * npix)

    def _forward(self, x):
        img = x.reshape(self.height, self.width)
        dx = np.zeros_like(img)
        dy = np.zeros_like(img)
        dx[:, :-1] = img[:, 1:] - img[:, :-1]
        dy[:-1, :] = img[1:, :] - img[:-1, :]
        return np.concatenate([dx.ravel(), dy.ravel()])

    def _adjoint(self, v):
        npix = self.in_dim
        px = v[:npix].reshape(self.height, self.width)
        py = v[npix:].reshape(self.height, self.width)
        out = np.zeros((self.height, self.width))
        # negative divergence, consistent with the Neumann forward difference
        out[:, :-1] -= px[:, :-1]
        out[:, 1:] += px[:, :-1]
        out[:-1, :] -= py[:-1, :]
        out[1:, :] += py[:-1, :]
        return out.ravel()

    def exact_rho_max(self):
        # B^T B is the Neumann Laplacian, a Kronecker sum of two path Laplacians
        # whose largest eigenvalues are 2 - 2 cos(pi (k-1)/k)
        def path(k):
            return 2.0 - 2.0 * np.cos(np.pi * (k - 1) / k)

        return float(path(self.height) + path(self.width))


class Stacked(LinearMap):
    """``B = [G; I]``: ``apply(x) = concat(G x, x)``."""

    kind = "Stacked"

    def __init__(self, top: LinearMap):
        self.top = top
        super().__init__(top.in_dim, top.out_dim + top.in_dim)

    def _forward(self, x):
        return np.concatenate([self.top._forward(x), x])

    def _adjoint(self, v):
        r = self.top.out_dim
        return self.top._adjoint(v[:r]) + v[r:]

    def exact_rho_max(self):
        # B^T B = G^T G + I
        top = self.top.exact_rho_max()
        return None if top is None else top + 1.0


class SpectralBound(NamedTuple):
    """Inflated estimate of ``rho_max(B B^T)``.

    ``zero`` is set when the operator annihilated the start vector; the
    value is then 0 and must not be inverted.
    """

    value: float
    zero: bool

    @property
    def step_limit(self) -> float:
        """Largest admissible dual step ``1 / rho_max``; ``inf`` for a zero map."""
        return np.inf if self.zero else 1.0 / self.value


def spectral_bound(op: LinearMap, iters: int = 100, seed: int = 0) -> SpectralBound:
    """Power iteration on ``v -> B(B^T v)``, inflated by ``SAFETY_FACTOR``."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.out_dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op._forward(op._adjoint(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return SpectralBound(0.0, True)
        # Rayleigh quotient <v, BB^T v> with ||v|| = 1
        est = float(v @ w)
        v = w / nw
    # one last quotient on the converged vector
    u = op._adjoint(v)
    est = max(est, float(u @ u))
    if est <= 0.0:
        return SpectralBound(0.0, True)
    return SpectralBound(est * SAFETY_FACTOR, False)


def rho_max_bound(op: LinearMap, iters: int = 100, seed: int = 0) -> SpectralBound:
    """Exact ``rho_max(B B^T)`` where the map knows it, else :func:`spectral_bound`."""
    exact = op.exact_rho_max()
    if exact is None:
        return spectral_bound(op, iters, seed)
    return SpectralBound(exact, exact == 0.0)


def load_dense(path) -> Dense:
    """Read a matrix file: ``rows cols`` header, then whitespace-separated rows."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: header must be 'rows cols'") from exc
    if len(lines) - 1 != rows:
        raise ValueError(f"{path}: expected {rows} rows, found {len(lines) - 1}")
    data = []
    for lineno, ln in enumerate(lines[1:], start=2):
        vals = [float(t) for t in ln.split()]
        if len(vals) != cols:
            raise ValueError(f"{path}:{lineno}: expected {cols} values, got {len(vals)}")
        data.append(vals)
    return Dense(np.array(data, dtype=float).reshape(rows, cols))
