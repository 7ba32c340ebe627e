"""Datasets and problem generators.

* LIBSVM text ingestion / serialization
* synthetic two-cloud logistic data and difference-graph matrices
* a small parallel-beam tomography problem with a piecewise-constant phantom
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linops import Dense, Grad2D, Stacked
from .objective import LeastSquares, Logistic, RidgeLogistic
from .prox import L1, Huber
from .solvers import ProblemSpec

__all__ = [
    "SparseDataset",
    "LibsvmParseError",
    "parse_libsvm",
    "read_libsvm",
    "serialize_libsvm",
    "gen_synthetic_logistic",
    "split_train_test",
    "gen_graph_matrix",
    "graph_guided_problem",
    "ImagingProblem",
    "gen_imaging_problem",
    "phantom",
    "write_pgm",
    "view_order",
    "parallel_beam_matrix",
    "IMAGE_SIZES",
]

IMAGE_SIZES = (16, 32, 64)


class LibsvmParseError(ValueError):
    pass


@dataclass
class SparseDataset:
    """Samples as sparse rows with 1-based feature indices and labels in {-1, +1}."""

    d: int
    indices: list[np.ndarray]
    values: list[np.ndarray]
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.labels)

    def to_dense(self) -> np.ndarray:
        X = np.zeros((self.n, self.d))
        for i, (idx, val) in enumerate(zip(self.indices, self.values)):
            X[i, idx - 1] = val
        return X

    def subset(self, rows) -> "SparseDataset":
        rows = list(rows)
        return SparseDataset(
            self.d,
            [self.indices[i] for i in rows],
            [self.values[i] for i in rows],
            self.labels[rows].copy(),
        )


def parse_libsvm(stream, dim: int | None = None) -> SparseDataset:
    """Parse ``label idx:val idx:val ...`` lines; blank lines and ``#`` comments are skipped."""
    labels, indices, values = [], [], []
    max_idx = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *pairs = line.split()
        try:
            lab = float(head)
        except ValueError:
            raise LibsvmParseError(f"bad label {head!r}, line {lineno}") from None
        if lab == 0 or not math.isfinite(lab):
            raise LibsvmParseError(f"label must be nonzero, line {lineno}")
        idx = np.empty(len(pairs), dtype=np.int64)
        val = np.empty(len(pairs))
        prev = 0
        for k, pair in enumerate(pairs):
            key, sep, num = pair.partition(":")
            try:
                j = int(key)
                x = float(num)
            except ValueError:
                j = None
            if not sep or j is None:
                raise LibsvmParseError(f"malformed pair {pair!r}, line {lineno}")
            if j < 1:
                raise LibsvmParseError(f"feature index must be >= 1, line {lineno}")
            if j <= prev:
                raise LibsvmParseError(f"indices not increasing, line {lineno}")
            prev = j
            idx[k] = j
            val[k] = x
        max_idx = max(max_idx, prev)
        labels.append(1.0 if lab > 0 else -1.0)
        indices.append(idx)
        values.append(val)
    d = max_idx if dim is None else int(dim)
    if max_idx > d:
        raise LibsvmParseError(f"feature index {max_idx} exceeds dimension {d}")
    if d < 1:
        d = 1
    return SparseDataset(d, indices, values, np.array(labels))


def read_libsvm(path, dim: int | None = None) -> SparseDataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, dim)


def serialize_libsvm(ds: SparseDataset) -> str:
    lines = []
    for lab, idx, val in zip(ds.labels, ds.indices, ds.values):
        parts = ["+1" if lab > 0 else "-1"]
        parts += [f"{int(j)}:{float(x)!r}" for j, x in zip(idx, val)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def gen_synthetic_logistic(n: int, d: int, separation: float = 1.0, noise: float = 0.0,
                           seed: int = 0, anisotropy: float = 1.0,
                           normalize: bool = False) -> SparseDataset:
    """Two unit-variance Gaussian clouds centred at ``+/- separation * w/|w|``.

    Labels follow the cloud and are flipped with probability ``noise``;
    ``meta["flipped"]`` marks the flipped samples. ``anisotropy > 1`` rescales
    feature ``j`` by ``anisotropy**(-j/(d-1))`` (an ill-conditioned design like
    real data sets); ``normalize`` then scales every sample to unit norm.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if not 0 <= noise < 0.5:
        raise ValueError("noise must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    cloud = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    X = cloud[:, None] * separation * w[None, :] + rng.standard_normal((n, d))
    if anisotropy != 1.0:
        if not anisotropy > 0:
            raise ValueError("anisotropy must be positive")
        X *= anisotropy ** (-np.arange(d) / max(d - 1, 1))
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X /= np.where(norms > 0, norms, 1.0)
    flipped = rng.random(n) < noise
    labels = np.where(flipped, -cloud, cloud)
    idx = np.arange(1, d + 1)
    ds = SparseDataset(d, [idx.copy() for _ in range(n)], [row.copy() for row in X], labels)
    ds.meta.update(direction=w, flipped=flipped)
    return ds


def split_train_test(ds: SparseDataset, seed: int = 0):
    """Shuffle once, then the first ``ceil(n/2)`` samples train and the rest test."""
    perm = np.random.default_rng(seed).permutation(ds.n)
    cut = math.ceil(ds.n / 2)
    return ds.subset(perm[:cut]), ds.subset(perm[cut:])


def gen_graph_matrix(d: int, kind: str = "chain", p: float = 0.1, seed: int = 0) -> Dense:
    """Difference-graph matrix ``G``: one row ``e_i - e_j`` per edge (i < j)."""
    if d < 2:
        raise ValueError("graph needs d >= 2")
    if kind == "chain":
        edges = [(i, i + 1) for i in range(d - 1)]
    elif kind == "random_sparse":
        if not 0 < p <= 1:
            raise ValueError("edge density p must lie in (0, 1]")
        rng = np.random.default_rng(seed)
        seen = {}
        for _ in range(math.ceil(p * d * d)):
            i = int(rng.integers(d))
            j = int(rng.integers(d - 1))
            j += j >= i
            seen.setdefault((min(i, j), max(i, j)), None)
        edges = list(seen)
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    G = np.zeros((len(edges), d))
    for r, (i, j) in enumerate(edges):
        G[r, i] = 1.0
        G[r, j] = -1.0
    return Dense(G)


def graph_guided_problem(ds: SparseDataset, G: Dense, ridge: float, weight: float,
                         huber_alpha: float | None = None) -> ProblemSpec:
    """Logistic loss + ``ridge ||x||^2`` + ``weight * ||[G; I] x||_1`` (or its Huber smoothing)."""
    A = ds.to_dense()
    f = RidgeLogistic(A, ds.labels, ridge) if ridge > 0 else Logistic(A, ds.labels)
    B = Stacked(G)
    g = L1(B.out_dim, weight) if huber_alpha is None else Huber(B.out_dim, weight, huber_alpha)
    return ProblemSpec(f, g, B)


def phantom(size: int) -> np.ndarray:
    """Centred disk of intensity 1 holding a centred square of intensity 0.5."""
    c = np.arange(size) + 0.5 - size / 2
    X, Y = np.meshgrid(c, c)
    img = np.zeros((size, size))
    img[X * X + Y * Y <= (0.35 * size) ** 2] = 1.0
    half = 0.15 * size
    img[(np.abs(X) <= half) & (np.abs(Y) <= half)] = 0.5
    return img


SUPERSAMPLE = 4


def view_order(angles: int, views_per_block: int) -> np.ndarray:
    """Angle order in which every run of ``views_per_block`` views spans ``[0, pi)``.

    Block ``j`` holds angles ``j, j + nb, j + 2 nb, ...`` with ``nb = angles // views_per_block``.
    """
    if views_per_block < 1 or angles % views_per_block:
        raise ValueError(f"views_per_block={views_per_block} must divide angles={angles}")
    nb = angles // views_per_block
    return np.array([j + k * nb for j in range(nb) for k in range(views_per_block)])


def parallel_beam_matrix(size: int, rays_per_angle: int, angles: int) -> np.ndarray:
    """Strip-integral projector for a ``size x size`` image of unit pixels.

    Angle ``k`` is ``k*pi/angles``; its rays are parallel lines ``x cos t + y sin t = s``
    whose offsets ``s`` split ``[-R, R]`` (``R`` the half diagonal) into equal strips.
    Each strip is sampled by ``SUPERSAMPLE`` parallel sub-rays, each walked in steps of
    ``1/SUPERSAMPLE`` pixel; an entry is the mean sub-ray length inside the pixel.
    Rows are ordered angle-major, so consecutive blocks of ``rays_per_angle`` rows are
    one view.
    """
    npix = size * size
    R = size / math.sqrt(2.0)
    width = 2.0 * R / rays_per_angle
    h = 1.0 / SUPERSAMPLE
    ray_centres = -R + (np.arange(rays_per_angle) + 0.5) * width
    sub = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE * width - width / 2
    offsets = (ray_centres[:, None] + sub[None, :]).ravel()
    ray_of = np.repeat(np.arange(rays_per_angle), SUPERSAMPLE)
    nsteps = int(math.ceil(2 * R / h))
    along = -R + (np.arange(nsteps) + 0.5) * h
    A = np.zeros((angles * rays_per_angle, npix))
    weight = h / SUPERSAMPLE
    for k in range(angles):
        th = k * math.pi / angles
        c, s = math.cos(th), math.sin(th)
        # point = offset * (c, s) + along * (-s, c)
        px = offsets[:, None] * c - along[None, :] * s
        py = offsets[:, None] * s + along[None, :] * c
        col = np.floor(px + size / 2).astype(np.int64)
        row = np.floor(py + size / 2).astype(np.int64)
        inside = (col >= 0) & (col < size) & (row >= 0) & (row < size)
        ray = np.broadcast_to(ray_of[:, None], px.shape)[inside]
        pix = row[inside] * size + col[inside]
        block = np.bincount(ray * npix + pix, minlength=rays_per_angle * npix)
        A[k * rays_per_angle:(k + 1) * rays_per_angle] = block.reshape(rays_per_angle, npix) * weight
    return A


@dataclass
class ImagingProblem:
    truth: np.ndarray
    A: Dense
    data: np.ndarray
    nu: float
    height: int
    width: int
    rays_per_angle: int
    angles: int
    views_per_block: int = 1

    def batch_size(self) -> int:
        """Rows per block of ``views_per_block`` whole views."""
        return self.rays_per_angle * self.views_per_block

    def to_problem(self) -> ProblemSpec:
        """``||Ax - f||^2 + nu ||grad x||_1`` scaled by ``1/(2n)`` into finite-sum form.

        With ``f_i = 0.5 (a_i^T x - f_i)^2`` the TV weight becomes ``nu / (2n)``.
        """
        n = self.A.out_dim
        grad = Grad2D(self.height, self.width)
        return ProblemSpec(LeastSquares(self.A.matrix, self.data),
                           L1(grad.out_dim, self.nu / (2 * n)), grad)


def gen_imaging_problem(size: int = 32, rays_per_angle: int = 48, angles: int = 48,
                        noise_variance: float = 0.01, nu: float | None = None,
                        seed: int = 0, views_per_block: int = 1) -> ImagingProblem:
    """Phantom, projector and noisy data; ``nu`` defaults to ``0.05 * max(data)``.

    Rows are grouped by view; with ``views_per_block > 1`` the views are
    reordered by :func:`view_order` so that contiguous blocks of
    ``rays_per_angle * views_per_block`` rows mix directions.
    """
    if size not in IMAGE_SIZES:
        raise ValueError(f"image size must be one of {IMAGE_SIZES}")
    if rays_per_angle < 1 or angles < 1:
        raise ValueError("need at least one ray and one angle")
    if noise_variance < 0:
        raise ValueError("noise variance must be nonnegative")
    truth = phantom(size).ravel()
    A = parallel_beam_matrix(size, rays_per_angle, angles)
    if views_per_block > 1:
        order = view_order(angles, views_per_block)
        A = A.reshape(angles, rays_per_angle, -1)[order].reshape(angles * rays_per_angle, -1)
    clean = A @ truth
    rng = np.random.default_rng(seed)
    data = clean + math.sqrt(noise_variance) * rng.standard_normal(clean.shape)
    if nu is None:
        nu = 0.05 * float(data.max())
    return ImagingProblem(truth, Dense(A), data, float(nu), size, size, rays_per_angle, angles,
                          views_per_block)


def write_pgm(path, image, lo: float | None = None, hi: float | None = None) -> None:
    """ASCII (P2) greyscale export, values linearly mapped to 0..255."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("write_pgm needs a 2-D image")
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    q = np.clip(np.rint((img - lo) * scale), 0, 255).astype(int)
    h, w = q.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in q:
            fh.write(" ".join(map(str, row)) + "\n")
