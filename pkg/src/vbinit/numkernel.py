"""Dense linear algebra, seeded sampling and patch extraction.

Every array handled by the package is a C-contiguous ``float64`` numpy
array; 2-D arrays stand in for dense row-major matrices and images are
carried as flattened rows in channel-major ``C x H x W`` order.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import GeometryMismatch, NotPositiveDefinite

__all__ = [
    "as_matrix",
    "make_rng",
    "cholesky",
    "solve_spd",
    "gaussian_matrix",
    "PatchGeometry",
    "im2col",
    "col2im",
]

SYMMETRY_TOL = 1e-10
JITTER_SCALE = 1e-8


def as_matrix(a, name="array"):
    """Return ``a`` as a finite 2-D float64 array.

    1-D input is promoted to a single column.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return np.ascontiguousarray(arr)


def make_rng(seed, *stream):
    """Counter-based generator for ``(seed, *stream)``.

    Distinct stream ids give statistically independent generators, each
    reproducible on its own, so work can be farmed out in any order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def cholesky(a):
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Raises
    ------
    NotPositiveDefinite
        If ``a`` is not symmetric or a pivot is not strictly positive.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky needs a square matrix, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def solve_spd(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    On a failed factorization the diagonal is jittered once by
    ``1e-8 * mean(diag(a))`` before giving up; mini-batch Gram matrices
    are routinely rank deficient.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"row mismatch: a is {a.shape}, b is {b.shape}")
    chol = _cholesky_with_jitter(a)
    z = solve_triangular(chol, b, lower=True)
    x = solve_triangular(chol.T, z, lower=False)
    return x[:, 0] if vector else x


def _cholesky_with_jitter(a):
    try:
        return cholesky(a)
    except NotPositiveDefinite:
        jitter = JITTER_SCALE * abs(np.mean(np.diag(a)))
        if jitter == 0.0:
            raise
        return cholesky(a + jitter * np.eye(a.shape[0]))


def gaussian_matrix(rng, rows, cols, mean=0.0, std=1.0):
    """``rows x cols`` matrix of i.i.d. ``N(mean, std**2)`` draws."""
    if std < 0:
        raise ValueError("std must be non-negative")
    return mean + std * rng.standard_normal((rows, cols))


@dataclass(frozen=True)
class PatchGeometry:
    """Input volume and kernel layout of a convolution."""

    in_channels: int
    in_height: int
    in_width: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        dims = (self.in_channels, self.in_height, self.in_width,
                self.kernel_h, self.kernel_w, self.stride)
        if min(dims) < 1 or self.padding < 0:
            raise GeometryMismatch(f"non-positive dimension in {self}")
        if self.out_height < 1 or self.out_width < 1:
            raise GeometryMismatch(f"kernel larger than padded input in {self}")

    @property
    def out_height(self):
        return (self.in_height + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_width(self):
        return (self.in_width + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def n_positions(self):
        return self.out_height * self.out_width

    @property
    def patch_size(self):
        return self.in_channels * self.kernel_h * self.kernel_w

    @property
    def input_size(self):
        return self.in_channels * self.in_height * self.in_width


def _as_images(x, geom):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != geom.input_size:
        raise GeometryMismatch(
            f"expected rows of length {geom.input_size} for {geom}, got shape {x.shape}")
    return x.reshape(-1, geom.in_channels, geom.in_height, geom.in_width)


def im2col(x, geom):
    """Patch matrix of one image or a batch of flattened images.

    Returns an ``(N * out_h * out_w, C * kh * kw)`` array. Rows are ordered
    by image, then output position in row-major order; within a row the
    receptive field is flattened channel-major, matching the filter layout
    used by convolutional layers. Out-of-bounds taps read zero.
    """
    imgs = _as_images(x, geom)
    n = imgs.shape[0]
    p, s = geom.padding, geom.stride
    oh, ow = geom.out_height, geom.out_width
    padded = np.pad(imgs, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, geom.in_channels, geom.kernel_h, geom.kernel_w, oh, ow))
    for i in range(geom.kernel_h):
        i_end = i + s * oh
        for j in range(geom.kernel_w):
            j_end = j + s * ow
            cols[:, :, i, j] = padded[:, :, i:i_end:s, j:j_end:s]
    return np.ascontiguousarray(
        cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, geom.patch_size))


def col2im(cols, geom, n_images):
    """Adjoint of :func:`im2col`: scatter-add patch rows back to images.

    Returns an ``(n_images, C * H * W)`` array.
    """
    p, s = geom.padding, geom.stride
    oh, ow = geom.out_height, geom.out_width
    cols = np.asarray(cols).reshape(
        n_images, oh, ow, geom.in_channels, geom.kernel_h, geom.kernel_w)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)
    padded = np.zeros((n_images, geom.in_channels,
                       geom.in_height + 2 * p, geom.in_width + 2 * p))
    for i in range(geom.kernel_h):
        i_end = i + s * oh
        for j in range(geom.kernel_w):
            j_end = j + s * ow
            padded[:, :, i:i_end:s, j:j_end:s] += cols[:, :, i, j]
    imgs = padded[:, :, p:p + geom.in_height, p:p + geom.in_width]
    return np.ascontiguousarray(imgs.reshape(n_images, geom.input_size))
