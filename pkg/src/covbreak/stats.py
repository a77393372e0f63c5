"""Multiscale sup-norm statistics for breaks in the covariance structure.

Observations ``X_1..X_N`` are rows of an ``(N, p)`` array. Each row is mapped
to the upper triangle of its outer product ``X_i X_i^T`` (``p(p+1)/2``
coordinates, row-major over ``j <= k``). For a window size ``n`` and a central
point ``t`` (1-based, ``n+1 <= t <= N-n+1``) the statistic compares the mean of
those vectors over the left window ``{t-n..t-1}`` with the right window
``{t..t+n-1}``, coordinate-wise scaled, and takes the largest absolute value.

Central points and calibration indices are 1-based throughout, so that
reported change-point estimates read the same way as the usual notation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    ConfigurationError,
    InsufficientDataError,
    InvalidInputError,
    OutOfRangeError,
    SampleTooShortError,
)

__all__ = [
    "DEGENERACY_FLOOR",
    "REFRESH_INTERVAL",
    "WindowSet",
    "ScalingVector",
    "StatisticsTrace",
    "check_sample",
    "n_coords",
    "flat_index",
    "coord_pair",
    "vec_outer",
    "vec_outer_rows",
    "resolve_calib_range",
    "compute_scaling",
    "window_sums",
    "statistic_at",
    "scan_window",
    "scan_all",
]

#: relative threshold below which a coordinate's scale marks it inactive
DEGENERACY_FLOOR = 1e-12
#: number of slides between full re-accumulations of a running window sum
REFRESH_INTERVAL = 1024


def check_sample(X) -> np.ndarray:
    """Return ``X`` as a finite 2-D float64 array, raising on anything else."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"sample must be 2-D (N, p), got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise InvalidInputError(f"sample is empty, shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise InvalidInputError(
            f"sample contains non-finite value at row {bad[0] + 1}, column {bad[1] + 1}"
        )
    return X


def n_coords(p: int) -> int:
    return p * (p + 1) // 2


def flat_index(j: int, k: int, p: int) -> int:
    """Flat position of the pair ``(j, k)`` (0-based, order-insensitive)."""
    if j > k:
        j, k = k, j
    if not 0 <= j <= k < p:
        raise OutOfRangeError(f"pair ({j}, {k}) outside a {p}x{p} matrix")
    return j * p - j * (j - 1) // 2 + (k - j)


def coord_pair(c: int, p: int) -> tuple[int, int]:
    """Inverse of :func:`flat_index`."""
    if not 0 <= c < n_coords(p):
        raise OutOfRangeError(f"flat index {c} outside [0, {n_coords(p)})")
    rows, cols = np.triu_indices(p)
    return int(rows[c]), int(cols[c])


def vec_outer(x) -> np.ndarray:
    """Upper triangle of ``x x^T`` as a flat vector.

    >>> vec_outer([2.0, 3.0])
    array([4., 6., 9.])
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("vector contains non-finite values")
    rows, cols = np.triu_indices(x.shape[0])
    return x[rows] * x[cols]


def vec_outer_rows(X: np.ndarray) -> np.ndarray:
    """Row-wise :func:`vec_outer`, shape ``(N, p(p+1)/2)``."""
    rows, cols = np.triu_indices(X.shape[1])
    return X[:, rows] * X[:, cols]


@dataclass(frozen=True)
class WindowSet:
    """Strictly increasing set of window sizes scanned together."""

    sizes: tuple[int, ...]

    def __init__(self, sizes: Iterable[int]):
        sizes = tuple(int(n) for n in sizes)
        if not sizes:
            raise ConfigurationError("window set is empty")
        if any(n < 2 for n in sizes):
            raise ConfigurationError(f"window sizes must be >= 2, got {sizes}")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError(f"window sizes must be strictly increasing, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def of(cls, sizes: Iterable[int]) -> "WindowSet":
        """Build from sizes in any order (duplicates are an error)."""
        sizes = list(sizes)
        if len(set(sizes)) != len(sizes):
            raise ConfigurationError(f"duplicate window sizes in {sizes}")
        return cls(sorted(sizes))

    @property
    def n_minus(self) -> int:
        return self.sizes[0]

    @property
    def n_plus(self) -> int:
        return self.sizes[-1]

    def __len__(self) -> int:
        return len(self.sizes)

    def __iter__(self):
        return iter(self.sizes)

    def centers(self, n: int, N: int) -> np.ndarray:
        """Central points ``n+1, ..., N-n+1`` (1-based)."""
        return np.arange(n + 1, N - n + 2)

    def total_centers(self, N: int) -> int:
        """Number of statistics evaluated over all windows for length ``N``."""
        return sum(max(N - 2 * n + 1, 0) for n in self.sizes)

    def check_length(self, N: int) -> None:
        if N < 2 * self.n_plus + 1:
            raise SampleTooShortError(
                f"sample length {N} < 2 * {self.n_plus} + 1 required by window set {self.sizes}"
            )


def resolve_calib_range(calib_range, N: int) -> np.ndarray:
    """Normalise a calibration index set to a sorted array of 1-based indices.

    ``None`` means the full sample ``1..N``; a ``range`` or any integer
    sequence is taken as 1-based indices.
    """
    if calib_range is None:
        idx = np.arange(1, N + 1)
    else:
        idx = np.asarray(list(calib_range), dtype=np.int64)
    if idx.ndim != 1:
        raise ConfigurationError("calibration range must be one-dimensional")
    if idx.size and (idx.min() < 1 or idx.max() > N):
        raise ConfigurationError(
            f"calibration range [{idx.min()}, {idx.max()}] outside 1..{N}"
        )
    idx = np.unique(idx)
    if idx.size < 2:
        raise InsufficientDataError(f"calibration range needs >= 2 indices, got {idx.size}")
    return idx


@dataclass(frozen=True, eq=False)
class ScalingVector:
    """Per-coordinate standard deviations of the outer-product entries.

    Attributes
    ----------
    sigma : ndarray of shape (p(p+1)/2,)
        Estimated standard deviation of each upper-triangle entry of
        ``X_i X_i^T`` over the calibration range.
    active_mask : ndarray of bool
        ``False`` for coordinates whose scale is below the degeneracy floor;
        those never enter a statistic.
    calib_range : ndarray of int
        1-based indices used for the estimate.
    """

    sigma: np.ndarray
    active_mask: np.ndarray
    calib_range: np.ndarray
    p: int

    def __post_init__(self):
        for name in ("sigma", "active_mask", "calib_range"):
            getattr(self, name).setflags(write=False)

    @property
    def s(self) -> int:
        return int(self.calib_range.size)

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.active_mask)

    @classmethod
    def from_sigma(cls, sigma, calib_range, p: int) -> "ScalingVector":
        """Wrap given scales, applying the degeneracy rule."""
        sigma = np.array(sigma, dtype=np.float64)
        if sigma.shape != (n_coords(p),):
            raise InvalidInputError(f"sigma has shape {sigma.shape}, expected ({n_coords(p)},)")
        if not np.all(np.isfinite(sigma)) or np.any(sigma < 0):
            raise InvalidInputError("sigma entries must be finite and nonnegative")
        top = sigma.max() if sigma.size and sigma.max() > 0 else 1.0
        active = sigma >= DEGENERACY_FLOOR * top
        return cls(sigma, active, np.array(calib_range, dtype=np.int64), p)

    def digest(self) -> str:
        """Stable hex digest of the scales, for matching persisted calibrations."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.int64(self.p).tobytes())
        h.update(np.ascontiguousarray(self.sigma, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def compute_scaling(X, calib_range=None) -> ScalingVector:
    """Estimate the coordinate scales on the calibration range.

    Uses the population divisor ``s``: ``sigma_c = sqrt(mean((W_ic - Wbar_c)^2))``
    with ``W_i = vec_outer(X_i)`` for ``i`` in the range.
    """
    X = check_sample(X)
    idx = resolve_calib_range(calib_range, X.shape[0])
    W = vec_outer_rows(X[idx - 1])
    dev = W - W.mean(axis=0)
    sigma = np.sqrt(np.mean(dev * dev, axis=0))
    return ScalingVector.from_sigma(sigma, idx, X.shape[1])


def block_sum(rows: np.ndarray) -> np.ndarray:
    """Sum along axis ``-2`` in strict row order.

    ``ndarray.sum`` may pick a different association depending on memory
    layout; the rolling scans and the streaming detector both refresh through
    this function so that they stay bit-identical.
    """
    return np.add.accumulate(rows, axis=-2)[..., -1, :]


def window_sums(W: np.ndarray, n: int) -> np.ndarray:
    """Sums of ``n`` consecutive rows along axis ``-2``.

    Entry ``j`` is ``W[j] + ... + W[j+n-1]``. Sums are advanced by sliding
    (add the entering row, drop the leaving one) and re-accumulated from
    scratch every :data:`REFRESH_INTERVAL` positions, giving ``O(len(W))``
    work per coordinate with bounded drift.
    """
    length = W.shape[-2]
    m = length - n + 1
    if m < 1:
        raise SampleTooShortError(f"{length} rows cannot hold a window of {n}")
    out = np.empty(W.shape[:-2] + (m, W.shape[-1]))
    for j0 in range(0, m, REFRESH_INTERVAL):
        j1 = min(j0 + REFRESH_INTERVAL, m)
        steps = np.empty(W.shape[:-2] + (j1 - j0, W.shape[-1]))
        steps[..., 0, :] = block_sum(W[..., j0:j0 + n, :])
        np.subtract(W[..., j0 + n:j1 + n - 1, :], W[..., j0:j1 - 1, :], out=steps[..., 1:, :])
        np.cumsum(steps, axis=-2, out=out[..., j0:j1, :])
    return out


def _mean_gap(left, right, n, inv_sigma):
    # sqrt(n/2) |mean_l - mean_r| / sigma, maxed over the last axis
    gap = np.abs(left / n - right / n) * inv_sigma
    return np.sqrt(n / 2.0) * gap.max(axis=-1)


def _active_inverse(scaling: ScalingVector):
    act = scaling.active
    return act, 1.0 / scaling.sigma[act]


def _check_scaling(X: np.ndarray, scaling: ScalingVector) -> None:
    if scaling.sigma.shape[0] != n_coords(X.shape[1]):
        raise InvalidInputError(
            f"scaling has {scaling.sigma.shape[0]} coordinates, sample needs {n_coords(X.shape[1])}"
        )


def statistic_at(X, scaling: ScalingVector, n: int, t: int) -> float:
    """Statistic for window size ``n`` at 1-based central point ``t``.

    Evaluated directly from the two windows, without any rolling state.
    """
    X = check_sample(X)
    _check_scaling(X, scaling)
    N = X.shape[0]
    if n < 1 or not n + 1 <= t <= N - n + 1:
        raise OutOfRangeError(f"central point {t} outside {n + 1}..{N - n + 1} for window {n}")
    act, inv_sigma = _active_inverse(scaling)
    if act.size == 0:
        return 0.0
    rows, cols = np.triu_indices(X.shape[1])
    rows, cols = rows[act], cols[act]
    left = X[t - n - 1:t - 1]
    right = X[t - 1:t + n - 1]
    left_sum = (left[:, rows] * left[:, cols]).sum(axis=0)
    right_sum = (right[:, rows] * right[:, cols]).sum(axis=0)
    return float(_mean_gap(left_sum, right_sum, n, inv_sigma))


@dataclass(frozen=True, eq=False)
class StatisticsTrace:
    """All statistics of one window size.

    ``values[i]`` belongs to central point ``centers[i]``; ``argmax_center``
    is the smallest central point attaining ``max_value``.
    """

    window: int
    centers: np.ndarray
    values: np.ndarray
    max_value: float
    argmax_center: int

    @classmethod
    def from_values(cls, n: int, centers: np.ndarray, values: np.ndarray) -> "StatisticsTrace":
        i = int(np.argmax(values))  # first occurrence on ties
        return cls(n, centers, values, float(values[i]), int(centers[i]))

    def exceeding(self, threshold: float) -> np.ndarray:
        """Central points whose statistic strictly exceeds ``threshold``."""
        return self.centers[self.values > threshold]


def _scan_from_outer(W: np.ndarray, n: int, act, inv_sigma) -> np.ndarray:
    N = W.shape[0]
    if act.size == 0:
        return np.zeros(N - 2 * n + 1)
    sums = window_sums(W, n)
    return _mean_gap(sums[:N - 2 * n + 1], sums[n:], n, inv_sigma)


def scan_window(X, scaling: ScalingVector, n: int) -> StatisticsTrace:
    """Statistics at every central point for window size ``n``."""
    X = check_sample(X)
    _check_scaling(X, scaling)
    N = X.shape[0]
    if N < 2 * n + 1:
        raise SampleTooShortError(f"sample length {N} < 2 * {n} + 1")
    act, inv_sigma = _active_inverse(scaling)
    W = vec_outer_rows(X)[:, act]
    values = _scan_from_outer(W, n, act, inv_sigma)
    return StatisticsTrace.from_values(n, np.arange(n + 1, N - n + 2), values)


def scan_all(X, scaling: ScalingVector, windows: WindowSet | Sequence[int]) -> list[StatisticsTrace]:
    """:func:`scan_window` for every window size, in ascending order."""
    if not isinstance(windows, WindowSet):
        windows = WindowSet.of(windows)
    X = check_sample(X)
    _check_scaling(X, scaling)
    windows.check_length(X.shape[0])
    act, inv_sigma = _active_inverse(scaling)
    W = vec_outer_rows(X)[:, act]
    N = X.shape[0]
    return [
        StatisticsTrace.from_values(n, np.arange(n + 1, N - n + 2), _scan_from_outer(W, n, act, inv_sigma))
        for n in windows
    ]
