"""Sign-flip bootstrap calibration of the multiscale thresholds.

The calibration range supplies centred outer-product residuals. Bootstrap
streams of the analysis length are drawn with replacement from the residuals
and their negatives; the multiscale statistic of each stream gives one row of
the replicate matrix. Per-window thresholds are empirical upper quantiles at
a common level, chosen as large as possible while the fraction of replicates
in which *any* window exceeds its threshold stays at or below ``alpha``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import ConfigurationError, InvalidInputError, SampleTooShortError
from .stats import (
    REFRESH_INTERVAL,
    ScalingVector,
    WindowSet,
    check_sample,
    compute_scaling,
    resolve_calib_range,
    vec_outer_rows,
)

__all__ = [
    "DEFAULT_REPLICATES",
    "MIN_REPLICATES",
    "ResidualSet",
    "BootstrapMatrix",
    "CalibrationResult",
    "compute_residuals",
    "replicate_rng",
    "draw_bootstrap_stream",
    "bootstrap_statistic",
    "run_replicates",
    "empirical_quantile",
    "familywise_exceedance",
    "multiplicity_correct",
    "calibrate",
]

DEFAULT_REPLICATES = 1000
MIN_REPLICATES = 100
# replicates per task handed to the thread pool
_BATCH = 64


@dataclass(frozen=True, eq=False)
class ResidualSet:
    """Centred outer-product vectors ``W_i - mean(W)`` over the calibration range."""

    residuals: np.ndarray
    calib_range: np.ndarray
    mean_vec: np.ndarray

    @property
    def s(self) -> int:
        return self.residuals.shape[0]


def compute_residuals(X, calib_range=None) -> ResidualSet:
    X = check_sample(X)
    idx = resolve_calib_range(calib_range, X.shape[0])
    W = vec_outer_rows(X[idx - 1])
    mean = W.mean(axis=0)
    return ResidualSet(W - mean, idx, mean)


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Independent generator for replicate ``b``, a pure function of ``(seed, b)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


def _draw_indices(s: int, length: int, rng: np.random.Generator) -> np.ndarray:
    # k < s picks +residual[k], k >= s picks -residual[k - s]
    return rng.integers(0, 2 * s, size=length)


def _signed_support(residuals: np.ndarray) -> np.ndarray:
    return np.concatenate([residuals, -residuals], axis=0)


def draw_bootstrap_stream(residuals: ResidualSet, length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``length`` vectors uniformly from ``{+Z_i, -Z_i}``.

    Returns an array of shape ``(length, p(p+1)/2)``.
    """
    if residuals.s == 0:
        raise InvalidInputError("no residuals to resample")
    idx = _draw_indices(residuals.s, length, rng)
    return _signed_support(residuals.residuals)[idx]


@njit(cache=True, nogil=True)
def _boot_kernel(support, idx, inv_sigma, sizes, refresh):
    # Row b of the result: max over t, c of |S_l - S_r| * inv_sigma / sqrt(2n)
    # for the stream support[idx[b]], one column per window size. Window sums
    # slide one step at a time and are re-accumulated every `refresh` steps.
    n_rep, N = idx.shape
    d = support.shape[1]
    out = np.zeros((n_rep, sizes.size))
    Z = np.empty((N, d))
    S = np.empty((N, d))
    for b in range(n_rep):
        for i in range(N):
            Z[i] = support[idx[b, i]]
        for w in range(sizes.size):
            n = sizes[w]
            for j in range(N - n + 1):
                if j % refresh == 0:
                    for c in range(d):
                        S[j, c] = 0.0
                    for i in range(j, j + n):
                        for c in range(d):
                            S[j, c] += Z[i, c]
                else:
                    for c in range(d):
                        S[j, c] = S[j - 1, c] + (Z[j + n - 1, c] - Z[j - 1, c])
            best = 0.0
            for t in range(N - 2 * n + 1):
                for c in range(d):
                    g = abs(S[t, c] - S[t + n, c]) * inv_sigma[c]
                    if g > best:
                        best = g
            out[b, w] = best / math.sqrt(2.0 * n)
    return out


def _boot_max(support, idx, windows: WindowSet, inv_sigma) -> np.ndarray:
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    if inv_sigma.size == 0:
        return np.zeros((idx.shape[0], len(windows)))
    return _boot_kernel(
        np.ascontiguousarray(support, dtype=np.float64),
        idx,
        np.ascontiguousarray(inv_sigma),
        np.asarray(windows.sizes, dtype=np.int64),
        REFRESH_INTERVAL,
    )


def bootstrap_statistic(stream, scaling: ScalingVector, windows: WindowSet) -> np.ndarray:
    """Maximal bootstrap statistic per window size for one stream.

    For each ``n`` this is the largest over central points ``t`` and active
    coordinates ``c`` of ``|sum_left Z[c] - sum_right Z[c]| / (sqrt(2n) sigma[c])``.
    """
    stream = np.asarray(stream, dtype=np.float64)
    if stream.ndim != 2 or stream.shape[1] != scaling.sigma.shape[0]:
        raise InvalidInputError(f"stream has shape {stream.shape}, expected (N, {scaling.sigma.shape[0]})")
    if stream.shape[0] < 2 * windows.n_plus + 1:
        raise SampleTooShortError(
            f"bootstrap stream of length {stream.shape[0]} < 2 * {windows.n_plus} + 1"
        )
    act = scaling.active
    positions = np.arange(stream.shape[0])
    return _boot_max(stream[:, act], positions, windows, 1.0 / scaling.sigma[act])[0]


@dataclass(frozen=True, eq=False)
class BootstrapMatrix:
    """Replicate maxima: row ``b``, column ``j`` holds replicate ``b`` for ``windows.sizes[j]``."""

    replicates: np.ndarray
    seed: int
    windows: WindowSet
    length: int

    @property
    def M(self) -> int:
        return self.replicates.shape[0]

    def column(self, n: int) -> np.ndarray:
        return self.replicates[:, self.windows.sizes.index(n)]


def run_replicates(
    residuals: ResidualSet,
    scaling: ScalingVector,
    windows: WindowSet,
    N: int,
    M: int = DEFAULT_REPLICATES,
    seed: int = 0,
    threads: int = 1,
) -> BootstrapMatrix:
    """Monte Carlo approximation of the bootstrap law of the window maxima.

    Replicate ``b`` uses :func:`replicate_rng` ``(seed, b)``, so the matrix does
    not depend on ``threads`` or on how replicates are batched.
    """
    if M < MIN_REPLICATES:
        raise ConfigurationError(f"need at least {MIN_REPLICATES} replicates, got {M}")
    if N < 2 * windows.n_plus + 1:
        raise SampleTooShortError(f"horizon {N} < 2 * {windows.n_plus} + 1")
    if residuals.residuals.shape[1] != scaling.sigma.shape[0]:
        raise InvalidInputError("residuals and scaling have different coordinate counts")
    act = scaling.active
    support = _signed_support(residuals.residuals)[:, act]
    inv_sigma = 1.0 / scaling.sigma[act]
    batch = _BATCH
    starts = range(0, M, batch)
    out = np.empty((M, len(windows)))

    def work(b0):
        b1 = min(b0 + batch, M)
        idx = np.stack([_draw_indices(residuals.s, N, replicate_rng(seed, b)) for b in range(b0, b1)])
        out[b0:b1] = _boot_max(support, idx, windows, inv_sigma)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for b0 in starts:
            work(b0)
    return BootstrapMatrix(out, int(seed), windows, int(N))


def _grid_count(M: int, x: float) -> int:
    # floor(M * x), robust to representation error when M * x is an integer
    m = M * x
    r = round(m)
    return r if abs(m - r) < 1e-9 else math.floor(m)


def empirical_quantile(column, x: float) -> float:
    """Smallest value ``z`` of ``column`` with ``#{column > z} / M <= x``.

    This is the ``ceil(M (1 - x))``-th smallest value.

    >>> empirical_quantile([1.0, 2.0, 3.0, 4.0], 0.25)
    3.0
    """
    if not 0.0 < x < 1.0:
        raise ConfigurationError(f"quantile level must lie in (0, 1), got {x}")
    col = np.sort(np.asarray(column, dtype=np.float64))
    M = col.size
    if M == 0:
        raise InvalidInputError("empty column")
    return float(col[M - _grid_count(M, x) - 1])


def familywise_exceedance(replicates: np.ndarray, thresholds) -> float:
    """Fraction of replicates in which some window strictly exceeds its threshold."""
    hits = np.any(replicates > np.asarray(thresholds, dtype=np.float64), axis=1)
    return float(np.count_nonzero(hits)) / replicates.shape[0]


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Thresholds with the bookkeeping needed to reuse them.

    ``conservative_floor`` is set when even the finest grid level ``1/M``
    exceeded ``alpha`` familywise; ``alpha_star`` is then ``1/M``.
    """

    alpha: float
    alpha_star: float
    thresholds: dict
    windows: WindowSet
    matrix: BootstrapMatrix | None = None
    scaling: ScalingVector | None = None
    horizon: int | None = None
    conservative_floor: bool = False
    seed: int | None = None
    M: int | None = None
    extra: dict = field(default_factory=dict)

    def threshold_vector(self) -> np.ndarray:
        return np.array([self.thresholds[n] for n in self.windows])

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "alpha_star": self.alpha_star,
            "M": self.M,
            "seed": self.seed,
            "windows": list(self.windows.sizes),
            "thresholds": {str(n): self.thresholds[n] for n in self.windows},
            "horizon": self.horizon,
            "conservative_floor": self.conservative_floor,
        }
        if self.scaling is not None:
            d["scaling_digest"] = self.scaling.digest()
            d["calib_range"] = _range_to_json(self.scaling.calib_range)
            d["scaling"] = {"p": self.scaling.p, "sigma": self.scaling.sigma.tolist()}
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        try:
            windows = WindowSet.of(d["windows"])
            thresholds = {int(k): float(v) for k, v in d["thresholds"].items()}
            alpha = float(d["alpha"])
            alpha_star = float(d["alpha_star"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed calibration document: {exc}") from exc
        if set(thresholds) != set(windows.sizes):
            raise ConfigurationError("calibration thresholds do not match its window set")
        scaling = None
        if "scaling" in d:
            sc = d["scaling"]
            calib = _range_from_json(d.get("calib_range"))
            scaling = ScalingVector.from_sigma(sc["sigma"], calib, int(sc["p"]))
            if "scaling_digest" in d and d["scaling_digest"] != scaling.digest():
                raise ConfigurationError("calibration scaling digest mismatch")
        return cls(
            alpha=alpha,
            alpha_star=alpha_star,
            thresholds=thresholds,
            windows=windows,
            scaling=scaling,
            horizon=d.get("horizon"),
            conservative_floor=bool(d.get("conservative_floor", False)),
            seed=d.get("seed"),
            M=d.get("M"),
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        return cls.from_dict(json.loads(text))


def _range_to_json(idx: np.ndarray):
    idx = np.asarray(idx)
    if idx.size and np.all(np.diff(idx) == 1):
        return {"start": int(idx[0]), "stop": int(idx[-1])}
    return [int(i) for i in idx]


def _range_from_json(obj):
    if obj is None:
        return np.array([], dtype=np.int64)
    if isinstance(obj, dict):
        return np.arange(int(obj["start"]), int(obj["stop"]) + 1)
    return np.asarray(obj, dtype=np.int64)


def multiplicity_correct(matrix: BootstrapMatrix, alpha: float) -> CalibrationResult:
    """Pick the common per-window level and the resulting thresholds.

    The level is the largest grid value ``k/M <= alpha`` for which the
    familywise exceedance at the per-window ``k/M`` quantiles is ``<= alpha``.
    The exceedance is nondecreasing in ``k``, so the search is a bisection.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    rep = matrix.replicates
    M = rep.shape[0]
    ordered = np.sort(rep, axis=0)

    def thresholds_at(k):
        return ordered[M - k - 1]

    def ok(k):
        return familywise_exceedance(rep, thresholds_at(k)) <= alpha

    k_hi = min(M - 1, _grid_count(M, alpha))
    while k_hi >= 1 and k_hi / M > alpha:
        k_hi -= 1
    conservative = k_hi < 1 or not ok(1)
    if conservative:
        k = 1
    else:
        lo, hi = 1, k_hi  # ok(lo) holds
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if ok(mid):
                lo = mid
            else:
                hi = mid - 1
        k = lo
    th = thresholds_at(k)
    return CalibrationResult(
        alpha=float(alpha),
        alpha_star=k / M,
        thresholds={n: float(v) for n, v in zip(matrix.windows, th)},
        windows=matrix.windows,
        matrix=matrix,
        horizon=matrix.length,
        conservative_floor=conservative,
        seed=matrix.seed,
        M=M,
    )


def calibrate(
    X,
    windows: WindowSet,
    alpha: float = 0.05,
    calib_range=None,
    M: int = DEFAULT_REPLICATES,
    seed: int = 0,
    horizon: int | None = None,
    threads: int = 1,
    scaling: ScalingVector | None = None,
) -> CalibrationResult:
    """Estimate scales on the calibration range and calibrate thresholds.

    ``horizon`` is the length of the bootstrap streams; it defaults to the
    sample length (offline use). For monitoring, pass the declared number of
    observations to be watched.
    """
    if not isinstance(windows, WindowSet):
        windows = WindowSet.of(windows)
    X = check_sample(X)
    N = X.shape[0] if horizon is None else int(horizon)
    if N < 2 * windows.n_plus + 1:
        raise ConfigurationError(
            f"window {windows.n_plus} too large for horizon {N} (need 2n + 1 <= N)"
        )
    if scaling is None:
        scaling = compute_scaling(X, calib_range)
    residuals = compute_residuals(X, scaling.calib_range)
    matrix = run_replicates(residuals, scaling, windows, N, M=M, seed=seed, threads=threads)
    result = multiplicity_correct(matrix, alpha)
    return CalibrationResult(
        alpha=result.alpha,
        alpha_star=result.alpha_star,
        thresholds=result.thresholds,
        windows=windows,
        matrix=matrix,
        scaling=scaling,
        horizon=N,
        conservative_floor=result.conservative_floor,
        seed=int(seed),
        M=M,
    )
