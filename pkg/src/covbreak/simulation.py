"""Synthetic two-regime Gaussian data and Monte Carlo experiments.

An experiment draws ``runs`` independent samples (with a covariance break at
``tau``, or none when ``tau == 0``), calibrates on each sample, runs the
offline test and aggregates rejection rate, localization and delay.
Everything is a pure function of the configuration, including its seed.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bootstrap import DEFAULT_REPLICATES, calibrate
from .detector import detect_offline
from .exceptions import ConfigurationError, InvalidInputError
from .stats import WindowSet

__all__ = [
    "CovarianceSpec",
    "ExperimentConfig",
    "ExperimentResult",
    "RunRecord",
    "realize_covariance",
    "realize_pair",
    "gen_sample",
    "gen_break_sample",
    "break_extent",
    "run_experiment",
    "delay_sweep",
    "sweep_to_csv",
]

_KINDS = ("identity", "diagonal", "factor_model", "explicit", "block_scaled")


@dataclass(frozen=True)
class CovarianceSpec:
    """Recipe for a covariance matrix.

    ``kind`` is one of

    - ``identity``
    - ``diagonal`` with ``values``
    - ``factor_model``: ``L L^T + noise * I`` with ``L`` a ``p x k`` standard
      normal matrix drawn from the generator
    - ``explicit`` with ``matrix``
    - ``block_scaled``: a base matrix with ``block`` randomly chosen
      coordinates multiplied by ``factor`` (their variances grow by
      ``factor**2``); only meaningful relative to another spec, see
      :func:`realize_pair`
    """

    kind: str
    p: int
    values: tuple | None = None
    k: int = 3
    noise: float = 0.1
    matrix: tuple | None = None
    block: int | None = None
    factor: float = 3.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown covariance kind {self.kind!r}; expected one of {_KINDS}")
        if self.p < 1:
            raise ConfigurationError(f"dimension must be positive, got {self.p}")

    @classmethod
    def from_dict(cls, d: dict, p: int | None = None) -> "CovarianceSpec":
        d = dict(d)
        if p is not None:
            d.setdefault("p", p)
        for key in ("values", "matrix"):
            if d.get(key) is not None:
                d[key] = tuple(tuple(r) if isinstance(r, list) else r for r in d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"bad covariance spec {d}: {exc}") from exc

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "p": self.p}
        if self.kind == "diagonal":
            d["values"] = list(self.values)
        elif self.kind == "factor_model":
            d.update(k=self.k, noise=self.noise)
        elif self.kind == "explicit":
            d["matrix"] = [list(r) for r in self.matrix]
        elif self.kind == "block_scaled":
            d.update(block=self.block, factor=self.factor)
        return d


def _factorize(S: np.ndarray) -> np.ndarray:
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise InvalidInputError("covariance matrix is not symmetric")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(S)
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise InvalidInputError(f"covariance matrix is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def realize_covariance(spec: CovarianceSpec, rng: np.random.Generator | None = None,
                       base: tuple[np.ndarray, np.ndarray] | None = None):
    """Return ``(Sigma, L)`` with ``L @ L.T == Sigma``.

    ``base`` is the ``(Sigma, L)`` pair a ``block_scaled`` spec perturbs.
    """
    p = spec.p
    if spec.kind == "identity":
        return np.eye(p), np.eye(p)
    if spec.kind == "diagonal":
        v = np.asarray(spec.values, dtype=np.float64)
        if v.shape != (p,) or np.any(v < 0):
            raise InvalidInputError("diagonal values must be p nonnegative numbers")
        return np.diag(v), np.diag(np.sqrt(v))
    if spec.kind == "factor_model":
        if rng is None:
            raise ConfigurationError("factor_model needs a random generator")
        lam = rng.standard_normal((p, spec.k))
        S = lam @ lam.T + spec.noise * np.eye(p)
        S = (S + S.T) / 2
        return S, _factorize(S)
    if spec.kind == "explicit":
        S = np.asarray(spec.matrix, dtype=np.float64)
        if S.shape != (p, p):
            raise InvalidInputError(f"explicit matrix has shape {S.shape}, expected ({p}, {p})")
        return S, _factorize(S)
    # block_scaled
    if base is None or rng is None:
        raise ConfigurationError("block_scaled needs a base covariance and a generator")
    S0, L0 = base
    block = spec.block if spec.block is not None else max(1, p // 4)
    coords = rng.choice(p, size=min(block, p), replace=False)
    scale = np.ones(p)
    scale[coords] = spec.factor
    return S0 * np.outer(scale, scale), L0 * scale[:, None]


def realize_pair(sigma1: CovarianceSpec, sigma2: CovarianceSpec, rng: np.random.Generator):
    """Realize the pre- and post-break covariances (and factors) together."""
    first = realize_covariance(sigma1, rng)
    second = realize_covariance(sigma2, rng, base=first)
    return first, second


def gen_sample(factor, N: int, rng: np.random.Generator) -> np.ndarray:
    """``N`` rows ``L g_i`` with ``g_i`` standard normal."""
    L = np.asarray(factor, dtype=np.float64)
    G = rng.standard_normal((N, L.shape[1]))
    return G @ L.T


def gen_break_sample(factor1, factor2, tau: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Rows ``1..tau`` from ``factor1``, rows ``tau+1..N`` from ``factor2``.

    Both regimes transform the same Gaussian draws, so equal factors give
    exactly :func:`gen_sample`.
    """
    if not 0 < tau < N:
        raise ConfigurationError(f"break position {tau} outside 1..{N - 1}")
    L1 = np.asarray(factor1, dtype=np.float64)
    L2 = np.asarray(factor2, dtype=np.float64)
    G = rng.standard_normal((N, L1.shape[1]))
    X = G @ L1.T
    X[tau:] = (G @ L2.T)[tau:]
    return X


def break_extent(sigma1, sigma2) -> float:
    """Largest absolute entrywise difference of two covariance matrices."""
    a = np.asarray(sigma1, dtype=np.float64)
    b = np.asarray(sigma2, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``calib_range`` is ``None`` (the whole sample) or an inclusive 1-based
    ``(first, last)`` pair. ``tau == 0`` means no break.
    """

    p: int
    N: int
    tau: int
    sigma1: CovarianceSpec
    sigma2: CovarianceSpec
    windows: WindowSet
    alpha: float = 0.05
    M: int = DEFAULT_REPLICATES
    calib_range: tuple[int, int] | None = None
    runs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if self.sigma1.p != self.p or self.sigma2.p != self.p:
            raise ConfigurationError("covariance specs disagree with p")
        if self.N < 2 * self.windows.n_plus + 1:
            raise ConfigurationError(f"N={self.N} too short for window {self.windows.n_plus}")
        if self.tau != 0 and not self.windows.n_plus < self.tau < self.N - self.windows.n_plus:
            raise ConfigurationError(
                f"tau={self.tau} must be 0 or strictly between {self.windows.n_plus} "
                f"and {self.N - self.windows.n_plus}"
            )
        if self.calib_range is not None:
            lo, hi = self.calib_range
            if not 1 <= lo < hi <= self.N:
                raise ConfigurationError(f"calibration range {self.calib_range} outside 1..{self.N}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            p = int(d["p"])
            cr = d.get("calib_range")
            return cls(
                p=p,
                N=int(d["N"]),
                tau=int(d.get("tau", 0)),
                sigma1=CovarianceSpec.from_dict(d.get("sigma1", {"kind": "factor_model"}), p),
                sigma2=CovarianceSpec.from_dict(d.get("sigma2", {"kind": "block_scaled"}), p),
                windows=WindowSet.of(d["windows"]),
                alpha=float(d.get("alpha", 0.05)),
                M=int(d.get("M", DEFAULT_REPLICATES)),
                calib_range=tuple(int(v) for v in cr) if cr is not None else None,
                runs=int(d.get("runs", 200)),
                seed=int(d.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"experiment config lacks {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "N": self.N,
            "tau": self.tau,
            "sigma1": self.sigma1.to_dict(),
            "sigma2": self.sigma2.to_dict(),
            "windows": list(self.windows.sizes),
            "alpha": self.alpha,
            "M": self.M,
            "calib_range": list(self.calib_range) if self.calib_range else None,
            "runs": self.runs,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RunRecord:
    rejected: bool
    n_hat: int | None
    tau_hat: int | None
    interval: tuple[int, int] | None

    def covers(self, tau: int) -> bool:
        return self.interval is not None and self.interval[0] <= tau <= self.interval[1]


@dataclass
class ExperimentResult:
    """Aggregates of one experiment.

    ``rejection_rate`` is the type-I error rate when the configuration has no
    break and the power otherwise. Localization figures are over rejecting
    runs only (``nan`` when there are none). ``wall_time`` is excluded from
    the serialized form so that outputs are reproducible byte for byte.
    """

    config: ExperimentConfig
    rejection_rate: float
    mean_n_hat: float
    coverage: float
    mean_delay: float
    delta: float
    per_run: list[RunRecord] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def type1_rate(self) -> float | None:
        return self.rejection_rate if self.config.tau == 0 else None

    @property
    def power(self) -> float | None:
        return self.rejection_rate if self.config.tau != 0 else None

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "type1_rate": self.type1_rate,
            "power": self.power,
            "mean_n_hat": _num(self.mean_n_hat),
            "coverage": _num(self.coverage),
            "mean_delay": _num(self.mean_delay),
            "delta": self.delta,
            "per_run": [asdict(r) for r in self.per_run],
        }


def _num(x):
    return None if x is None or np.isnan(x) else float(x)


def _run_seeds(seed: int, r: int) -> tuple[np.random.Generator, int]:
    ss = np.random.SeedSequence(seed, spawn_key=(1, r))
    data_ss, boot_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), int(boot_ss.generate_state(1, dtype=np.uint32)[0])


def _covariances(config: ExperimentConfig):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    return realize_pair(config.sigma1, config.sigma2, rng)


def _one_run(config: ExperimentConfig, L1, L2, r: int) -> RunRecord:
    rng, boot_seed = _run_seeds(config.seed, r)
    if config.tau == 0:
        X = gen_sample(L1, config.N, rng)
    else:
        X = gen_break_sample(L1, L2, config.tau, config.N, rng)
    cr = None if config.calib_range is None else range(config.calib_range[0], config.calib_range[1] + 1)
    cal = calibrate(X, config.windows, alpha=config.alpha, calib_range=cr, M=config.M, seed=boot_seed)
    rep = detect_offline(X, config.windows, cal)
    return RunRecord(rep.rejected, rep.n_hat, rep.tau_hat, rep.interval)


def run_experiment(config: ExperimentConfig, threads: int = 1, covariances=None) -> ExperimentResult:
    """Run ``config.runs`` independent repetitions and aggregate them.

    ``covariances`` overrides the realized ``((Sigma1, L1), (Sigma2, L2))``.
    """
    start = time.perf_counter()
    (S1, L1), (S2, L2) = covariances if covariances is not None else _covariances(config)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda r: _one_run(config, L1, L2, r), range(config.runs)))
    else:
        records = [_one_run(config, L1, L2, r) for r in range(config.runs)]
    detected = [rec for rec in records if rec.rejected]
    rate = len(detected) / len(records)
    if detected:
        mean_n = float(np.mean([rec.n_hat for rec in detected]))
    else:
        mean_n = float("nan")
    delta = break_extent(S1, S2) if config.tau else 0.0
    # no localization figures when the two regimes coincide
    if detected and delta > 0:
        coverage = float(np.mean([rec.covers(config.tau) for rec in detected]))
        delay = float(np.mean([rec.tau_hat + rec.n_hat - 1 - config.tau for rec in detected]))
    else:
        coverage = delay = float("nan")
    return ExperimentResult(config, rate, mean_n, coverage, delay, delta, records,
                            wall_time=time.perf_counter() - start)


def _scaled_spec(config: ExperimentConfig, multiplier: float):
    spec = config.sigma2
    if spec.kind == "block_scaled":
        return replace(spec, factor=1.0 + multiplier * (spec.factor - 1.0)), None
    # linear path between the two matrices; factorization validates PSD
    (S1, L1), (S2, _) = _covariances(config)
    S = S1 + multiplier * (S2 - S1)
    return None, ((S1, L1), (S, _factorize(S)))


def delay_sweep(base: ExperimentConfig, multipliers, window_sets=None, threads: int = 1) -> list[dict]:
    """Detection rate and delay as the break grows, optionally per window set.

    Multiplier ``m`` moves the post-break covariance along a path starting at
    the pre-break one (``m = 0``, no break) and reaching ``base.sigma2`` at
    ``m = 1``: for ``block_scaled`` the scaling factor becomes
    ``1 + m (factor - 1)``, otherwise the matrices are interpolated linearly.
    """
    multipliers = [float(m) for m in multipliers]
    if any(m < 0 for m in multipliers) or any(b <= a for a, b in zip(multipliers, multipliers[1:])):
        raise ConfigurationError("multipliers must be nonnegative and strictly increasing")
    if base.tau == 0:
        raise ConfigurationError("delay sweep needs a break position tau > 0")
    window_sets = [base.windows] if window_sets is None else [
        w if isinstance(w, WindowSet) else WindowSet.of(w) for w in window_sets
    ]
    rows = []
    for windows in window_sets:
        for m in multipliers:
            spec, covs = _scaled_spec(base, m)
            cfg = replace(base, windows=windows, sigma2=spec if spec is not None else base.sigma2)
            res = run_experiment(cfg, threads=threads, covariances=covs)
            rows.append({
                "windows": " ".join(str(n) for n in windows),
                "n_plus": windows.n_plus,
                "multiplier": m,
                "delta": res.delta,
                "detection_rate": res.rejection_rate,
                "mean_delay": _num(res.mean_delay),
                "mean_n_hat": _num(res.mean_n_hat),
                "coverage": _num(res.coverage),
                "runs": cfg.runs,
            })
    return rows


def sweep_to_csv(rows: list[dict]) -> str:
    """Flat CSV of table rows (one per configuration)."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buf.getvalue()


def config_from_json(text: str) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(text))
