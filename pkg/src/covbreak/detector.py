"""Decision rule, change-point localization and streaming monitoring."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import CalibrationResult
from .exceptions import ConfigurationError, InvalidInputError, NoDetectionError
from .stats import (
    REFRESH_INTERVAL,
    ScalingVector,
    StatisticsTrace,
    WindowSet,
    _mean_gap,
    block_sum,
    check_sample,
    scan_all,
    vec_outer,
)

__all__ = [
    "WindowResult",
    "DetectionReport",
    "Alarm",
    "OnlineDetector",
    "detect_offline",
    "exceedances",
    "localize",
]


@dataclass(frozen=True)
class WindowResult:
    n: int
    statistic: float
    threshold: float
    exceeded: bool
    argmax_center: int
    first_exceeding: int | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "exceeded": self.exceeded,
            "argmax_center": self.argmax_center,
            "first_exceeding": self.first_exceeding,
        }


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """Outcome of the offline test.

    ``n_hat`` is the narrowest window whose maximum exceeds its threshold and
    ``tau_hat`` its first exceeding central point; ``interval`` is
    ``(tau_hat - n_hat, tau_hat + n_hat - 1)``. ``calib_full_sample`` marks
    calibrations that used every observation, in which case the interval
    carries no coverage claim (the calibration data may straddle the break).
    """

    rejected: bool
    per_window: tuple[WindowResult, ...]
    alpha: float
    n_hat: int | None = None
    tau_hat: int | None = None
    interval: tuple[int, int] | None = None
    calib_full_sample: bool = False
    traces: tuple[StatisticsTrace, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "rejected": self.rejected,
            "alpha": self.alpha,
            "n_hat": self.n_hat,
            "tau_hat": self.tau_hat,
            "interval": list(self.interval) if self.interval else None,
            "calib_full_sample": self.calib_full_sample,
            "per_window": [w.to_dict() for w in self.per_window],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def summary(self) -> str:
        if not self.rejected:
            return f"no break detected at alpha={self.alpha}"
        lo, hi = self.interval
        return (
            f"break detected at alpha={self.alpha}: window n={self.n_hat}, "
            f"change point t={self.tau_hat}, interval [{lo}, {hi}]"
        )


def localize(report: DetectionReport) -> tuple[int, int]:
    """Interval ``[tau_hat - n_hat, tau_hat + n_hat - 1]`` of a rejecting report."""
    if not report.rejected:
        raise NoDetectionError("report did not reject; nothing to localize")
    return report.tau_hat - report.n_hat, report.tau_hat + report.n_hat - 1


def _resolve(calibration: CalibrationResult, windows, scaling):
    if windows is None:
        windows = calibration.windows
    elif not isinstance(windows, WindowSet):
        windows = WindowSet.of(windows)
    if windows.sizes != calibration.windows.sizes:
        raise ConfigurationError(
            f"scan windows {windows.sizes} differ from calibrated windows {calibration.windows.sizes}"
        )
    scaling = scaling if scaling is not None else calibration.scaling
    if scaling is None:
        raise ConfigurationError("calibration carries no scaling; pass one explicitly")
    return windows, scaling


def detect_offline(
    X,
    windows: WindowSet | None,
    calibration: CalibrationResult,
    scaling: ScalingVector | None = None,
) -> DetectionReport:
    """Scan every window size and apply the thresholds of ``calibration``."""
    windows, scaling = _resolve(calibration, windows, scaling)
    X = check_sample(X)
    if X.shape[1] != scaling.p:
        raise InvalidInputError(f"sample has p={X.shape[1]}, calibration has p={scaling.p}")
    traces = scan_all(X, scaling, windows)
    per_window = []
    for tr in traces:
        thr = calibration.thresholds[tr.window]
        hits = tr.exceeding(thr)
        per_window.append(
            WindowResult(
                n=tr.window,
                statistic=tr.max_value,
                threshold=thr,
                exceeded=bool(tr.max_value > thr),
                argmax_center=tr.argmax_center,
                first_exceeding=int(hits[0]) if hits.size else None,
            )
        )
    full = np.array_equal(scaling.calib_range, np.arange(1, X.shape[0] + 1))
    detecting = [w for w in per_window if w.exceeded]
    if not detecting:
        return DetectionReport(False, tuple(per_window), calibration.alpha,
                               calib_full_sample=full, traces=tuple(traces))
    first = detecting[0]
    n_hat, tau_hat = first.n, first.first_exceeding
    return DetectionReport(
        True,
        tuple(per_window),
        calibration.alpha,
        n_hat=n_hat,
        tau_hat=tau_hat,
        interval=(tau_hat - n_hat, tau_hat + n_hat - 1),
        calib_full_sample=full,
        traces=tuple(traces),
    )


def exceedances(report: DetectionReport, calibration: CalibrationResult) -> list[tuple[int, int, float]]:
    """Every ``(t, n, statistic)`` with statistic above threshold, sorted by ``(t, n)``."""
    out = []
    for tr in report.traces:
        thr = calibration.thresholds[tr.window]
        mask = tr.values > thr
        out.extend((int(t), tr.window, float(v)) for t, v in zip(tr.centers[mask], tr.values[mask]))
    return sorted(out)


@dataclass(frozen=True)
class Alarm:
    """Exceedance seen online; ``index`` is the observation count when it fired."""

    index: int
    t: int
    n: int
    statistic: float
    threshold: float

    def to_json(self) -> str:
        return json.dumps(
            {"index": self.index, "t": self.t, "n": self.n,
             "statistic": self.statistic, "threshold": self.threshold}
        )


class _WindowState:
    # running sums of the last n+1 windows of one size
    __slots__ = ("n", "threshold", "sums")

    def __init__(self, n, threshold):
        self.n = n
        self.threshold = threshold
        self.sums = deque(maxlen=n + 1)


class OnlineDetector:
    """Streaming version of the multiscale test.

    Observations are pushed one at a time. The statistic for central point
    ``t`` and window ``n`` becomes available once observation ``t + n - 1``
    arrives; it is computed from running window sums of the last ``2 n_plus``
    outer products, with the same arithmetic as the offline scan, so the two
    agree exactly.

    Parameters
    ----------
    calibration : CalibrationResult
        Thresholds (and, unless ``scaling`` is given, the coordinate scales).
    horizon : int, optional
        Number of observations the calibration covers. Defaults to
        ``calibration.horizon``; pushing beyond it raises.
    stop_on_first : bool, default=True
        Stop consuming after the first alarm. With ``False`` every exceedance
        is appended to ``alarm_log``.
    keep_trace : bool, default=False
        Record every computed statistic in ``trace[n]`` as ``(t, value)``.
    """

    def __init__(self, calibration: CalibrationResult, scaling: ScalingVector | None = None,
                 horizon: int | None = None, stop_on_first: bool = True, keep_trace: bool = False):
        self.windows, self.scaling = _resolve(calibration, None, scaling)
        self.thresholds = dict(calibration.thresholds)
        self.horizon = horizon if horizon is not None else calibration.horizon
        self.stop_on_first = stop_on_first
        self.p = self.scaling.p
        self._act = self.scaling.active
        self._inv_sigma = 1.0 / self.scaling.sigma[self._act]
        self._cap = 2 * self.windows.n_plus
        self._ring = np.zeros((self._cap, self._act.size))
        self._states = [_WindowState(n, self.thresholds[n]) for n in self.windows]
        self.t_now = 0
        self.alarm_log: list[Alarm] = []
        self.stopped = False
        self.trace = {n: [] for n in self.windows} if keep_trace else None

    def _rows(self, start, stop):
        # outer products of observations start..stop-1 (0-based), oldest first
        pos = np.arange(start, stop) % self._cap
        return self._ring[pos]

    def push(self, x) -> Alarm | None:
        """Consume one observation; return the alarm raised by it, if any.

        When several windows exceed at the same step, the smallest window is
        returned (all of them are logged when ``stop_on_first`` is off).
        """
        if self.stopped:
            return None
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.p,):
            raise InvalidInputError(f"observation has shape {x.shape}, expected ({self.p},)")
        if self.horizon is not None and self.t_now >= self.horizon:
            raise ConfigurationError(
                f"horizon of {self.horizon} observations reached; recalibrate for a longer stream"
            )
        i = self.t_now  # 0-based index of x
        self._ring[i % self._cap] = vec_outer(x)[self._act]
        self.t_now += 1
        fired = []
        for st in self._states:
            n = st.n
            j = i - n + 1  # start of the window ending at x
            if j < 0:
                continue
            if j % REFRESH_INTERVAL == 0:
                s = block_sum(self._rows(j, j + n))
            else:
                s = st.sums[-1] + (self._ring[i % self._cap] - self._ring[(j - 1) % self._cap])
            st.sums.append(s)
            if j < n:
                continue
            t = j + 1  # 1-based central point
            if self._act.size:
                value = float(_mean_gap(st.sums[0], s, n, self._inv_sigma))
            else:
                value = 0.0
            if self.trace is not None:
                self.trace[n].append((t, value))
            if value > st.threshold:
                fired.append(Alarm(self.t_now, t, n, value, st.threshold))
        if not fired:
            return None
        if self.stop_on_first:
            self.alarm_log.append(fired[0])
            self.stopped = True
        else:
            self.alarm_log.extend(fired)
        return fired[0]

    def run(self, X) -> list[Alarm]:
        """Push every row of ``X``; return the alarms raised along the way."""
        before = len(self.alarm_log)
        for x in check_sample(X):
            if self.stopped:
                break
            self.push(x)
        return self.alarm_log[before:]
