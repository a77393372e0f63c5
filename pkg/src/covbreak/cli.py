"""Command-line interface: ``covbreak {calibrate,detect,stream,simulate}``.

Exit codes: 0 no break (or success), 10 break detected, 1 usage error,
2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bootstrap import DEFAULT_REPLICATES, CalibrationResult, calibrate
from .detector import OnlineDetector, detect_offline
from .exceptions import ConfigurationError, CovBreakError, DataFormatError, InvalidInputError
from .io import IngestSpec, ingest, mean_to_sd_ratio, parse_row
from .simulation import (
    ExperimentConfig,
    delay_sweep,
    run_experiment,
    sweep_to_csv,
)
from .stats import WindowSet

EXIT_OK = 0
EXIT_BREAK = 10
EXIT_USAGE = 1
EXIT_DATA = 2

SEED_ENV = "COVBREAK_SEED"
MAX_SKIP_FRACTION = 0.01


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _windows(text: str) -> WindowSet:
    try:
        return WindowSet.of(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad window list {text!r}: {exc}") from None


def _calib_range(text: str) -> range:
    """``a:b`` is the inclusive 1-based range ``a..b``."""
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"calibration range must look like 1:100, got {text!r}") from None
    return range(lo, hi + 1)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def _add_ingest_args(p):
    p.add_argument("--delimiter", default=",", help="field separator (default ',')")
    hdr = p.add_mutually_exclusive_group()
    hdr.add_argument("--header", dest="header", action="store_true", default=None,
                     help="first row is a header")
    hdr.add_argument("--no-header", dest="header", action="store_false",
                     help="first row is data")
    p.add_argument("--log-returns", action="store_true", help="convert prices to log returns")
    p.add_argument("--center", action="store_true", help="subtract column means")


def _add_calib_args(p, required_windows=True):
    p.add_argument("--windows", type=_windows, required=required_windows,
                   help="comma-separated window sizes, e.g. 7,15,30,60")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--replicates", "-M", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--seed", type=int, default=None,
                   help=f"bootstrap seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--calib-range", type=_calib_range, default=None,
                   help="inclusive 1-based rows used for calibration, e.g. 1:100 (default: all)")
    p.add_argument("--horizon", type=int, default=None,
                   help="bootstrap stream length (default: sample length)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covbreak", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; never changes results")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="bootstrap thresholds from a data file")
    p.add_argument("data", help="delimited text file ('-' for stdin)")
    _add_ingest_args(p)
    _add_calib_args(p)
    p.add_argument("--output", "-o", required=True, help="calibration JSON to write")

    p = sub.add_parser("detect", help="offline test and localization")
    p.add_argument("data")
    _add_ingest_args(p)
    p.add_argument("--calibration", "-c", help="calibration JSON (else calibrate inline)")
    _add_calib_args(p, required_windows=False)
    p.add_argument("--output", "-o", help="report JSON path (default: stdout)")

    p = sub.add_parser("stream", help="monitor rows arriving on stdin")
    p.add_argument("--calibration", "-c", required=True)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--log-returns", action="store_true")
    p.add_argument("--stop-on-first", type=_bool, default=True, metavar="BOOL")
    p.add_argument("--horizon", type=int, default=None,
                   help="override the calibration horizon (must not exceed it)")

    p = sub.add_parser("simulate", help="Monte Carlo experiments from a JSON config")
    p.add_argument("config")
    p.add_argument("--runs", type=int, default=None, help="override the configured run count")
    p.add_argument("--replicates", "-M", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-json", help="result JSON path")
    p.add_argument("--output-csv", help="flat CSV table path")
    return parser


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _load_sample(args):
    spec = IngestSpec(args.data, args.delimiter, args.header, args.log_returns, args.center)
    X = ingest(spec)
    if not args.center:
        ratio = mean_to_sd_ratio(X)
        if np.any(ratio > 0.5):
            cols = ", ".join(str(c + 1) for c in np.flatnonzero(ratio > 0.5)[:5])
            _warn(f"column means are large relative to their spread (columns {cols}); "
                  "the test assumes zero-mean data, consider --center")
    return X


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _calibrate_from_args(X, args) -> CalibrationResult:
    seed = args.seed if args.seed is not None else _default_seed()
    horizon = args.horizon if args.horizon is not None else X.shape[0]
    if 2 * args.windows.n_plus + 1 > horizon:
        raise UsageError(f"window {args.windows.n_plus} larger than horizon {horizon} allows")
    if args.calib_range is not None and (args.calib_range.start < 1 or args.calib_range.stop - 1 > X.shape[0]):
        raise UsageError(f"calibration range outside 1..{X.shape[0]}")
    return calibrate(X, args.windows, alpha=args.alpha, calib_range=args.calib_range,
                     M=args.replicates, seed=seed, horizon=horizon, threads=args.threads)


def cmd_calibrate(args) -> int:
    X = _load_sample(args)
    cal = _calibrate_from_args(X, args)
    _write(args.output, cal.to_json())
    print(f"alpha={cal.alpha} alpha*={cal.alpha_star} M={cal.M} seed={cal.seed} horizon={cal.horizon}")
    if cal.conservative_floor:
        _warn("even the finest level exceeded alpha familywise; thresholds are at the 1/M floor")
    print("window  threshold")
    for n in cal.windows:
        print(f"{n:6d}  {cal.thresholds[n]:.6f}")
    return EXIT_OK


def _read_calibration(path) -> CalibrationResult:
    with open(path, encoding="utf-8") as fh:
        return CalibrationResult.from_json(fh.read())


def cmd_detect(args) -> int:
    X = _load_sample(args)
    if args.calibration:
        cal = _read_calibration(args.calibration)
        if args.windows is not None and args.windows.sizes != cal.windows.sizes:
            raise UsageError("--windows differs from the calibration's window set")
        if cal.scaling is None:
            raise UsageError("calibration file has no scaling vector")
        if cal.scaling.p != X.shape[1]:
            raise InvalidInputError(f"data has {X.shape[1]} columns, calibration expects {cal.scaling.p}")
        if cal.horizon is not None and cal.horizon != X.shape[0]:
            _warn(f"sample length {X.shape[0]} differs from calibration horizon {cal.horizon}")
    else:
        if args.windows is None:
            raise UsageError("either --calibration or --windows is required")
        cal = _calibrate_from_args(X, args)
    report = detect_offline(X, None, cal)
    if args.output in (None, "-"):
        sys.stdout.write(report.to_json())
        print(report.summary(), file=sys.stderr)
    else:
        _write(args.output, report.to_json())
        print(report.summary())
    return EXIT_BREAK if report.rejected else EXIT_OK


def cmd_stream(args, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    cal = _read_calibration(args.calibration)
    horizon = cal.horizon
    if args.horizon is not None:
        if horizon is not None and args.horizon > horizon:
            raise UsageError(f"--horizon {args.horizon} exceeds the calibrated horizon {horizon}")
        horizon = args.horizon
    det = OnlineDetector(cal, horizon=horizon, stop_on_first=args.stop_on_first)
    seen = skipped = 0
    prev = None
    code = EXIT_OK
    for lineno, line in enumerate(stdin, start=1):
        if not line.strip():
            continue
        seen += 1
        try:
            x = parse_row(line.rstrip("\r\n").split(args.delimiter), lineno)
            if len(x) != det.p:
                raise DataFormatError(f"{len(x)} cells, expected {det.p}", lineno)
            x = np.array(x)
            if args.log_returns:
                if np.any(x <= 0):
                    raise DataFormatError("non-positive price under log returns", lineno)
                cur, x = x, (np.log(x) - np.log(prev) if prev is not None else None)
                prev = cur
                if x is None:
                    continue
        except DataFormatError as exc:
            skipped += 1
            print(f"error: {exc}; row skipped", file=sys.stderr)
            continue
        if horizon is not None and det.t_now >= horizon:
            print(f"error: calibration horizon of {horizon} rows reached; refusing further rows "
                  "(recalibrate with a longer --horizon)", file=sys.stderr)
            return code if code == EXIT_BREAK else EXIT_DATA
        before = len(det.alarm_log)
        if det.push(x) is not None:
            code = EXIT_BREAK
            for a in det.alarm_log[before:]:
                stdout.write(a.to_json() + "\n")
            stdout.flush()
            if det.stopped:
                break
    if seen and skipped / seen > MAX_SKIP_FRACTION:
        print(f"error: skipped {skipped} of {seen} rows", file=sys.stderr)
        return EXIT_DATA
    if skipped:
        print(f"warning: skipped {skipped} of {seen} rows", file=sys.stderr)
    return code


def _experiment_table(base: dict, args) -> tuple[dict, list[dict]]:
    """Window sets x calibration ranges, each with a null and a break run."""
    rows = []
    results = []
    for windows in base["window_sets"]:
        for cr in base.get("calib_ranges", [None]):
            row = {"windows": " ".join(str(n) for n in sorted(windows)),
                   "calib_range": "all" if cr is None else f"{cr[0]}:{cr[1]}"}
            for tau, key in ((0, "type1_rate"), (base["tau"], "power")):
                d = dict(base, windows=windows, calib_range=cr, tau=tau)
                res = run_experiment(ExperimentConfig.from_dict(d), threads=args.threads)
                results.append(res.to_dict())
                row[key] = res.rejection_rate
                if tau:
                    row["localization"] = _fmt_opt(res.mean_n_hat)
                    row["coverage"] = _fmt_opt(res.coverage)
                    row["delta"] = res.delta
            rows.append(row)
    return {"mode": "table", "rows": rows, "experiments": results}, rows


def _fmt_opt(x):
    return None if x != x else x


def _print_table(rows, columns):
    widths = [max(len(c), *(len(_cell(r.get(c))) for r in rows)) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(_cell(r.get(c)).ljust(w) for c, w in zip(columns, widths)))


def _cell(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def cmd_simulate(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        conf = json.load(fh)
    if args.runs is not None:
        conf["runs"] = args.runs
    if args.replicates is not None:
        conf["M"] = args.replicates
    if args.seed is not None:
        conf["seed"] = args.seed
    elif SEED_ENV in os.environ:
        conf["seed"] = _default_seed()
    mode = conf.get("mode", "experiment")
    if mode == "table":
        if "window_sets" not in conf:
            raise UsageError("table mode needs 'window_sets'")
        doc, rows = _experiment_table(conf, args)
        columns = ["windows", "calib_range", "type1_rate", "power", "localization", "coverage"]
    elif mode == "sweep":
        base = ExperimentConfig.from_dict(conf)
        rows = delay_sweep(base, conf["multipliers"], conf.get("window_sets"), threads=args.threads)
        doc = {"mode": "sweep", "base": base.to_dict(), "rows": rows}
        columns = ["windows", "multiplier", "delta", "detection_rate", "mean_delay", "mean_n_hat"]
    elif mode == "experiment":
        res = run_experiment(ExperimentConfig.from_dict(conf), threads=args.threads)
        doc = dict(res.to_dict(), mode="experiment")
        rows = [{
            "windows": " ".join(str(n) for n in res.config.windows),
            "calib_range": "all" if res.config.calib_range is None else "%d:%d" % res.config.calib_range,
            "type1_rate": res.type1_rate,
            "power": res.power,
            "localization": _fmt_opt(res.mean_n_hat),
            "coverage": _fmt_opt(res.coverage),
            "mean_delay": _fmt_opt(res.mean_delay),
            "delta": res.delta,
        }]
        columns = ["windows", "calib_range", "type1_rate", "power", "localization", "coverage"]
    else:
        raise UsageError(f"unknown simulate mode {mode!r}")
    if args.output_json:
        _write(args.output_json, json.dumps(doc, indent=2) + "\n")
    if args.output_csv:
        _write(args.output_csv, sweep_to_csv(rows))
    _print_table(rows, columns)
    return EXIT_OK


_COMMANDS = {
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "stream": cmd_stream,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"covbreak: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CovBreakError, OSError, json.JSONDecodeError) as exc:
        print(f"covbreak: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
