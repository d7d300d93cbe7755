"""Command-line front-end.

Exit codes: 0 success, 2 usage or parse error, 3 model validation failure,
4 non-converged trace under ``--strict``, 5 verification tolerance breach.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from typing import Sequence

import numpy as np

from .berger_tung import CornerSpec, UnboundedRateError, corner_point
from .model import (
    CeoModel,
    ModelError,
    Mode,
    TestChannelGains,
    validate_gains,
    validate_model,
)
from .montecarlo import MIN_REPORT_SAMPLES, McConfig, run_all
from .optimizer import OptimizerOptions, trace_boundary
from .quadratic import det_from_logloss
from .region import subset_bounds

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_NOT_CONVERGED = 4
EXIT_CHECK_FAILED = 5

LN2 = math.log(2.0)


class ModelFileError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class CliExit(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code


def _matrix(value, key: str) -> np.ndarray:
    if isinstance(value, bool):
        raise ModelFileError(key, "expected a matrix, got a boolean")
    if isinstance(value, (int, float)):
        value = [[value]]
    if not isinstance(value, list) or not value:
        raise ModelFileError(key, "expected a non-empty nested array")
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        value = [value]
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in row
        ):
            raise ModelFileError(f"{key}[{i}]", "rows must be arrays of numbers")
        rows.append(row)
    width = len(rows[0])
    if width == 0 or any(len(r) != width for r in rows):
        raise ModelFileError(key, "matrix is not rectangular")
    arr = np.array(rows, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ModelFileError(key, "entries must be finite")
    return arr


def _read_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ModelFileError(what, f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFileError(what, f"invalid JSON in {path}: {exc.msg} (line {exc.lineno})") from exc


def parse_omegas(data, key: str = "omegas") -> TestChannelGains:
    if isinstance(data, dict):
        if "omegas" not in data:
            raise ModelFileError(key, "missing key")
        data = data["omegas"]
        key = "omegas"
    if not isinstance(data, list) or not data:
        raise ModelFileError(key, "expected an array of matrices")
    return TestChannelGains(tuple(_matrix(o, f"{key}[{k}]") for k, o in enumerate(data)))


def parse_model(data) -> tuple[CeoModel, TestChannelGains | None]:
    if not isinstance(data, dict):
        raise ModelFileError("model", "top level must be an object")
    mode = data.get("mode", "real")
    if mode not in ("real", "complex"):
        raise ModelFileError("mode", f"expected 'real' or 'complex', got {mode!r}")
    if "sigma_x" not in data:
        raise ModelFileError("sigma_x", "missing key")
    sigma_x = _matrix(data["sigma_x"], "sigma_x")
    agents = data.get("agents")
    if not isinstance(agents, list) or not agents:
        raise ModelFileError("agents", "expected a non-empty array")
    pairs = []
    for k, ag in enumerate(agents):
        if not isinstance(ag, dict):
            raise ModelFileError(f"agents[{k}]", "expected an object with H and sigma")
        for name in ("H", "sigma"):
            if name not in ag:
                raise ModelFileError(f"agents[{k}].{name}", "missing key")
        pairs.append((_matrix(ag["H"], f"agents[{k}].H"), _matrix(ag["sigma"], f"agents[{k}].sigma")))
    m = CeoModel.from_arrays(sigma_x, [p[0] for p in pairs], [p[1] for p in pairs], Mode(mode))
    g = parse_omegas(data["omegas"]) if "omegas" in data else None
    return m, g


def load_inputs(model_path: str, omegas_path: str | None, need_gains: bool):
    m, g = parse_model(_read_json(model_path, "model"))
    if omegas_path is not None:
        g = parse_omegas(_read_json(omegas_path, "omegas"))
    problems = validate_model(m)
    if problems:
        raise CliExit(EXIT_INVALID, "invalid model: " + "; ".join(problems))
    if need_gains:
        if g is None:
            raise ModelFileError("omegas", "no gains given (use --omegas or an 'omegas' key)")
        problems = validate_gains(m, g)
        if problems:
            raise CliExit(EXIT_INVALID, "invalid gains: " + "; ".join(problems))
    return m, g


def fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def fmt_value(v) -> str:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return fmt(arr)
    return " ".join(fmt(x) for x in arr.ravel())


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _scale(bits: bool) -> float:
    return 1.0 / LN2 if bits else 1.0


def resolve_seed(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("CEO_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise CliExit(EXIT_USAGE, f"CEO_SEED must be an integer, got {env!r}")
    return 0


def cmd_evaluate(args, out) -> int:
    m, g = load_inputs(args.model, args.omegas, need_gains=True)
    table = subset_bounds(m, g)
    sc = _scale(args.bits)
    w = _writer(out)
    w.writerow(["subset_mask", "rate_sum_term", "cond_entropy_term", "f_value"])
    for mask in range(len(table)):
        w.writerow([mask, fmt(table.rate_sum[mask] * sc), fmt(table.cond_entropy[mask] * sc),
                    fmt(table.f[mask] * sc)])
    return EXIT_OK


def _parse_perm(text: str | None, K: int) -> tuple[int, ...]:
    if text is None:
        return tuple(range(K))
    try:
        perm = tuple(int(t) - 1 for t in text.split(","))
    except ValueError:
        raise CliExit(EXIT_USAGE, f"--perm must be comma-separated agent numbers, got {text!r}")
    if sorted(perm) != list(range(K)):
        raise CliExit(EXIT_USAGE, f"--perm must be a permutation of 1..{K}, got {text!r}")
    return perm


def cmd_corners(args, out) -> int:
    m, g = load_inputs(args.model, args.omegas, need_gains=True)
    perm = _parse_perm(args.perm, m.K)
    try:
        p = corner_point(m, CornerSpec(perm, g))
    except UnboundedRateError as exc:
        raise CliExit(EXIT_INVALID, str(exc))
    sc = _scale(args.bits)
    w = _writer(out)
    w.writerow([f"r_{k + 1}" for k in range(m.K)] + ["distortion"])
    w.writerow([fmt(r * sc) for r in p.rates] + [fmt(p.distortion * sc)])
    return EXIT_OK


def cmd_trace(args, out) -> int:
    if args.steps < 1:
        raise CliExit(EXIT_USAGE, "--steps must be at least 1")
    if args.rmin < 0 or args.rmax < args.rmin:
        raise CliExit(EXIT_USAGE, "need 0 <= --rmin <= --rmax")
    if args.starts < 1:
        raise CliExit(EXIT_USAGE, "--starts must be at least 1")
    m, _ = load_inputs(args.model, None, need_gains=False)
    grid = np.linspace(args.rmin, args.rmax, args.steps)
    opts = OptimizerOptions(starts=args.starts, seed=resolve_seed(args.seed),
                            max_iters=args.max_iters, workers=args.workers,
                            polish=not args.no_polish)
    points = trace_boundary(m, grid, opts)
    sc = _scale(args.bits)
    w = _writer(out)
    w.writerow(["r_sum", "distortion", "converged"])
    for p in points:
        d = det_from_logloss(m, p.distortion) if args.quadratic else p.distortion * sc
        w.writerow([fmt(p.r_sum * sc), fmt(d), "true" if p.converged else "false"])
    if args.strict and not all(p.converged for p in points):
        raise CliExit(EXIT_NOT_CONVERGED, "some grid points did not converge")
    return EXIT_OK


def cmd_verify(args, out) -> int:
    if args.samples < MIN_REPORT_SAMPLES:
        raise CliExit(EXIT_USAGE, f"warning: --samples {args.samples} is below the minimum "
                                  f"of {MIN_REPORT_SAMPLES} for a report")
    m, g = load_inputs(args.model, args.omegas, need_gains=True)
    if m.mode is not Mode.REAL:
        raise CliExit(EXIT_INVALID, "verification requires a real-valued model (mode 'real')")
    seed = resolve_seed(args.seed)
    cfg = McConfig(samples=args.samples, seed=seed, chunk=args.chunk, workers=args.workers)
    try:
        reports = run_all(m, g, cfg)
    except ModelError as exc:
        raise CliExit(EXIT_INVALID, str(exc))
    w = _writer(out)
    w.writerow(["name", "analytic", "empirical", "rel_error", "samples", "seed"])
    for r in reports:
        w.writerow([r.name, fmt_value(r.analytic), fmt_value(r.empirical),
                    f"{r.rel_error:.6e}", r.samples, seed])
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise CliExit(EXIT_CHECK_FAILED, "checks out of tolerance: " + ", ".join(failed))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 already; keep the message format
        self.print_usage(sys.stderr)
        raise CliExit(EXIT_USAGE, f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gaussceo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, gains=True):
        sp.add_argument("model", help="model file (JSON)")
        if gains:
            sp.add_argument("--omegas", help="gain matrices file (JSON); defaults to the model's 'omegas'")
        sp.add_argument("--bits", action="store_true", help="display rates and distortions in bits")

    sp = sub.add_parser("evaluate", help="subset bound table f(S) for fixed gains")
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("corners", help="successive-decoding corner point")
    common(sp)
    sp.add_argument("--perm", help="decoding order, e.g. 2,1 (default ascending)")
    sp.set_defaults(func=cmd_corners)

    sp = sub.add_parser("trace", help="minimal distortion over a sum-rate grid")
    common(sp, gains=False)
    sp.add_argument("--rmin", type=float, default=0.0)
    sp.add_argument("--rmax", type=float, default=2.0)
    sp.add_argument("--steps", type=int, default=11)
    sp.add_argument("--starts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=None, help="overrides CEO_SEED (default 0)")
    sp.add_argument("--max-iters", type=int, default=5000)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--quadratic", action="store_true",
                    help="report the error-matrix determinant instead of log-loss")
    sp.add_argument("--no-polish", action="store_true",
                    help="skip the conic refinement and report the gradient search alone")
    sp.add_argument("--strict", action="store_true", help="exit 4 if any point fails to converge")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("verify", help="Monte Carlo and dual-path identity checks")
    common(sp)
    sp.add_argument("--samples", type=int, default=200_000)
    sp.add_argument("--seed", type=int, default=None, help="overrides CEO_SEED (default 0)")
    sp.add_argument("--chunk", type=int, default=50_000)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except CliExit as exc:
        if str(exc):
            print(str(exc), file=sys.stderr)
        return exc.code
    except ModelFileError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


def entry() -> None:
    sys.exit(main())
