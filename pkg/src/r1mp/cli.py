"""Command-line entry point: ``r1mp {complete,image,sense,bench}``.

Every command writes its artifacts plus a ``manifest.json`` into ``--out``.
Numeric artifacts (``trace.json``, ``report.json``, model files) contain no
wall-clock data, so re-running a manifest reproduces them byte for byte;
timings live in the manifest only.

Exit codes: 0 success, 2 bad flags, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import ContractError, FactorModel, predict
from .dataio import (
    DataError,
    TripletFile,
    load_pgm,
    load_triplets,
    sample_mask,
    save_model,
    save_pgm,
    split_train_test,
    to_gray_image,
)
from .metrics import EvalReport, psnr, rmse
from .sensing import CapacityError, apply, gaussian_operator, r1mp4ms, save_operator
from .solvers import SOLVERS, SolverConfig, solve
from .svdtop import PowerConfig

log = logging.getLogger("r1mp")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FLAGS, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class FlagError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_manifest(out, args, datasets, timings):
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "flags": flags,
        "seed": args.seed,
        "datasets": datasets,
        "library_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
        "platform": platform.platform(),
        "timings": timings,
    }
    _dump(manifest, Path(out) / "manifest.json")


def _solver_config(args, rank) -> SolverConfig:
    try:
        power = PowerConfig(max_iters=args.power_iters, rel_tol=args.power_tol, seed=args.seed)
        return SolverConfig(rank_budget=rank, eps=args.eps, power=power)
    except ContractError as exc:
        raise FlagError(str(exc)) from None


def _trace_json(trace, extra=None):
    d = {"schema_version": SCHEMA_VERSION, **trace.to_dict(timing=False)}
    if extra:
        d.update(extra)
    return d


def _timings(trace, total):
    return {"total_seconds": total, "iteration_seconds": [r.seconds for r in trace.records]}


def _load_ratings(args):
    tf = TripletFile(args.input, delimiter=args.delimiter, index_base=args.index_base)
    return load_triplets(tf)


def _split(obs, args):
    if args.split is None:
        return obs, None
    try:
        return split_train_test(obs, args.split, args.seed)
    except ContractError as exc:
        raise FlagError(str(exc)) from None


def _fit_ratings(name, train, args):
    mu = float(train.values.mean()) if args.center else 0.0
    fit_obs = train.with_values(train.values - mu) if args.center else train
    t0 = time.perf_counter()
    model, trace = solve(name, fit_obs, _solver_config(args, args.rank))
    elapsed = time.perf_counter() - t0
    model = FactorModel(model.n_rows, model.n_cols, model.U, model.V, model.weights, mu)
    return model, trace, elapsed


def _score(model, train, test):
    pred = predict(model, np.column_stack([test.rows, test.cols]))
    lo, hi = float(train.values.min()), float(train.values.max())
    return rmse(pred, test.values), rmse(np.clip(pred, lo, hi), test.values)


def cmd_complete(args) -> int:
    obs = _load_ratings(args)
    train, test = _split(obs, args)
    model, trace, elapsed = _fit_ratings(args.solver, train, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.txt")
    _dump(_trace_json(trace), out / "trace.json")
    report = EvalReport.from_trace(trace)
    report.extra.update(solver=args.solver, rank=model.rank, center=args.center, clip=args.clip,
                        train_size=train.nnz, final_residual=float(trace.residual_norms[-1]))
    if test is not None:
        raw, clipped = _score(model, train, test)
        report.rmse = clipped if args.clip else raw
        report.extra.update(rmse_unclipped=raw, rmse_clipped=clipped, test_size=test.nnz)
    _dump({"schema_version": SCHEMA_VERSION, **report.to_dict()}, out / "report.json")
    _write_manifest(out, args, {str(args.input): _sha256(args.input)}, _timings(trace, elapsed))
    if report.rmse is not None:
        print(f"{args.solver}: rank {model.rank}, test RMSE {report.rmse:.4f}, {elapsed:.3f}s")
    else:
        print(f"{args.solver}: rank {model.rank}, residual {trace.residual_norms[-1]:.6g}, {elapsed:.3f}s")
    return EXIT_OK


def cmd_image(args) -> int:
    image = load_pgm(args.image)
    try:
        obs = sample_mask(image, args.keep, args.seed)
    except ContractError as exc:
        raise FlagError(str(exc)) from None
    iters = args.iters if args.iters is not None else args.rank
    t0 = time.perf_counter()
    model, trace = solve(args.solver, obs, _solver_config(args, iters))
    elapsed = time.perf_counter() - t0
    recon = np.clip(model.dense(), 0.0, image.max_value)
    recovered = to_gray_image(recon, image.max_value)
    # scored on the written 8-bit image; the unrounded value is kept alongside
    quality = psnr(recovered, image, peak=image.max_value)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pgm(recovered, out / "recovered.pgm")
    save_model(model, out / "model.txt")
    _dump(_trace_json(trace), out / "trace.json")
    report = EvalReport.from_trace(trace, psnr=quality)
    report.extra.update(solver=args.solver, iterations=len(trace), keep=args.keep,
                        observed=obs.nnz, psnr_unrounded=psnr(recon, image, peak=image.max_value))
    _dump({"schema_version": SCHEMA_VERSION, **report.to_dict()}, out / "report.json")
    _write_manifest(out, args, {str(args.image): _sha256(args.image)}, _timings(trace, elapsed))
    print(f"{args.solver}: {len(trace)} iterations, PSNR {quality:.4f} dB, {elapsed:.2f}s")
    return EXIT_OK


def cmd_sense(args) -> int:
    n, m = args.dims
    if min(n, m, args.rank_true, args.measurements) < 1:
        raise FlagError("dimensions, rank and measurement count must be positive")
    rng = np.random.default_rng(args.seed)
    Y = rng.standard_normal((n, args.rank_true)) @ rng.standard_normal((args.rank_true, m))
    op = gaussian_operator(n, m, args.measurements, rng)
    b = apply(op, Y)
    y_norm = float(np.linalg.norm(Y))
    curve = []

    def record(state):
        err = float(np.linalg.norm(state.model().dense() - Y)) / y_norm
        curve.append({"k": state.k, "recovery_error": err,
                      "residual": float(np.linalg.norm(state.residual))})

    t0 = time.perf_counter()
    model, trace = r1mp4ms(op, b, _solver_config(args, args.rank), callback=record)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.save_operator:
        save_operator(op, out / "operator.txt")
    save_model(model, out / "model.txt")
    _dump(_trace_json(trace), out / "trace.json")
    _dump({"schema_version": SCHEMA_VERSION, "dims": [n, m], "rank_true": args.rank_true,
           "measurements": args.measurements, "curve": curve}, out / "curve.json")
    _write_manifest(out, args, {}, _timings(trace, elapsed))
    final = curve[-1]["recovery_error"] if curve else 1.0
    print(f"r1mp4ms: {len(trace)} iterations, relative recovery error {final:.3e}")
    return EXIT_OK


def cmd_bench(args) -> int:
    names = [s.strip() for s in args.solvers.split(",") if s.strip()]
    unknown = [s for s in names if s not in SOLVERS]
    if not names or unknown:
        raise FlagError(f"unknown solvers {unknown}; choose from {sorted(SOLVERS)}")
    obs = _load_ratings(args)
    train, test = _split(obs, args)
    rows, timings = [], {}
    for name in names:
        best = None
        for _ in range(args.repeats):
            model, trace, elapsed = _fit_ratings(name, train, args)
            best = elapsed if best is None else min(best, elapsed)
        row = {"solver": name, "seconds": best, "rank": model.rank,
               "final_residual": float(trace.residual_norms[-1]),
               "diagnostic": trace.diagnostics.tolist(),
               "first_factor_u": model.U[:, 0].tolist() if model.rank else []}
        if test is not None:
            row["rmse"], row["rmse_clipped"] = _score(model, train, test)
        rows.append(row)
        timings[name] = best
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    numeric = [{k: v for k, v in r.items() if k not in ("seconds", "first_factor_u")} for r in rows]
    _dump({"schema_version": SCHEMA_VERSION, "rank": args.rank, "results": numeric}, out / "bench.json")
    header = f"{'solver':<8} {'seconds':>9} {'rmse':>8} {'clipped':>8} {'residual':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['solver']:<8} {r['seconds']:>9.4f} {r.get('rmse', float('nan')):>8.4f} "
                     f"{r.get('rmse_clipped', float('nan')):>8.4f} {r['final_residual']:>12.6g}")
    table = "\n".join(lines)
    (out / "bench.txt").write_text(table + "\n")
    _write_manifest(out, args, {str(args.input): _sha256(args.input)}, {"best_seconds": timings})
    print(table)
    return EXIT_OK


def _add_power(p):
    p.add_argument("--power-iters", type=int, default=30, help="power-method sweep cap (default 30)")
    p.add_argument("--power-tol", type=float, default=1e-8, help="relative sigma change to stop (default 1e-8)")
    p.add_argument("--eps", type=float, default=0.0, help="stop once |R| <= eps |Y| (default off)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="artifact directory")


def _add_ratings(p):
    p.add_argument("--input", required=True, help="triplet file 'row col value [...]'")
    p.add_argument("--index-base", type=int, choices=(0, 1), default=1)
    p.add_argument("--delimiter", default=None, help="field separator (default: whitespace)")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--split", type=float, default=None, help="training fraction, e.g. 0.5")
    p.add_argument("--center", action="store_true", help="subtract the training mean before solving")
    p.add_argument("--clip", action="store_true", help="clip predictions to the training value range")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="r1mp", description="Rank-one matrix pursuit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="complete a ratings matrix")
    _add_ratings(p)
    p.add_argument("--solver", choices=sorted(SOLVERS), default="or1mp")
    _add_power(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("image", help="recover a grayscale image from a random pixel subset")
    p.add_argument("--image", required=True, help="PGM file (P2 or P5)")
    p.add_argument("--keep", type=float, default=0.5, help="fraction of pixels observed")
    p.add_argument("--rank", type=int, default=50, help="pursuit iterations when --iters is absent")
    p.add_argument("--iters", type=int, default=None, help="pursuit iterations (overrides --rank)")
    p.add_argument("--solver", choices=sorted(SOLVERS), default="or1mp")
    _add_power(p)
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("sense", help="matrix sensing on a random Gaussian operator")
    p.add_argument("--dims", type=int, nargs=2, metavar=("N", "M"), required=True)
    p.add_argument("--rank-true", type=int, required=True)
    p.add_argument("--measurements", type=int, required=True)
    p.add_argument("--rank", type=int, required=True, help="pursuit iterations")
    p.add_argument("--save-operator", action="store_true")
    _add_power(p)
    p.set_defaults(func=cmd_sense)

    p = sub.add_parser("bench", help="compare solvers on one ratings file")
    _add_ratings(p)
    p.add_argument("--solvers", default="or1mp,eor1mp,fr1mp")
    p.add_argument("--repeats", type=int, default=3, help="timing repeats; best is kept")
    _add_power(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else None
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FlagError as exc:
        parser.error(str(exc))  # exits with status 2
    except (DataError, OSError) as exc:
        print(f"r1mp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CapacityError, ContractError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"r1mp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
