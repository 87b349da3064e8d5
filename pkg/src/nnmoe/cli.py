"""Command-line interface: ``nnmoe {fit,predict,cluster,select,simulate}``.

Exit codes: 0 success, 1 I/O failure, 2 invalid input or usage,
3 fit stopped at the iteration cap, 4 every start degenerated.
The default seed comes from ``NNMOE_SEED`` (0 if unset); ``--seed`` wins.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import criteria, map_cluster, predict_arrays, select_K
from .distributions import Family
from .io import InputError, fmt, read_model_file, read_x_csv, read_xy_csv, write_csv, write_model_file
from .moe import (Dataset, DegenerateFitError, FitOptions, InsufficientDataError, MoESpec, e_step,
                  fit, log_likelihood)
from .simulation import ScenarioConfig, benchmark_params, generate

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_MAXITER, EXIT_DEGENERATE = 0, 1, 2, 3, 4


class UsageError(ValueError):
    pass


def _positive_int(name):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return v
    return parse


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _finite_float(text):
    v = float(text)
    if not np.isfinite(v):
        raise argparse.ArgumentTypeError("must be finite")
    return v


def _default_seed() -> int:
    raw = os.environ.get("NNMOE_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"NNMOE_SEED must be an integer, got '{raw}'") from None


def _family(text):
    try:
        return Family.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown family '{text}' (choose from {', '.join(f.value for f in Family)})") from None


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p", type=_nonneg_int, default=1, help="expert polynomial order")
    p.add_argument("--q", type=_nonneg_int, default=1, help="gate polynomial order")
    p.add_argument("--starts", type=_positive_int("--starts"), default=10)
    p.add_argument("--tol", type=_finite_float, default=1e-6)
    p.add_argument("--max-iter", type=_positive_int("--max-iter"), default=1500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--kent", action="store_true", help="t experts: divide the scale update by sum tau*w")
    p.add_argument("--strict-iterates", action="store_true",
                   help="skew experts: refresh the scale after the skewness step")
    p.add_argument("--scale-update", choices=("standardized", "printed"), default="standardized")
    p.add_argument("--no-ecm", action="store_true", help="t experts: skip the extra E-step before the nu step")


def _fit_options(args) -> FitOptions:
    return FitOptions(
        n_starts=args.starts, tol=args.tol, max_iter=args.max_iter, seed=args.seed,
        ecm=not args.no_ecm, kent_divisor=args.kent, strict_iterates=args.strict_iterates,
        scale_update=args.scale_update,
    )


def _options_manifest(args) -> dict:
    return {
        "starts": args.starts, "tol": args.tol, "max_iter": args.max_iter, "seed": args.seed,
        "ecm": not args.no_ecm, "kent_divisor": args.kent, "strict_iterates": args.strict_iterates,
        "scale_update": args.scale_update,
    }


def _stamp(manifest: dict, args) -> dict:
    if getattr(args, "timestamp", False):
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        when = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch else \
            _dt.datetime.now(_dt.timezone.utc)
        manifest["created"] = when.strftime("%Y-%m-%dT%H:%M:%SZ")
    return manifest


def _load_data(path, p: int, q: int) -> Dataset:
    x, y = read_xy_csv(path)
    return Dataset(x, y, p, q)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_fit(args) -> int:
    if args.K < 1:
        raise UsageError("--K must be >= 1")
    spec = MoESpec(args.family, args.K, args.p, args.q)
    data = _load_data(args.input, spec.p, spec.q)
    res = fit(spec, data, _fit_options(args))
    row = criteria(res, spec, data)
    summary = {
        "loglik": res.loglik, "eta": row.eta, "bic": row.bic, "aic": row.aic, "icl": row.icl,
        "n": data.n, "n_iters": res.n_iters, "converged": res.converged, "best_start": res.start_index,
    }
    manifest = {"command": "fit", "input": str(args.input), "output": str(args.out)}
    manifest.update(_options_manifest(args))
    write_model_file(args.out, spec, res.params, summary, _stamp(manifest, args))
    labels = map_cluster(res.tau)
    if args.tau:
        write_csv(args.tau, ["i"] + [f"tau_{k + 1}" for k in range(spec.K)] + ["label"],
                  ([i + 1, *res.tau[i], int(labels[i])] for i in range(data.n)))
    if args.trace:
        write_csv(args.trace, ["iter", "loglik"], ([i, v] for i, v in enumerate(res.loglik_trace)))
    print(f"loglik = {fmt(res.loglik)}  iterations = {res.n_iters}  converged = {fmt(res.converged)}")
    return EXIT_OK if res.converged else EXIT_MAXITER


def _grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(",")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise UsageError("--grid expects LO,HI,N") from None
    if not (np.isfinite(lo) and np.isfinite(hi)) or n < 1:
        raise UsageError("--grid expects finite LO,HI and N >= 1")
    return np.linspace(lo, hi, n)


def cmd_predict(args) -> int:
    mf = read_model_file(args.model)
    spec, params = mf.spec, mf.params
    y = None
    if args.input:
        x, y = read_x_csv(args.input)
    elif args.grid:
        x = _grid(args.grid)
    else:
        raise UsageError("predict needs --input or --grid")
    pr = predict_arrays(params, spec, x)
    K = spec.K
    header = ["x", "mean", "var", "lo", "hi"] + [f"pi_{k + 1}" for k in range(K)] + \
        [f"mu_{k + 1}" for k in range(K)]
    rows = []
    for i in range(x.size):
        mean = pr.mean[i] if pr.mean_defined[i] else None
        if pr.variance_defined[i]:
            var = pr.variance[i]
            sd = np.sqrt(var)
            lo, hi = mean - 2 * sd, mean + 2 * sd
        else:
            var = lo = hi = None
        rows.append([x[i], mean, var, lo, hi, *pr.gate_probs[i], *pr.component_means[i]])
    write_csv(args.out, header, rows)
    if y is not None:
        data = Dataset(x, y, spec.p, spec.q)
        print(f"loglik = {fmt(log_likelihood(params, spec, data))}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    mf = read_model_file(args.model)
    spec, params = mf.spec, mf.params
    data = _load_data(args.input, spec.p, spec.q)
    labels = map_cluster(e_step(params, spec, data).tau)
    write_csv(args.out, ["i", "x", "y", "label"],
              ([i + 1, data.x[i], data.y[i], int(labels[i])] for i in range(data.n)))
    return EXIT_OK


def cmd_select(args) -> int:
    if args.Kmin < 1 or args.Kmax < args.Kmin:
        raise UsageError("need 1 <= --Kmin <= --Kmax")
    data = _load_data(args.input, args.p, args.q)
    table = select_K(args.family, data, range(args.Kmin, args.Kmax + 1), _fit_options(args), args.p, args.q)
    write_csv(args.out, ["K", "loglik", "eta", "bic", "aic", "icl"],
              ([r.K, r.loglik, r.eta, r.bic, r.aic, r.icl] for r in table.rows))
    best = table.best_k
    lines = [f"best_{c} = {'' if k is None else k}" for c, k in best.items()]
    lines += [f"failed_K{k} = {msg}" for k, msg in table.errors.items()]
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not table.rows:
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if not 0.0 <= args.c <= 1.0:
        raise UsageError("--c must lie in [0, 1]")
    if args.params:
        mf = read_model_file(args.params)
        family, truth = mf.spec.family, mf.params
    else:
        family = args.family
        truth = benchmark_params(family)
    cfg = ScenarioConfig(family, truth, args.n, outlier_rate=args.c, outlier_y=args.outlier_y, seed=args.seed)
    data, labels = generate(cfg)
    write_csv(args.out, ["x", "y"], zip(data.x, data.y))
    if args.labels:
        write_csv(args.labels, ["i", "label"], ((i + 1, int(l)) for i, l in enumerate(labels)))
    manifest_path = args.manifest or f"{args.out}.manifest"
    manifest = {"command": "simulate", "family": Family.parse(family).value, "n": args.n, "c": args.c,
                "outlier_y": args.outlier_y, "seed": args.seed,
                "params": str(args.params) if args.params else "benchmark",
                "output": str(args.out), "labels": str(args.labels or "")}
    _stamp(manifest, args)
    with open(manifest_path, "w") as fh:
        fh.write("".join(f"{k} = {v if isinstance(v, str) else fmt(v)}\n" for k, v in manifest.items()))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnmoe", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a mixture of experts to an x,y CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--family", type=_family, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--tau", help="responsibilities CSV")
    p.add_argument("--trace", help="log-likelihood trace CSV")
    p.add_argument("--timestamp", action="store_true", help="record a creation time in the manifest")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="mixture mean, variance and +/- 2 sd band")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="CSV with an x column (and optionally y)")
    src.add_argument("--grid", help="LO,HI,N evenly spaced x values (write --grid=-1,1,50 when LO is negative)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cluster", help="MAP labels for an x,y CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("select", help="information criteria over a range of K")
    p.add_argument("--input", required=True)
    p.add_argument("--family", type=_family, required=True)
    p.add_argument("--Kmin", type=int, default=1)
    p.add_argument("--Kmax", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="key = value file with the best K per criterion")
    _add_fit_options(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="draw a dataset from a model")
    p.add_argument("--family", type=_family, default=Family.NORMAL)
    p.add_argument("--params", help="model file giving the generating parameters")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--c", type=_finite_float, default=0.0, help="outlier probability")
    p.add_argument("--outlier-y", type=_finite_float, default=-2.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="true-label CSV (0 marks an outlier)")
    p.add_argument("--manifest", help="manifest path (default OUT.manifest)")
    p.add_argument("--timestamp", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        if getattr(args, "seed", "absent") is None:
            args.seed = _default_seed()
        return args.func(args)
    except (UsageError, InputError, InsufficientDataError) as exc:
        print(f"nnmoe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateFitError as exc:
        print(f"nnmoe: degenerate fit: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"nnmoe: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"nnmoe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
