"""Command-line interface: fit, predict, sparsify, simulate, bench.

Results go to files (stdout only under --stdout-csv); progress and warnings
go to stderr. Every run writes a run.manifest echoing the fully resolved
configuration and library versions. Exit codes: 1 usage, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np
import scipy

from . import __version__
from .data import (
    MultiSourceDataset,
    ShrinkageVector,
    apply_column_stats,
    drop_constant_columns,
    load_dataset,
    load_dataset_dir,
    save_dataset,
    standardize,
)
from .errors import DataError, NumericalError
from .fit import (
    load_fit,
    posterior_mode,
    posterior_variances,
    predict,
    save_fit,
)
from .gram import GramCache, assemble_g, core_solve
from .matrixio import format_float, load_matrix, read_kv, write_csv_matrix, write_kv
from .simulate import (
    generate_scenario,
    metric_auc,
    metric_correlation,
    restrict_truth,
    save_truth,
    scenario_config,
    standardize_split,
)
from .sparsify import (
    CONTROLS,
    C_VARIANTS,
    adaptive_penalties,
    build_relaxed_context,
    build_svd_context,
    control_factor,
    pcr_penalty,
    save_sparse,
    solve_general,
    solve_relaxed,
)
from .tuning import TuneConfig, bound_hits, tune


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract reserves 2 for data errors
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


BENCH_CSV_HEADER = [
    "scenario", "correlation", "seed", "n_train", "p_total", "method",
    "estimator", "test_correlation", "auc", "sparsity_fraction",
    "nonzero_count", "runtime_seconds",
    "lambda_cl", "lambda_rna", "lambda_snp", "lambda_single",
]

_DEFAULTS = {
    "fit": {
        "estimator": "map", "restarts": 5, "tolerance": 1e-6, "max_evals": 2000,
        "log_lambda_bounds": "-12,12", "workers": 1, "seed": 0,
        "block_cols": 4096, "block_size": 0, "variances": True,
        "drop_constant": False, "out": "fit.sbrf",
    },
    "predict": {"out": "predictions.csv", "stdout_csv": False},
    "sparsify": {
        "method": "relaxed", "control": "none", "c_variant": "integrated",
        "out": "sparse.sbrs",
    },
    "simulate": {
        "scenario": "sparse", "correlation": "low", "scale": 1.0, "seed": 0,
        "n_train": 100, "n_test": 5000, "p_rna": 0, "p_snp": 0,
        "workers": 1, "out": "simdata", "raw": False,
    },
    "bench": {
        "scenarios": "sparse,medium,dense", "correlations": "low",
        "seeds": 10, "seed": 0, "scale": 1.0, "n_train": 100, "n_test": 1000,
        "p_rna": 0, "p_snp": 0, "estimator": "map", "workers": 1,
        "max_evals": 2000, "restarts": 5, "out": "bench", "stdout_csv": False,
    },
}


def build_parser() -> _Parser:
    parser = _Parser(prog="sourceridge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"sourceridge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value file; flags override it")

    p_fit = sub.add_parser("fit", help="tune shrinkage levels and fit the posterior")
    add_common(p_fit)
    p_fit.add_argument("--data", help="dataset directory (written by simulate)")
    p_fit.add_argument("--response", help="response vector file (CSV or SBRM)")
    p_fit.add_argument("--source", action="append", metavar="NAME=PATH",
                       help="named covariate block, repeatable")
    p_fit.add_argument("--estimator", choices=["cv", "ml", "map"])
    p_fit.add_argument("--lambda", dest="lambda_values",
                       help="comma-separated shrinkage levels; bypasses tuning")
    p_fit.add_argument("--log-lambda-bounds", dest="log_lambda_bounds",
                       help="lower,upper bounds in natural log (default -12,12)")
    p_fit.add_argument("--restarts", type=int)
    p_fit.add_argument("--tolerance", type=float)
    p_fit.add_argument("--max-evals", dest="max_evals", type=int)
    p_fit.add_argument("--trace", help="write the (lambda, objective) trace as CSV")
    p_fit.add_argument("--drop-constant", dest="drop_constant",
                       action="store_const", const=True,
                       help="drop zero-variance columns instead of erroring")
    p_fit.add_argument("--no-variances", dest="variances", action="store_const",
                       const=False, help="skip the posterior variance diagonal")
    p_fit.add_argument("--gram-cache", dest="gram_cache",
                       help="directory for persisted Gram matrices")
    p_fit.add_argument("--block-cols", dest="block_cols", type=int)
    p_fit.add_argument("--block-size", dest="block_size", type=int,
                       help="variance block size (0 = automatic)")
    p_fit.add_argument("--workers", type=int)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--out")

    p_pred = sub.add_parser("predict", help="predict new responses from a fit")
    add_common(p_pred)
    p_pred.add_argument("--fit", required=True)
    p_pred.add_argument("--data", help="dataset directory with prediction blocks")
    p_pred.add_argument("--source", action="append", metavar="NAME=PATH")
    p_pred.add_argument("--out")
    p_pred.add_argument("--stdout-csv", dest="stdout_csv", action="store_const",
                        const=True, help="write the CSV to stdout instead of a file")

    p_sp = sub.add_parser("sparsify", help="sparsify a fitted posterior")
    add_common(p_sp)
    p_sp.add_argument("--fit", required=True)
    p_sp.add_argument("--data", help="training dataset directory (general method)")
    p_sp.add_argument("--method", choices=["general", "relaxed"])
    p_sp.add_argument("--control", choices=list(CONTROLS))
    p_sp.add_argument("--c-variant", dest="c_variant", choices=list(C_VARIANTS))
    p_sp.add_argument("--alpha", type=float, help="manual scalar penalty")
    p_sp.add_argument("--pcr-xi", dest="pcr_xi", type=float,
                      help="credible-region penalty mapped onto the general solver")
    p_sp.add_argument("--out")

    p_sim = sub.add_parser("simulate", help="generate a synthetic scenario")
    add_common(p_sim)
    p_sim.add_argument("--scenario", choices=["sparse", "medium", "dense"])
    p_sim.add_argument("--correlation", choices=["low", "high"])
    p_sim.add_argument("--scale", type=float, help="dimension scale factor")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--n-train", dest="n_train", type=int)
    p_sim.add_argument("--n-test", dest="n_test", type=int)
    p_sim.add_argument("--p-rna", dest="p_rna", type=int, help="override expression dim")
    p_sim.add_argument("--p-snp", dest="p_snp", type=int, help="override genotype dim")
    p_sim.add_argument("--cl-cov", dest="cl_cov", help="SBRM covariance for the clinical source")
    p_sim.add_argument("--rna-cov", dest="rna_cov", help="SBRM covariance for the expression source")
    p_sim.add_argument("--raw", action="store_const", const=True,
                       help="write unstandardized data (default standardizes the "
                            "train+test matrix jointly and drops constant columns)")
    p_sim.add_argument("--workers", type=int)
    p_sim.add_argument("--out")

    p_bench = sub.add_parser("bench", help="run fit+sparsify over scenario grids")
    add_common(p_bench)
    p_bench.add_argument("--scenarios", help="comma list from sparse,medium,dense")
    p_bench.add_argument("--correlations", help="comma list from low,high")
    p_bench.add_argument("--seeds", type=int, help="number of replicate seeds")
    p_bench.add_argument("--seed", type=int, help="base seed")
    p_bench.add_argument("--scale", type=float)
    p_bench.add_argument("--n-train", dest="n_train", type=int)
    p_bench.add_argument("--n-test", dest="n_test", type=int)
    p_bench.add_argument("--p-rna", dest="p_rna", type=int)
    p_bench.add_argument("--p-snp", dest="p_snp", type=int)
    p_bench.add_argument("--estimator", choices=["cv", "ml", "map"])
    p_bench.add_argument("--max-evals", dest="max_evals", type=int)
    p_bench.add_argument("--restarts", type=int)
    p_bench.add_argument("--workers", type=int)
    p_bench.add_argument("--out")
    p_bench.add_argument("--stdout-csv", dest="stdout_csv", action="store_const", const=True)

    return parser


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def resolve_options(args: argparse.Namespace) -> dict:
    """flags > config file > defaults, echoed verbatim into the manifest."""
    defaults = dict(_DEFAULTS[args.command])
    config = {}
    if getattr(args, "config", None):
        config = read_kv(args.config)
    out = {}
    for key, default in defaults.items():
        val = getattr(args, key, None)
        if val is None and key in config:
            val = _coerce(config[key], default)
        if val is None:
            val = default
        out[key] = val
    # passthrough options that have no typed default
    for key in ("data", "response", "source", "fit", "trace", "gram_cache",
                "lambda_values", "alpha", "pcr_xi", "cl_cov", "rna_cov"):
        if hasattr(args, key):
            val = getattr(args, key)
            if val is None and key in config:
                val = config[key]
            out[key] = val
    return out


def write_manifest(path, command: str, options: dict, extra: dict | None = None) -> None:
    entries = {
        "command": command,
        "sourceridge_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": sys.version.split()[0],
    }
    for key in sorted(options):
        val = options[key]
        if val is None:
            continue
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        entries[f"option_{key}"] = val
    if extra:
        entries.update(extra)
    write_kv(path, entries)


def _load_input_dataset(opts) -> MultiSourceDataset:
    if opts.get("data"):
        return load_dataset_dir(opts["data"])
    if not opts.get("response") or not opts.get("source"):
        raise UsageError("provide --data DIR, or --response plus at least one --source")
    pairs = []
    for item in opts["source"]:
        if "=" not in item:
            raise UsageError(f"--source expects NAME=PATH, got '{item}'")
        name, path = item.split("=", 1)
        pairs.append((name, path))
    return load_dataset(pairs, opts["response"])


def _load_blocks(opts):
    """Prediction inputs: named blocks plus standardized flag, no response."""
    if opts.get("data"):
        ds = load_dataset_dir(opts["data"])
        already = all(ds.standardized)
        return list(ds.names), list(ds.blocks), already
    if not opts.get("source"):
        raise UsageError("provide --data DIR or --source NAME=PATH entries")
    names, blocks = [], []
    for item in opts["source"]:
        if "=" not in item:
            raise UsageError(f"--source expects NAME=PATH, got '{item}'")
        name, path = item.split("=", 1)
        mat, _ = load_matrix(path)
        names.append(name)
        blocks.append(mat)
    return names, blocks, False


def _parse_bounds(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(tok) for tok in text.split(","))
    except ValueError:
        raise UsageError(f"expected 'lower,upper', got '{text}'") from None
    return lo, hi


def _dump_trace(path, trace, names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"lambda_{n}" for n in names] + ["objective"])
        for lam_vals, obj in trace:
            writer.writerow([format_float(v) for v in lam_vals] + [format_float(obj)])


# ---------------------------------------------------------------------------
# subcommands

def cmd_fit(opts) -> int:
    ds = _load_input_dataset(opts)
    if all(ds.standardized) and ds.y_standardized:
        _log("fit: input is already standardized; reusing its scale")
    else:
        if opts["drop_constant"]:
            ds, _, dropped = drop_constant_columns(ds)
            if dropped:
                _log(f"fit: dropped {dropped} constant column(s)")
        ds = standardize(ds)
        if opts.get("estimator") in (None, "cv", "map") and not opts.get("lambda_values") \
                and ds.total_p >= ds.n - 1:
            _log(
                "fit: warning: leave-one-out tuning degenerates on exactly "
                "column-centered data when p >= n-1; prefer --estimator ml, or "
                "standardize train and test jointly as `simulate` does"
            )
    _log(f"fit: n={ds.n} K={ds.k} p={ds.total_p} sources={','.join(ds.names)}")

    cache = GramCache.from_dataset(
        ds, block_cols=opts["block_cols"], workers=opts["workers"],
        cache_dir=opts.get("gram_cache"),
    )

    bounds = _parse_bounds(opts["log_lambda_bounds"])
    tune_info = {}
    if opts.get("lambda_values"):
        vals = np.array([float(v) for v in opts["lambda_values"].split(",")])
        if vals.size != ds.k:
            raise UsageError(f"--lambda needs {ds.k} values, got {vals.size}")
        lam = ShrinkageVector(vals, estimator="user")
        estimator = "user"
    else:
        estimator = opts["estimator"]
        cfg = TuneConfig(
            estimator=estimator,
            log_lambda_bounds=bounds,
            restarts=opts["restarts"],
            tolerance=opts["tolerance"],
            max_evals=opts["max_evals"],
            seed=opts["seed"],
            keep_trace=bool(opts.get("trace")),
            workers=opts["workers"],
        )
        result = tune(cache, ds.y, cfg)
        lam = result.lambda_hat
        tune_info = {
            "lambda_hat": lam.values,
            "objective_value": result.objective_value,
            "evals_used": result.evals_used,
            "converged": int(result.converged),
        }
        if result.cv_reference is not None:
            tune_info["lambda_cv_reference"] = result.cv_reference.values
        if opts.get("trace"):
            _dump_trace(opts["trace"], result.trace, ds.names)
        for idx in bound_hits(result, cfg):
            _log(
                f"fit: warning: source '{ds.names[idx]}' hit the shrinkage upper "
                f"bound e^{bounds[1]:g}; raise --log-lambda-bounds to explore further"
            )
        _log(
            "fit: lambda_hat = ["
            + ", ".join(format_float(v) for v in lam.values)
            + f"] ({estimator}, {result.evals_used} evaluations)"
        )

    core = core_solve(assemble_g(cache, lam), ds.y)
    fit = posterior_mode(cache, ds, lam, core=core)
    if opts["variances"]:
        block_size = opts["block_size"] or None
        fit = fit.with_variances(
            posterior_variances(cache, ds, lam, block_size=block_size,
                                workers=opts["workers"], core=core)
        )
    save_fit(fit, opts["out"], estimator=estimator)
    _log(f"fit: wrote {opts['out']}")

    manifest_path = os.path.join(os.path.dirname(os.path.abspath(opts["out"])), "run.manifest")
    write_manifest(manifest_path, "fit", opts, tune_info)
    return 0


def cmd_predict(opts) -> int:
    fit = load_fit(opts["fit"])
    names, blocks, already_standardized = _load_blocks(opts)
    if tuple(names) != fit.source_names:
        raise DataError(
            f"source names {tuple(names)} do not match the fit's {fit.source_names}"
        )
    yhat = predict(
        fit, blocks, assume_standardized=already_standardized, original_scale=True
    )
    if opts.get("stdout_csv"):
        sys.stdout.write("prediction\n")
        for v in yhat:
            sys.stdout.write(format_float(v) + "\n")
    else:
        write_csv_matrix(opts["out"], yhat.reshape(-1, 1), names=["prediction"])
        _log(f"predict: wrote {len(yhat)} predictions to {opts['out']}")
        manifest_path = os.path.join(os.path.dirname(os.path.abspath(opts["out"])), "run.manifest")
        write_manifest(manifest_path, "predict", opts, {"m": len(yhat)})
    return 0


def cmd_sparsify(opts) -> int:
    if opts.get("alpha") is not None and opts.get("pcr_xi") is not None:
        raise UsageError("--alpha and --pcr-xi are mutually exclusive")
    if opts.get("pcr_xi") is not None and opts["method"] != "general":
        raise UsageError("--pcr-xi applies to the general solver only")
    fit = load_fit(opts["fit"])
    f_n = control_factor(opts["control"], fit.n)

    if opts["method"] == "relaxed":
        ctx = build_relaxed_context(fit, variant=opts["c_variant"])
        alpha = opts["alpha"] if opts.get("alpha") is not None else adaptive_penalties(fit)
        sol = solve_relaxed(ctx, alpha, f_n=f_n)
    else:
        if not opts.get("data"):
            raise UsageError("the general method needs --data (training dataset)")
        raw = load_dataset_dir(opts["data"])
        if raw.source_dims != fit.source_dims:
            raise DataError(
                f"dataset dims {raw.source_dims} do not match fit dims {fit.source_dims}"
            )
        if all(raw.standardized) and raw.y_standardized:
            ds = raw
        else:
            if fit.column_stats is None:
                raise DataError("fit carries no column statistics")
            blocks = apply_column_stats(fit.column_stats, raw.blocks)
            y = (raw.y - fit.column_stats.y_mean) / fit.column_stats.y_sd
            ds = MultiSourceDataset(
                y=y, names=raw.names, blocks=tuple(blocks),
                standardized=(True,) * raw.k, y_standardized=True, stats=fit.column_stats,
            )
        cache = GramCache.from_dataset(ds)
        ctx = build_svd_context(cache, ds, fit.lam, fit, variant=opts["c_variant"])
        if opts.get("pcr_xi") is not None:
            alpha = pcr_penalty(opts["pcr_xi"], fit, ctx)
        elif opts.get("alpha") is not None:
            alpha = opts["alpha"]
        else:
            alpha = adaptive_penalties(fit)
        sol = solve_general(ctx, np.asarray(alpha) * f_n)
        if not sol.converged:
            _log("sparsify: warning: coordinate descent hit the sweep limit")

    save_sparse(sol, opts["out"], lam=fit.lam)
    _log(
        f"sparsify: method={sol.method} f_n={format_float(sol.f_n)} "
        f"nonzero={sol.nonzero_count}/{sol.gamma_hat.size} "
        f"sparsity={100.0 * sol.sparsity:.4g}% converged={str(sol.converged).lower()}"
    )
    manifest_path = os.path.join(os.path.dirname(os.path.abspath(opts["out"])), "run.manifest")
    write_manifest(manifest_path, "sparsify", opts, {
        "nonzero_count": sol.nonzero_count, "sparsity": sol.sparsity,
    })
    return 0


def cmd_simulate(opts) -> int:
    overrides = {"n_train": opts["n_train"], "n_test": opts["n_test"], "seed": opts["seed"]}
    if opts["p_rna"]:
        overrides["p_rna"] = opts["p_rna"]
    if opts["p_snp"]:
        overrides["p_snp"] = opts["p_snp"]
    if opts.get("cl_cov"):
        overrides["cl_cov_path"] = opts["cl_cov"]
    if opts.get("rna_cov"):
        overrides["rna_cov_path"] = opts["rna_cov"]
    cfg = scenario_config(opts["scenario"], opts["correlation"], opts["scale"], **overrides)
    _log(
        f"simulate: scenario={opts['scenario']} correlation={opts['correlation']} "
        f"p=({cfg.p_cl},{cfg.p_rna},{cfg.p_snp}) n=({cfg.n_train},{cfg.n_test}) seed={cfg.seed}"
    )
    train, test, truth = generate_scenario(cfg, workers=opts["workers"])
    dropped = 0
    if not opts["raw"]:
        train, test, kept, dropped = standardize_split(train, test)
        truth = restrict_truth(truth, kept)
        if dropped:
            _log(f"simulate: dropped {dropped} constant column(s) before standardizing")
    outdir = opts["out"]
    save_dataset(train, os.path.join(outdir, "train"))
    save_dataset(test, os.path.join(outdir, "test"))
    save_truth(truth, os.path.join(outdir, "truth.sbrt"))
    write_manifest(os.path.join(outdir, "run.manifest"), "simulate", opts, {
        "p_total": sum(truth.source_dims), "snp_blocks": cfg.snp_blocks,
        "dropped_constant_columns": dropped,
    })
    _log(f"simulate: wrote train/, test/, truth.sbrt under {outdir}")
    return 0


def _bench_one(scenario, correlation, seed, opts, rows):
    overrides = {"n_train": opts["n_train"], "n_test": opts["n_test"], "seed": seed}
    if opts["p_rna"]:
        overrides["p_rna"] = opts["p_rna"]
    if opts["p_snp"]:
        overrides["p_snp"] = opts["p_snp"]
    cfg = scenario_config(scenario, correlation, opts["scale"], **overrides)
    train, test, truth = generate_scenario(cfg, workers=opts["workers"])
    ds, test_std, kept, dropped = standardize_split(train, test)
    truth = restrict_truth(truth, kept)
    support = truth.support
    if dropped:
        _log(f"bench: {scenario}/{correlation}/seed={seed}: dropped {dropped} constant column(s)")

    cache = GramCache.from_dataset(ds, workers=opts["workers"])
    tcfg = TuneConfig(
        estimator=opts["estimator"], restarts=opts["restarts"],
        max_evals=opts["max_evals"], seed=seed, workers=opts["workers"],
    )
    pred_blocks = list(test_std.blocks)
    test_y = test_std.y

    base = {
        "scenario": scenario, "correlation": correlation, "seed": seed,
        "n_train": cfg.n_train, "p_total": ds.total_p, "estimator": opts["estimator"],
    }

    def row(**kw):
        merged = dict.fromkeys(BENCH_CSV_HEADER, "")
        merged.update(base)
        merged.update(kw)
        rows.append(merged)

    # multi-source fit
    t0 = time.perf_counter()
    result = tune(cache, ds.y, tcfg)
    lam = result.lambda_hat
    core = core_solve(assemble_g(cache, lam), ds.y)
    fit = posterior_mode(cache, ds, lam, core=core)
    fit = fit.with_variances(
        posterior_variances(cache, ds, lam, workers=opts["workers"], core=core)
    )
    sbr_time = time.perf_counter() - t0
    yhat = predict(fit, pred_blocks, assume_standardized=True)
    lam_named = dict(zip(ds.names, lam.values))
    row(method="sbr", test_correlation=metric_correlation(yhat, test_y),
        auc=metric_auc(fit.beta_hat, support), runtime_seconds=sbr_time,
        lambda_cl=lam_named.get("cl", ""), lambda_rna=lam_named.get("rna", ""),
        lambda_snp=lam_named.get("snp", ""))

    # single-level ridge baseline: one merged source
    t0 = time.perf_counter()
    merged_cache = GramCache(
        grams=(sum(cache.grams),), n=cache.n,
        source_dims=(ds.total_p,), names=("all",),
    )
    merged_ds = MultiSourceDataset(
        y=ds.y, names=("all",), blocks=(np.hstack(ds.blocks),),
        standardized=(True,), y_standardized=True,
    )
    ridge_result = tune(merged_cache, ds.y, tcfg)
    ridge_fit = posterior_mode(merged_cache, merged_ds, ridge_result.lambda_hat)
    ridge_time = time.perf_counter() - t0
    ridge_pred = np.hstack(pred_blocks) @ ridge_fit.beta_hat
    row(method="ridge", test_correlation=metric_correlation(ridge_pred, test_y),
        auc=metric_auc(ridge_fit.beta_hat, support), runtime_seconds=ridge_time,
        lambda_single=float(ridge_result.lambda_hat.values[0]))

    # relaxed sparsifiers on the multi-source fit
    ctx = build_relaxed_context(fit)
    alpha = adaptive_penalties(fit)
    for method, control in (("ssbr", "none"), ("cssbr", "logn")):
        t0 = time.perf_counter()
        sol = solve_relaxed(ctx, alpha, f_n=control_factor(control, ds.n))
        sp_time = time.perf_counter() - t0
        sparse_pred = np.zeros(test_std.n)
        offset = 0
        for blk in pred_blocks:
            pk = blk.shape[1]
            sparse_pred += blk @ sol.gamma_hat[offset:offset + pk]
            offset += pk
        corr = metric_correlation(sparse_pred, test_y) if sparse_pred.std() > 0 else 0.0
        row(method=method, test_correlation=corr,
            auc=metric_auc(sol.gamma_hat, support),
            sparsity_fraction=sol.sparsity, nonzero_count=sol.nonzero_count,
            runtime_seconds=sp_time,
            lambda_cl=lam_named.get("cl", ""), lambda_rna=lam_named.get("rna", ""),
            lambda_snp=lam_named.get("snp", ""))


def cmd_bench(opts) -> int:
    from .figures import render_bench_figures

    scenarios = [s.strip() for s in opts["scenarios"].split(",") if s.strip()]
    correlations = [c.strip() for c in opts["correlations"].split(",") if c.strip()]
    rows: list[dict] = []
    for scenario in scenarios:
        for correlation in correlations:
            for i in range(opts["seeds"]):
                seed = opts["seed"] + i
                _log(f"bench: {scenario}/{correlation} seed={seed}")
                _bench_one(scenario, correlation, seed, opts, rows)

    os.makedirs(opts["out"], exist_ok=True)
    csv_path = os.path.join(opts["out"], "results.csv")

    def fmt(row):
        out = {}
        for key in BENCH_CSV_HEADER:
            val = row.get(key, "")
            out[key] = format_float(val) if isinstance(val, float) else val
        return out

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(fmt(row))
    if opts.get("stdout_csv"):
        writer = csv.DictWriter(sys.stdout, fieldnames=BENCH_CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(fmt(row))

    figure_paths = render_bench_figures(rows, opts["out"])
    write_manifest(os.path.join(opts["out"], "run.manifest"), "bench", opts, {
        "rows": len(rows),
        "figures": ",".join(os.path.basename(p) for p in figure_paths),
    })
    _log(f"bench: wrote {csv_path} and {len(figure_paths)} figure(s)")
    return 0


_COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "sparsify": cmd_sparsify,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def _fail(code: int, kind: str, reason: str) -> int:
    flat = " ".join(str(reason).split())
    print(f'error code={code} kind={kind} reason="{flat}"', file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = resolve_options(args)
        return _COMMANDS[args.command](opts)
    except UsageError as exc:
        return _fail(1, "usage", str(exc))
    except ValueError as exc:
        return _fail(1, "usage", str(exc))
    except DataError as exc:
        return _fail(2, "data", str(exc))
    except NumericalError as exc:
        return _fail(3, "numerical", str(exc))
    except OSError as exc:
        return _fail(2, "data", str(exc))


if __name__ == "__main__":
    sys.exit(main())
