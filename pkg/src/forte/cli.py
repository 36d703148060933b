"""Command-line entry point: ``forte {detect,simulate,curse,baseline,convert}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
(failed verification, or estimator non-convergence under ``--strict``).
Errors are written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import baselines, theory
from .models import ConvergenceWarning
from .pipeline import (
    DEFAULT_PARAMS,
    ESTIMATORS,
    PipelineConfig,
    load_config,
    parse_seeds,
    run_forte_sweep_arrays,
)
from .prdc import DensityNormalization, PrdcConfig, RadiusSource
from .store import (
    EmbeddingFormatError,
    load_embeddings,
    save_binary,
    save_csv,
    split_indices,
)

log = logging.getLogger("forte")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _number_or_rule(rules):
    def parse(text):
        if text.lower() in rules:
            return text.lower()
        return _positive_float(text)
    return parse


def _seeds(text):
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _default_threads():
    env = os.environ.get("FORTE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser():
    parser = _Parser(prog="forte", description="PRDC-based out-of-distribution detection")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: $FORTE_THREADS or CPU count)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", help="run the PRDC detector and evaluate AUROC / FPR@95")
    p.add_argument("--config", help="key/value configuration file (sweeps)")
    p.add_argument("--id", action="append", default=[], metavar="PATH",
                   help="ID embeddings of one representation space (repeat per space)")
    p.add_argument("--ood", action="append", default=[], metavar="PATH",
                   help="OOD embeddings of one representation space (repeat per space)")
    p.add_argument("--label", action="append", default=[], help="space label (repeatable)")
    p.add_argument("--k", type=_positive_int, nargs="+")
    p.add_argument("--estimator", nargs="+", choices=ESTIMATORS)
    p.add_argument("--radius-source", choices=[r.value for r in RadiusSource])
    p.add_argument("--normalization", choices=[n.value for n in DensityNormalization])
    p.add_argument("--seeds", type=_seeds)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--scores-dir", help="write per-point score CSVs here")
    p.add_argument("--strict", action="store_true",
                   help="treat estimator non-convergence as a failure (exit 3)")
    p.add_argument("--gmm-components", type=_positive_int)
    p.add_argument("--gmm-tol", type=_positive_float)
    p.add_argument("--gmm-max-iter", type=_positive_int)
    p.add_argument("--gmm-reg-floor", type=_positive_float)
    p.add_argument("--kde-bandwidth", type=_number_or_rule(("scott", "silverman")))
    p.add_argument("--ocsvm-nu", type=_positive_float)
    p.add_argument("--ocsvm-gamma", type=_number_or_rule(("scale",)))
    p.add_argument("--ocsvm-tol", type=_positive_float)
    p.add_argument("--ocsvm-max-iter", type=_positive_int)

    p = sub.add_parser("simulate", help="Monte Carlo check of the closed-form PRDC moments")
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--n-train", type=_positive_int, default=2000)
    p.add_argument("--n-test", type=_positive_int, default=500)
    p.add_argument("--dim", type=_positive_int, default=64)
    p.add_argument("--sigma", type=_positive_float, default=1.0)
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--seeds", type=_seeds, default=list(range(10)))
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("curse", help="PRDC and geometry versus dimension")
    p.add_argument("--d-min", type=_positive_int, default=2)
    p.add_argument("--d-max", type=_positive_int, default=200)
    p.add_argument("--d-step", type=_positive_int, default=5)
    p.add_argument("--n-in", type=_positive_int, default=1000)
    p.add_argument("--n-out", type=_positive_int, default=100)
    p.add_argument("--shift", type=float, default=3.0)
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("baseline", help="classical tests, divergences and detectors")
    p.add_argument("--id", required=True, metavar="PATH")
    p.add_argument("--ood", required=True, metavar="PATH")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--json", help="optional JSON copy of the battery")
    p.add_argument("--k", type=_positive_int, default=20, help="LOF neighbours")
    p.add_argument("--bins", type=_positive_int, default=64)
    p.add_argument("--trees", type=_positive_int, default=100)
    p.add_argument("--subsample", type=_positive_int, default=256)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--raw-estimator", nargs="*", choices=ESTIMATORS, default=[],
                   help="also fit these density models on raw ID features")

    p = sub.add_parser("convert", help="convert embeddings between CSV and binary")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--header", action="store_true", help="write f0..f{d-1} header to CSV")
    return parser


# --------------------------------------------------------------------------
# helpers


def _load(path):
    try:
        return load_embeddings(path)
    except (EmbeddingFormatError, OSError, ValueError) as exc:
        msg = str(exc)
        raise DataError(msg if str(path) in msg else f"{path}: {msg}") from exc


def _dump_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _write_csv(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, baselines.Undefined):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _estimator_params(args):
    flags = {
        "gmm": {"n_components": args.gmm_components, "tol": args.gmm_tol,
                "max_iter": args.gmm_max_iter, "reg_floor": args.gmm_reg_floor},
        "kde": {"bandwidth": args.kde_bandwidth},
        "ocsvm": {"nu": args.ocsvm_nu, "gamma": args.ocsvm_gamma, "tol": args.ocsvm_tol,
                  "max_iter": args.ocsvm_max_iter},
    }
    return {est: {k: v for k, v in p.items() if v is not None} for est, p in flags.items()}


# --------------------------------------------------------------------------
# subcommands


def cmd_detect(args):
    params = {e: {} for e in ESTIMATORS}
    if args.config:
        try:
            cfg, k_values, estimators, params = load_config(args.config)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"--config {args.config}: {exc}") from exc
        id_paths = list(cfg.id_paths)
        ood_paths = list(cfg.ood_paths)
        seeds = list(cfg.seeds)
        prdc_cfg = cfg.prdc
        labels = list(cfg.labels)
    else:
        missing = [f for f, v in (("--id", args.id), ("--ood", args.ood), ("--k", args.k),
                                  ("--estimator", args.estimator)) if not v]
        if missing:
            raise UsageError(f"detect: missing required flag(s): {', '.join(missing)}")
        id_paths, ood_paths = args.id, args.ood
        k_values, estimators = args.k, args.estimator
        seeds = list(range(10))
        prdc_cfg = PrdcConfig(k_values[0])
        labels = args.label

    # command-line flags override the config file
    if args.k:
        k_values = args.k
    if args.estimator:
        estimators = args.estimator
    if args.seeds:
        seeds = args.seeds
    if args.label:
        labels = args.label
    if args.radius_source:
        prdc_cfg = PrdcConfig(prdc_cfg.k, args.radius_source, prdc_cfg.density_normalization)
    if args.normalization:
        prdc_cfg = PrdcConfig(prdc_cfg.k, prdc_cfg.radius_source, args.normalization)
    for est, p in _estimator_params(args).items():
        params.setdefault(est, {}).update(p)

    if not id_paths or len(id_paths) != len(ood_paths):
        raise UsageError("detect: give one --ood per --id (one pair per representation space)")
    if labels and len(labels) != len(id_paths):
        raise UsageError("detect: give one --label per representation space")
    if "ocsvm" in estimators and not 0 < params["ocsvm"].get("nu", 0.05) <= 1:
        raise UsageError("--ocsvm-nu must lie in (0, 1]")
    labels = labels or [Path(p).stem for p in id_paths]

    id_spaces = [_load(p) for p in id_paths]
    ood_spaces = [_load(p) for p in ood_paths]
    cfg = PipelineConfig(prdc_cfg, estimators[0], params.get(estimators[0], {}), tuple(seeds),
                         tuple(id_paths), tuple(ood_paths), tuple(labels), args.threads)
    try:
        reports = run_forte_sweep_arrays(id_spaces, ood_spaces, cfg, k_values, estimators,
                                         params, keep_scores=True)
    except ValueError as exc:
        raise DataError(str(exc)) from exc

    stalled = []
    for report in reports:
        for r in report.seed_results:
            if not getattr(r.model, "converged", True):
                stalled.append(f"{report.meta['estimator']} k={report.meta['k']} seed={r.seed}")
    if stalled and args.strict:
        raise NumericFailure("estimator did not converge: " + "; ".join(stalled))

    docs = []
    for report in reports:
        doc = report.to_dict()
        if stalled:
            doc["warnings"] = [f"not converged: {s}" for s in stalled]
        docs.append(doc)
    _dump_json(docs[0] if len(docs) == 1 else {"reports": docs}, args.out)

    if args.scores_dir:
        for report in reports:
            est, k = report.meta["estimator"], report.meta["k"]
            for r in report.seed_results:
                rows = [["id", repr(float(s))] for s in r.scores_id]
                rows += [["ood", repr(float(s))] for s in r.scores_ood]
                _write_csv(Path(args.scores_dir) / f"scores_{est}_k{k}_seed{r.seed}.csv",
                           ["label", "score"], rows)

    for report in reports:
        print(f"{report.meta['estimator']} k={report.meta['k']}: {report.summary()}")
    return EXIT_OK


def cmd_simulate(args):
    if args.k >= args.n_train:
        raise UsageError(f"--k ({args.k}) must be smaller than --n-train ({args.n_train})")
    report = theory.monte_carlo_verify(args.k, args.n_train, args.n_test, args.dim, args.sigma,
                                       args.shift, args.seeds)
    out = Path(args.out)
    header, rows = report.csv_rows()
    _write_csv(out / "simulation.csv", header, rows)
    _dump_json(report.to_dict(), out / "simulation.json")
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.metric} {c.statistic}: empirical {c.empirical:.6g} "
              f"vs {c.theoretical:.6g} ({c.tolerance})")
    if not report.passed:
        raise NumericFailure("simulation checks failed; see " + str(out / "simulation.json"))
    return EXIT_OK


def curse_summary(rows, from_dim=50):
    cols = {name: i for i, name in enumerate(theory.CURSE_COLUMNS)}
    table = np.array(rows, dtype=np.float64)
    norms = table[:, cols["inlier_mean_norm"]]
    increases = float(np.mean(np.diff(norms) > 0)) if len(norms) > 1 else 1.0
    last = table[-1]
    high = table[table[:, 0] >= from_dim]
    cov_ok = bool(np.all(high[:, cols["outlier_coverage"]] < high[:, cols["inlier_coverage"]]))
    checks = {
        "last_dim": int(last[0]),
        "abs_mean_cosine_last": abs(float(last[cols["inlier_mean_cosine"]])),
        "norm_increase_fraction": increases,
        "top2_variance_last": float(last[cols["inlier_top2_variance"]]),
        "outlier_below_inlier_coverage_from_dim": from_dim,
    }
    checks["passed"] = {
        "cosine": checks["abs_mean_cosine_last"] < 0.05,
        "norm_growth": increases >= 0.9,
        "top2_variance": checks["top2_variance_last"] < 0.05,
        "coverage": cov_ok,
    }
    return checks


def cmd_curse(args):
    if args.d_min >= args.d_max:
        raise UsageError("--d-min must be smaller than --d-max")
    if args.n_in <= args.k or args.n_out <= args.k:
        raise UsageError("--n-in and --n-out must exceed --k")
    rows = theory.curse_experiment(args.d_min, args.d_max, args.d_step, args.n_in, args.n_out,
                                   args.shift, args.k, args.seed)
    out = Path(args.out)
    _write_csv(out / "curse.csv", list(theory.CURSE_COLUMNS),
               [[int(r[0])] + [repr(float(v)) for v in r[1:]] for r in rows])
    summary = curse_summary(rows)
    config = {k: getattr(args, k) for k in ("d_min", "d_max", "d_step", "n_in", "n_out",
                                            "shift", "k", "seed")}
    _dump_json({"config": config, "summary": summary}, out / "curse.json")
    ok = all(summary["passed"].values())
    print(f"curse: {len(rows)} dimensions, checks {'PASS' if ok else 'FAIL'}")
    if not ok:
        raise NumericFailure("curse-of-dimensionality checks failed")
    return EXIT_OK


def cmd_baseline(args):
    refs = _load(args.id)
    query = _load(args.ood)
    if refs.shape[1] != query.shape[1]:
        raise DataError(f"dimension mismatch: {args.id} has {refs.shape[1]} columns, "
                        f"{args.ood} has {query.shape[1]}")
    if refs.shape[0] < 3:
        raise DataError(f"{args.id}: need at least 3 ID rows")
    try:
        rows = baselines.battery(refs, query, args.k, args.bins, args.trees, args.subsample,
                                 args.seed)
        for est in args.raw_estimator:
            # half of the ID rows train the model, the other half are held-out negatives
            half, rest = np.array_split(np.concatenate(split_indices(refs.shape[0], args.seed)), 2)
            report = baselines.raw_feature_baseline(refs[half], refs[rest], query, est,
                                                    DEFAULT_PARAMS[est], args.seed)
            rows.append((f"raw_{est}_auroc", report.auroc, None, "raw features"))
            rows.append((f"raw_{est}_fpr95", report.fpr95, None, "raw features"))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    _write_csv(args.out, ["method", "statistic", "p_value", "note"],
               [[m, _cell(s), _cell(p), note] for m, s, p, note in rows])
    if args.json:
        _dump_json([{"method": m, "statistic": _cell(s) if not isinstance(s, float) else s,
                     "p_value": _cell(p) if not isinstance(p, float) else p, "note": note}
                    for m, s, p, note in rows], args.json)
    for m, s, p, _ in rows:
        print(f"{m}: {_cell(s)}" + (f" (p={_cell(p)})" if p is not None else ""))
    return EXIT_OK


def cmd_convert(args):
    x = _load(args.input)
    try:
        with np.errstate(over="ignore"):
            narrowed = x.astype(np.float32)
        if not np.all(np.isfinite(narrowed)):
            raise ValueError("values overflow binary32")
        if Path(args.output).suffix.lower() in (".csv", ".txt"):
            header = [f"f{j}" for j in range(x.shape[1])] if args.header else None
            Path(args.output).parent.mkdir(parents=True, exist_ok=True)
            save_csv(x, args.output, header=header, float32=True)
        else:
            Path(args.output).parent.mkdir(parents=True, exist_ok=True)
            save_binary(x, args.output)
    except ValueError as exc:
        raise DataError(f"{args.input}: {exc}") from exc
    print(f"wrote {x.shape[0]} x {x.shape[1]} to {args.output}")
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "simulate": cmd_simulate, "curse": cmd_curse,
            "baseline": cmd_baseline, "convert": cmd_convert}


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(EXIT_USAGE, "usage", str(exc))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = _default_threads()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if not args.verbose else "default",
                                  ConvergenceWarning)
            return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except NumericFailure as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
