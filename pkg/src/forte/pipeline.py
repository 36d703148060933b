"""End-to-end detector: split, PRDC features, density model, evaluation.

Per seed the ID rows are shuffled once and cut into thirds. The same
permutation is applied to every representation space so rows stay aligned.

* reference  anchors the k-NN manifold
* test_like  PRDC vs reference -> features the estimator is fitted on
* held_out   PRDC vs reference -> unseen ID scores (negatives)
* OOD        PRDC vs reference -> positives

OOD data never enters the fitted model.
"""

from __future__ import annotations

import configparser
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .evaluation import aggregate_seeds, auroc, fpr_at_tpr
from .models import anomaly_score, fit_estimator, standardize_fit
from .prdc import PrdcConfig, assemble_features
from .store import as_matrix, load_embeddings, split_indices

log = logging.getLogger(__name__)

ESTIMATORS = ("gmm", "kde", "ocsvm")
DEFAULT_PARAMS = {
    "gmm": {"n_components": 4, "tol": 1e-6, "max_iter": 500, "reg_floor": 1e-6},
    "kde": {"bandwidth": "scott"},
    "ocsvm": {"nu": 0.05, "gamma": "scale", "tol": 1e-6, "max_iter": 100_000},
}


@dataclass(frozen=True)
class PipelineConfig:
    prdc: PrdcConfig = PrdcConfig()
    estimator: str = "gmm"
    params: dict = field(default_factory=dict)
    seeds: tuple = tuple(range(10))
    id_paths: tuple = ()
    ood_paths: tuple = ()
    labels: tuple = ()
    threads: int = 1

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(self.id_paths) != len(self.ood_paths):
            raise ValueError("each representation space needs both an ID and an OOD file")

    def estimator_params(self):
        merged = dict(DEFAULT_PARAMS[self.estimator])
        merged.update(self.params)
        return merged


@dataclass
class SeedResult:
    seed: int
    auroc: float
    fpr95: float
    scores_id: np.ndarray
    scores_ood: np.ndarray
    model: object
    scaler: object


def _check_spaces(id_spaces, ood_spaces):
    id_spaces = [as_matrix(x, "ID embeddings") for x in id_spaces]
    ood_spaces = [as_matrix(x, "OOD embeddings") for x in ood_spaces]
    if not id_spaces:
        raise ValueError("need at least one representation space")
    if len(id_spaces) != len(ood_spaces):
        raise ValueError(f"{len(id_spaces)} ID spaces but {len(ood_spaces)} OOD spaces")
    if len({x.shape[0] for x in id_spaces}) != 1:
        raise ValueError("ID row counts differ across representation spaces")
    if len({x.shape[0] for x in ood_spaces}) != 1:
        raise ValueError("OOD row counts differ across representation spaces")
    for i, (a, b) in enumerate(zip(id_spaces, ood_spaces)):
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"space {i}: ID has {a.shape[1]} dims, OOD has {b.shape[1]}")
    return id_spaces, ood_spaces


def _check_feasible(prdc_cfg, n_id, n_ood):
    k = prdc_cfg.k
    smallest = n_id // 3
    if smallest <= k:
        raise ValueError(
            f"k={k} is infeasible: the smallest third of {n_id} ID rows has {smallest} points")
    if n_ood <= k and prdc_cfg.radius_source.value == "within_test":
        raise ValueError(f"k={k} is infeasible for {n_ood} OOD rows with within-test radii")


def reference_features(id_spaces, seed, prdc_cfg, labels=None):
    """(calibration, held-out) PRDC features and the reference rows for a seed."""
    held, ref, like = split_indices(id_spaces[0].shape[0], seed)
    refs = [x[ref] for x in id_spaces]
    fit_feats = assemble_features([x[like] for x in id_spaces], refs, prdc_cfg, labels)
    held_feats = assemble_features([x[held] for x in id_spaces], refs, prdc_cfg, labels)
    return fit_feats, held_feats, refs


def run_seed(id_spaces, ood_spaces, seed, prdc_cfg, estimator, params, labels=None):
    fit_feats, held_feats, refs = reference_features(id_spaces, seed, prdc_cfg, labels)
    ood_feats = assemble_features(ood_spaces, refs, prdc_cfg, labels)
    scaler = standardize_fit(fit_feats.values)
    model = fit_estimator(estimator, scaler.apply(fit_feats.values), seed=seed, **params)
    s_id = anomaly_score(model, scaler.apply(held_feats.values))
    s_ood = anomaly_score(model, scaler.apply(ood_feats.values))
    return SeedResult(int(seed), auroc(s_id, s_ood), fpr_at_tpr(s_id, s_ood),
                      s_id, s_ood, model, scaler)


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_forte_arrays(id_spaces, ood_spaces, cfg: PipelineConfig = PipelineConfig(),
                     keep_scores=False):
    """Run the detector on in-memory spaces; returns an EvaluationReport.

    With ``keep_scores`` the per-seed :class:`SeedResult` list is attached
    as ``report.seed_results``.
    """
    id_spaces, ood_spaces = _check_spaces(id_spaces, ood_spaces)
    _check_feasible(cfg.prdc, id_spaces[0].shape[0], ood_spaces[0].shape[0])
    labels = list(cfg.labels) or [f"space{i}" for i in range(len(id_spaces))]
    params = cfg.estimator_params()

    def one(seed):
        log.debug("seed %s: %s k=%s", seed, cfg.estimator, cfg.prdc.k)
        return run_seed(id_spaces, ood_spaces, seed, cfg.prdc, cfg.estimator, params, labels)

    results = _map(one, list(cfg.seeds), cfg.threads)
    n_id = len(results[0].scores_id)
    report = aggregate_seeds(
        [(r.seed, r.auroc, r.fpr95) for r in results], n_id=n_id, n_ood=ood_spaces[0].shape[0],
        estimator=cfg.estimator, k=cfg.prdc.k, radius_source=cfg.prdc.radius_source.value,
        normalization=cfg.prdc.density_normalization.value, spaces=labels,
        estimator_params=params)
    if keep_scores:
        report.seed_results = sorted(results, key=lambda r: r.seed)
    return report


def load_spaces(cfg: PipelineConfig):
    id_spaces = [load_embeddings(p) for p in cfg.id_paths]
    ood_spaces = [load_embeddings(p) for p in cfg.ood_paths]
    return id_spaces, ood_spaces


def run_forte(cfg: PipelineConfig, keep_scores=False):
    id_spaces, ood_spaces = load_spaces(cfg)
    labels = cfg.labels or tuple(Path(p).stem for p in cfg.id_paths)
    return run_forte_arrays(id_spaces, ood_spaces, replace(cfg, labels=tuple(labels)),
                            keep_scores)


def run_forte_sweep_arrays(id_spaces, ood_spaces, cfg: PipelineConfig, k_values, estimators,
                           params_by_estimator=None, keep_scores=False):
    """Every (k, estimator) pair, in that nesting order; splits depend only on seed."""
    params_by_estimator = params_by_estimator or {}
    reports = []
    for k in k_values:
        for est in estimators:
            sub = replace(cfg, prdc=replace(cfg.prdc, k=int(k)), estimator=est,
                          params=params_by_estimator.get(est, cfg.params if est == cfg.estimator
                                                         else {}))
            reports.append(run_forte_arrays(id_spaces, ood_spaces, sub, keep_scores))
    return reports


def run_forte_sweep(cfg: PipelineConfig, k_values, estimators, params_by_estimator=None,
                    keep_scores=False):
    id_spaces, ood_spaces = load_spaces(cfg)
    labels = cfg.labels or tuple(Path(p).stem for p in cfg.id_paths)
    return run_forte_sweep_arrays(id_spaces, ood_spaces, replace(cfg, labels=tuple(labels)),
                                  k_values, estimators, params_by_estimator, keep_scores)


# --------------------------------------------------------------------------
# plain-text configuration
#
#   id = a.frte, b.frte        # one file per representation space
#   ood = a_ood.frte, b_ood.frte
#   k = 5                      # several values -> sweep
#   estimator = gmm            # several values -> sweep
#   seeds = 0-9
#   radius_source = within_test
#   normalization = one_over_k
#   gmm.n_components = 4       # <estimator>.<param> hyperparameters


def parse_list(text):
    return [t.strip() for t in str(text).replace(";", ",").split(",") if t.strip()]


def parse_seeds(text):
    seeds = []
    for token in parse_list(text):
        if "-" in token:
            lo, hi = (int(v) for v in token.split("-", 1))
            if hi < lo:
                raise ValueError(f"bad seed range {token!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(token))
    if not seeds or min(seeds) < 0:
        raise ValueError("seeds must be a non-empty list of non-negative integers")
    return seeds


def _coerce(value):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def load_config(path):
    """Parse a key/value config; returns (PipelineConfig, k_values, estimators, params)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string("[forte]\n" + text)
    section = parser["forte"]
    base = Path(path).parent

    def paths(key):
        return tuple(str(base / p) if not Path(p).is_absolute() else p
                     for p in parse_list(section.get(key, "")))

    k_values = [int(v) for v in parse_list(section.get("k", "5"))]
    estimators = [e.lower() for e in parse_list(section.get("estimator", "gmm"))]
    params = {e: {} for e in ESTIMATORS}
    for key, value in section.items():
        if "." in key:
            est, name = key.split(".", 1)
            if est not in params:
                raise ValueError(f"unknown estimator prefix in {key!r}")
            params[est][name] = _coerce(value)
    prdc_cfg = PrdcConfig(k_values[0], section.get("radius_source", "within_test"),
                          section.get("normalization", "one_over_k"))
    cfg = PipelineConfig(prdc_cfg, estimators[0], params[estimators[0]],
                         tuple(parse_seeds(section.get("seeds", "0-9"))),
                         paths("id"), paths("ood"), tuple(parse_list(section.get("labels", ""))))
    return cfg, k_values, estimators, params
