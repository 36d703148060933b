"""Threshold-free detection metrics and multi-seed aggregation.

OOD is the positive class and scores are oriented so that larger means
more anomalous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


def _scores(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite scores")
    return x


def auroc(scores_id, scores_ood) -> float:
    """P(OOD score > ID score) with ties counted as 1/2 (midrank statistic)."""
    s_id = _scores(scores_id, "scores_id")
    s_ood = _scores(scores_ood, "scores_ood")
    n_id, n_ood = s_id.size, s_ood.size
    ranks = rankdata(np.concatenate([s_ood, s_id]))
    u = ranks[:n_ood].sum() - n_ood * (n_ood + 1) / 2.0
    return float(u / (n_id * n_ood))


def fpr_at_tpr(scores_id, scores_ood, target_tpr=0.95) -> float:
    """FPR at the largest threshold t whose TPR(score >= t) reaches target_tpr.

    No interpolation: TPR moves in steps of 1/n_ood.
    """
    s_id = _scores(scores_id, "scores_id")
    s_ood = _scores(scores_ood, "scores_ood")
    if not 0 < target_tpr <= 1:
        raise ValueError(f"target_tpr must lie in (0, 1], got {target_tpr}")
    n_ood = s_ood.size
    ood_desc = np.sort(s_ood)[::-1]
    tpr = np.arange(1, n_ood + 1) / n_ood
    # smallest number of positives whose TPR reaches the target
    need = int(np.argmax(tpr >= target_tpr))
    threshold = ood_desc[need]
    return float(np.count_nonzero(s_id >= threshold) / s_id.size)


def format_mean_std(mean, std, scale=100.0):
    return f"{mean * scale:.2f} ± {std * scale:.2f}"


@dataclass
class EvaluationReport:
    per_seed: list                 # (seed, auroc, fpr95) triples
    n_id: int = 0
    n_ood: int = 0
    meta: dict = field(default_factory=dict)

    def _column(self, idx):
        return np.array([run[idx] for run in self.per_seed], dtype=np.float64)

    def _stats(self, idx):
        values = self._column(idx)
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return float(values.mean()), std

    @property
    def auroc(self):
        return self._stats(1)[0]

    @property
    def fpr95(self):
        return self._stats(2)[0]

    @property
    def mean_std(self):
        return {"auroc": self._stats(1), "fpr95": self._stats(2)}

    def summary(self):
        a_mean, a_std = self._stats(1)
        f_mean, f_std = self._stats(2)
        return (f"AUROC {format_mean_std(a_mean, a_std)} / "
                f"FPR95 {format_mean_std(f_mean, f_std)}")

    def to_dict(self):
        out = {
            "estimator": self.meta.get("estimator"),
            "k": self.meta.get("k"),
            "radius_source": self.meta.get("radius_source"),
            "normalization": self.meta.get("normalization"),
            "seeds": [int(run[0]) for run in self.per_seed],
        }
        for name, idx in (("auroc", 1), ("fpr95", 2)):
            mean, std = self._stats(idx)
            out[name] = {"mean": mean, "std": std,
                         "per_seed": [float(v) for v in self._column(idx)]}
        out["n_id"] = int(self.n_id)
        out["n_ood"] = int(self.n_ood)
        out["spaces"] = list(self.meta.get("spaces", []))
        for key, value in self.meta.items():
            out.setdefault(key, value)
        return out


def aggregate_seeds(runs, n_id=0, n_ood=0, **meta) -> EvaluationReport:
    """Collect (seed, auroc, fpr95) runs; runs are kept sorted by seed."""
    runs = [(int(s), float(a), float(f)) for s, a, f in runs]
    if not runs:
        raise ValueError("no runs to aggregate")
    return EvaluationReport(sorted(runs), n_id, n_ood, dict(meta))
