"""Classical baselines: two-sample tests, divergences and anomaly detectors.

Scalar tests (Z, Kolmogorov-Smirnov, Mann-Whitney) pool every coordinate
of a multivariate sample into one scalar sample. Quantities that do not
exist for the data at hand (KL with non-overlapping support, for example)
are returned as :class:`Undefined` rather than NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .evaluation import aggregate_seeds, auroc, fpr_at_tpr
from .models import anomaly_score, fit_estimator, standardize_fit
from .store import as_matrix, substream

EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class Undefined:
    reason: str = "undefined"

    def __str__(self):
        return f"undefined: {self.reason}"


def is_defined(value):
    return not isinstance(value, Undefined)


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: object = None     # float in [0, 1] or Undefined
    notes: str = ""


def _flat(x, name, min_size=1):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < min_size:
        raise ValueError(f"{name} needs at least {min_size} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def _two_sided_normal_p(z):
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


# --------------------------------------------------------------------------
# two-sample tests


def z_score(a, b) -> TestResult:
    a = _flat(a, "a", 2)
    b = _flat(b, "b", 2)
    diff = a.mean() - b.mean()
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    if se == 0.0:
        if diff == 0.0:
            return TestResult("z_score", 0.0, 1.0, "zero variance, equal means")
        return TestResult("z_score", math.copysign(math.inf, diff), 0.0, "zero variance")
    z = float(diff / se)
    return TestResult("z_score", z, _two_sided_normal_p(z), "coordinates pooled")


def kolmogorov_sf(lam, terms=100) -> float:
    """P(K > lam) for the Kolmogorov distribution.

    Alternating series truncated at ``terms``; below lam = 1 the equivalent
    Jacobi-theta form is used because the alternating series converges too
    slowly there.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        j = np.arange(1, terms + 1)
        cdf = math.sqrt(2 * math.pi) / lam * np.sum(
            np.exp(-((2 * j - 1) ** 2) * math.pi ** 2 / (8 * lam ** 2)))
        return float(min(1.0, max(0.0, 1.0 - cdf)))
    j = np.arange(1, terms + 1)
    sf = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j ** 2 * lam ** 2))
    return float(min(1.0, max(0.0, sf)))


def ks_two_sample(a, b) -> TestResult:
    a = np.sort(_flat(a, "a"))
    b = np.sort(_flat(b, "b"))
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    return TestResult("ks", d, kolmogorov_sf(math.sqrt(n_eff) * d), "asymptotic p-value")


def mann_whitney_u(a, b) -> TestResult:
    a = _flat(a, "a")
    b = _flat(b, "b")
    n_a, n_b = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    n = n_a + n_b
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts ** 3 - counts))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return TestResult("mann_whitney", u, 1.0, "all values tied")
    z = (u - n_a * n_b / 2.0) / math.sqrt(var)
    return TestResult("mann_whitney", u, _two_sided_normal_p(z), "normal approximation, tie corrected")


# --------------------------------------------------------------------------
# distances and divergences


def mahalanobis_distances(query, mean, cov) -> np.ndarray:
    query = as_matrix(query, "query")
    diff = query - np.asarray(mean, dtype=np.float64)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
    z = np.linalg.solve(chol, diff.T)
    return np.sqrt(np.sum(z ** 2, axis=0))


def mahalanobis_mean_distance(refs, query) -> float:
    """Mean Mahalanobis distance of query rows from the reference Gaussian.

    The covariance is diagonally loaded by 1e-6 * trace / d.
    """
    refs = as_matrix(refs, "refs")
    query = as_matrix(query, "query")
    if refs.shape[1] != query.shape[1]:
        raise ValueError("dimension mismatch")
    if refs.shape[0] < 2:
        raise ValueError("need at least 2 reference points for a covariance")
    d = refs.shape[1]
    cov = np.atleast_2d(np.cov(refs, rowvar=False))
    trace = float(np.trace(cov))
    if not trace > 0:
        raise ValueError("reference covariance is zero; cannot be repaired by shrinkage")
    cov = cov + 1e-6 * trace / d * np.eye(d)
    return float(mahalanobis_distances(query, refs.mean(axis=0), cov).mean())


@dataclass(frozen=True)
class HistogramPair:
    edges: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        for name in ("p", "q"):
            mass = getattr(self, name)
            if np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} is not a probability vector")
        if len(self.p) != len(self.q) or len(self.edges) != len(self.p) + 1:
            raise ValueError("histogram shapes disagree")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must increase")


def histogram_pair(a, b, bins=64) -> HistogramPair:
    """Shared equal-width bins over the pooled range of two scalar samples."""
    a = _flat(a, "a")
    b = _flat(b, "b")
    edges = np.histogram_bin_edges(np.concatenate([a, b]), bins=bins)
    p = np.histogram(a, edges)[0].astype(np.float64)
    q = np.histogram(b, edges)[0].astype(np.float64)
    return HistogramPair(edges, p / p.sum(), q / q.sum())


def _kl(p, q):
    support = p > 0
    if np.any(q[support] == 0):
        return None
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def histogram_divergences(h: HistogramPair) -> dict:
    p, q = h.p, h.q
    kl = _kl(p, q)
    m = 0.5 * (p + q)
    js = 0.5 * (_kl(p, m) + _kl(q, m))
    overlap = float(np.sum(np.sqrt(p * q)))
    return {
        "kl": Undefined("no support overlap") if kl is None else max(kl, 0.0),
        "js": min(max(js, 0.0), math.log(2.0)),
        "bhattacharyya": (Undefined("no support overlap") if overlap == 0.0
                          else max(-math.log(min(overlap, 1.0)), 0.0)),
    }


def mean_histogram_divergences(a, b, bins=64) -> dict:
    """Per-dimension histogram divergences averaged over dimensions.

    A divergence that is undefined in any dimension is undefined overall.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    per_dim = [histogram_divergences(histogram_pair(a[:, j], b[:, j], bins))
               for j in range(a.shape[1])]
    out = {}
    for key in ("kl", "js", "bhattacharyya"):
        values = [r[key] for r in per_dim]
        bad = [v for v in values if not is_defined(v)]
        out[key] = bad[0] if bad else float(np.mean(values))
    return out


def wasserstein_1d(a, b) -> float:
    """W1 between two empirical scalar distributions (integral of |F_a - F_b|)."""
    a = np.sort(_flat(a, "a"))
    b = np.sort(_flat(b, "b"))
    pooled = np.sort(np.concatenate([a, b]))
    widths = np.diff(pooled)
    cdf_a = np.searchsorted(a, pooled[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, pooled[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def wasserstein_1d_mean(a, b) -> float:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    return float(np.mean([wasserstein_1d(a[:, j], b[:, j]) for j in range(a.shape[1])]))


# --------------------------------------------------------------------------
# local outlier factor


def lof_scores(refs, query, k=20) -> np.ndarray:
    """Local outlier factor of each query row relative to ``refs``.

    Reference neighbourhoods exclude the point itself; query neighbourhoods
    are the k nearest references. Reachability averages get a 1e-10 guard
    against exact duplicates.
    """
    refs = as_matrix(refs, "refs")
    query = as_matrix(query, "query")
    if refs.shape[1] != query.shape[1]:
        raise ValueError("dimension mismatch")
    m = refs.shape[0]
    if not 1 <= k < m:
        raise ValueError(f"k must satisfy 1 <= k < {m}, got {k}")

    d_ref = np.sqrt(cdist(refs, refs, metric="sqeuclidean"))
    np.fill_diagonal(d_ref, np.inf)
    ref_nn = np.argsort(d_ref, axis=1, kind="stable")[:, :k]
    ref_nn_d = np.take_along_axis(d_ref, ref_nn, axis=1)
    k_distance = ref_nn_d[:, -1]
    reach = np.maximum(ref_nn_d, k_distance[ref_nn])
    lrd_ref = 1.0 / (reach.mean(axis=1) + 1e-10)

    d_q = np.sqrt(cdist(query, refs, metric="sqeuclidean"))
    q_nn = np.argsort(d_q, axis=1, kind="stable")[:, :k]
    q_nn_d = np.take_along_axis(d_q, q_nn, axis=1)
    reach_q = np.maximum(q_nn_d, k_distance[q_nn])
    lrd_q = 1.0 / (reach_q.mean(axis=1) + 1e-10)
    return lrd_ref[q_nn].mean(axis=1) / lrd_q


# --------------------------------------------------------------------------
# isolation forest


def average_path_length(n):
    """Expected path length of an unsuccessful BST search among n points."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 2
    out[n == 2] = 1.0
    nb = n[big]
    out[big] = 2.0 * (np.log(nb - 1.0) + EULER_GAMMA) - 2.0 * (nb - 1.0) / nb
    return out


def _grow(x, depth, limit, gen):
    n = x.shape[0]
    if depth >= limit or n <= 1:
        return ("leaf", n)
    spread = x.max(axis=0) - x.min(axis=0)
    candidates = np.flatnonzero(spread > 0)
    if candidates.size == 0:
        return ("leaf", n)
    feat = int(candidates[gen.integers(candidates.size)])
    lo, hi = x[:, feat].min(), x[:, feat].max()
    split = gen.uniform(lo, hi)
    left = x[:, feat] < split
    return ("node", feat, split,
            _grow(x[left], depth + 1, limit, gen),
            _grow(x[~left], depth + 1, limit, gen))


def _path_lengths(tree, q, depth, out, idx):
    if tree[0] == "leaf":
        out[idx] = depth + average_path_length(tree[1])
        return
    _, feat, split, left, right = tree
    go_left = q[idx, feat] < split
    if np.any(go_left):
        _path_lengths(left, q, depth + 1, out, idx[go_left])
    if not np.all(go_left):
        _path_lengths(right, q, depth + 1, out, idx[~go_left])


def isolation_forest_scores(refs, query, n_trees=100, subsample=256, seed=0) -> np.ndarray:
    """Isolation-forest anomaly score 2^(-E[h(q)] / c(psi)), in (0, 1).

    Tree t draws from its own substream (seed, t), so trees are independent
    of evaluation order.
    """
    refs = as_matrix(refs, "refs")
    query = as_matrix(query, "query")
    if refs.shape[1] != query.shape[1]:
        raise ValueError("dimension mismatch")
    n = refs.shape[0]
    if n < 2:
        raise ValueError("isolation forest needs at least 2 reference points")
    psi = min(int(subsample), n)
    limit = int(math.ceil(math.log2(psi)))
    total = np.zeros(query.shape[0])
    all_idx = np.arange(query.shape[0])
    for t in range(n_trees):
        gen = substream(seed, t)
        sample = refs[gen.choice(n, size=psi, replace=False)]
        tree = _grow(sample, 0, limit, gen)
        depths = np.empty(query.shape[0])
        _path_lengths(tree, query, 0, depths, all_idx)
        total += depths
    mean_path = total / n_trees
    return np.power(2.0, -mean_path / float(average_path_length(psi)))


# --------------------------------------------------------------------------
# raw-feature density baseline and battery


def raw_feature_baseline(refs, test_id, test_ood, estimator="gmm", params=None, seed=0):
    """Fit a density model straight on raw embeddings and evaluate it."""
    refs = as_matrix(refs, "refs")
    test_id = as_matrix(test_id, "test_id")
    test_ood = as_matrix(test_ood, "test_ood")
    if not refs.shape[1] == test_id.shape[1] == test_ood.shape[1]:
        raise ValueError("dimension mismatch")
    params = dict(params or {})
    scaler = standardize_fit(refs)
    model = fit_estimator(estimator, scaler.apply(refs), seed=seed, **params)
    s_id = anomaly_score(model, scaler.apply(test_id))
    s_ood = anomaly_score(model, scaler.apply(test_ood))
    run = (seed, auroc(s_id, s_ood), fpr_at_tpr(s_id, s_ood))
    return aggregate_seeds([run], n_id=len(s_id), n_ood=len(s_ood), estimator=estimator,
                           k=None, radius_source=None, normalization=None,
                           spaces=["raw"], features="raw", estimator_params=params)


LOF_FLAG = 1.5
IF_FLAG = 0.5


def battery(refs, query, k=20, bins=64, n_trees=100, subsample=256, seed=0):
    """Run every baseline of refs vs query; list of (method, statistic, p, note)."""
    refs = as_matrix(refs, "refs")
    query = as_matrix(query, "query")
    rows = []
    for test in (z_score, ks_two_sample, mann_whitney_u):
        r = test(refs, query)
        rows.append((r.name, r.statistic, r.p_value, r.notes))
    k_lof = min(k, refs.shape[0] - 1)
    lof = lof_scores(refs, query, k_lof)
    rows.append(("lof_mean", float(lof.mean()), None, f"k={k_lof}"))
    rows.append(("lof_flagged_pct", 100.0 * float(np.mean(lof > LOF_FLAG)), None,
                 f"LOF > {LOF_FLAG}"))
    iso = isolation_forest_scores(refs, query, n_trees, subsample, seed)
    rows.append(("if_mean", float(iso.mean()), None, f"trees={n_trees} seed={seed}"))
    rows.append(("if_flagged_pct", 100.0 * float(np.mean(iso > IF_FLAG)), None,
                 f"score > {IF_FLAG}"))
    div = mean_histogram_divergences(refs, query, bins)
    rows.append(("jsd", div["js"], None, f"{bins} bins per dimension"))
    rows.append(("kld", div["kl"], None, f"{bins} bins per dimension"))
    rows.append(("bhattacharyya", div["bhattacharyya"], None, f"{bins} bins per dimension"))
    rows.append(("wasserstein", wasserstein_1d_mean(refs, query), None, "mean of marginals"))
    rows.append(("mahalanobis", mahalanobis_mean_distance(refs, query), None,
                 "diagonal loading 1e-6*trace/d"))
    return rows
