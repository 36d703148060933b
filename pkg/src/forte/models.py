"""Density models fitted on PRDC features and their anomaly scores.

Three estimators share one scoring contract, ``anomaly_score(model, q)``,
where a higher score means more anomalous:

* ``GmmModel``   diagonal-covariance mixture fitted by EM; score = -log p(q)
* ``KdeModel``   isotropic Gaussian KDE; score = -log p(q)
* ``OcsvmModel`` one-class SVM (RBF) solved by SMO; score = -decision(q)

Models serialize to a small versioned binary blob, see :func:`dumps`.
"""

from __future__ import annotations

import enum
import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .store import as_matrix, rng

LOG_2PI = math.log(2.0 * math.pi)


class ConvergenceWarning(UserWarning):
    pass


def _features(x, n_features=None, name="x"):
    x = as_matrix(x, name)
    if n_features is not None and x.shape[1] != n_features:
        raise ValueError(f"model expects {n_features} features, got {x.shape[1]}")
    return x


# --------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-8

    def apply(self, x):
        x = _features(x, len(self.mean))
        return (x - self.mean) / np.maximum(self.std, self.epsilon)


def standardize_fit(x, epsilon=1e-8) -> Standardizer:
    x = as_matrix(x)
    return Standardizer(x.mean(axis=0), x.std(axis=0), float(epsilon))


def standardize_apply(s: Standardizer, x):
    return s.apply(x)


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    reg_floor: float
    n_iter: int = 0
    log_likelihood: float = float("nan")
    converged: bool = True
    history: tuple = ()

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def n_features(self):
        return self.means.shape[1]


def _gmm_log_joint(x, weights, means, variances):
    """n x c matrix of log w_c + log N(x; mu_c, diag(var_c))."""
    d = x.shape[1]
    out = np.empty((x.shape[0], len(weights)))
    for c in range(len(weights)):
        quad = np.sum((x - means[c]) ** 2 / variances[c], axis=1)
        log_det = np.sum(np.log(variances[c]))
        out[:, c] = math.log(weights[c]) - 0.5 * (d * LOG_2PI + log_det + quad)
    return out


def _kmeans_pp(x, n_components, gen):
    n = x.shape[0]
    centers = [x[gen.integers(n)]]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, n_components):
        total = closest.sum()
        if total > 0:
            idx = gen.choice(n, p=closest / total)
        else:
            idx = gen.integers(n)
        centers.append(x[idx])
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def gmm_fit(x, n_components=4, seed=0, tol=1e-6, max_iter=500, reg_floor=1e-6) -> GmmModel:
    """EM for a diagonal Gaussian mixture.

    Initial means are chosen by k-means++ seeding; all components start with
    the pooled per-column variance and equal weights. Variances are clamped
    at ``reg_floor``, which keeps every M-step a constrained maximizer so the
    mean log-likelihood never decreases. Stops once the improvement of the
    mean log-likelihood falls below ``tol``.
    """
    x = as_matrix(x)
    n, _ = x.shape
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n < n_components:
        raise ValueError(f"{n} points cannot support {n_components} components")
    if reg_floor <= 0:
        raise ValueError("reg_floor must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    gen = rng(seed)

    means = _kmeans_pp(x, n_components, gen)
    variances = np.tile(np.maximum(x.var(axis=0), reg_floor), (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)

    tiny = 10 * np.finfo(float).eps
    history = []
    converged = False
    for it in range(1, max_iter + 1):
        log_joint = _gmm_log_joint(x, weights, means, variances)
        log_norm = logsumexp(log_joint, axis=1)
        history.append(float(log_norm.mean()))
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        resp = np.exp(log_joint - log_norm[:, None])

        nk = np.maximum(resp.sum(axis=0), tiny)
        weights = nk / nk.sum()
        means = (resp.T @ x) / nk[:, None]
        variances = (resp.T @ (x ** 2)) / nk[:, None] - means ** 2
        variances = np.maximum(variances, reg_floor)
    else:
        # last parameters were never evaluated; score them for the record
        log_norm = logsumexp(_gmm_log_joint(x, weights, means, variances), axis=1)
        history.append(float(log_norm.mean()))

    return GmmModel(weights, means, variances, float(reg_floor), it, history[-1],
                    converged, tuple(history))


def gmm_log_density(model: GmmModel, x) -> np.ndarray:
    x = _features(x, model.n_features)
    return logsumexp(_gmm_log_joint(x, model.weights, model.means, model.variances), axis=1)


# --------------------------------------------------------------------------
# kernel density


class Bandwidth(str, enum.Enum):
    SCOTT = "scott"
    SILVERMAN = "silverman"


@dataclass(frozen=True)
class KdeModel:
    points: np.ndarray
    bandwidth: float
    rule: str = "fixed"

    @property
    def n_features(self):
        return self.points.shape[1]


def kde_bandwidth(x, rule) -> float:
    x = as_matrix(x)
    n, f = x.shape
    if isinstance(rule, (int, float)) and not isinstance(rule, bool):
        h = float(rule)
    else:
        rule = Bandwidth(str(rule).lower())
        if n < 2:
            raise ValueError(f"{rule.value} bandwidth needs at least 2 points")
        sigma = float(np.mean(x.std(axis=0, ddof=1)))
        if rule is Bandwidth.SCOTT:
            h = n ** (-1.0 / (f + 4)) * sigma
        else:
            h = (n * (f + 2) / 4.0) ** (-1.0 / (f + 4)) * sigma
    if not h > 0 or not math.isfinite(h):
        raise ValueError(f"bandwidth must be positive, got {h}")
    return h


def kde_fit(x, bandwidth="scott") -> KdeModel:
    """Gaussian KDE; ``bandwidth`` is "scott", "silverman" or a fixed h > 0."""
    x = as_matrix(x)
    h = kde_bandwidth(x, bandwidth)
    rule = bandwidth if isinstance(bandwidth, str) else "fixed"
    return KdeModel(x.copy(), h, str(rule).lower())


def kde_log_density(model: KdeModel, q, block=2048) -> np.ndarray:
    q = _features(q, model.n_features, "q")
    n, f = model.points.shape
    h2 = model.bandwidth ** 2
    const = -math.log(n) - 0.5 * f * (LOG_2PI + math.log(h2))
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], block):
        sq = cdist(q[start:start + block], model.points, metric="sqeuclidean")
        out[start:start + block] = logsumexp(-0.5 * sq / h2, axis=1) + const
    return out


# --------------------------------------------------------------------------
# one-class SVM


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray
    alpha: np.ndarray          # dual coefficients of the support vectors
    rho: float
    gamma: float
    nu: float
    n_train: int
    n_iter: int = 0
    kkt_gap: float = 0.0
    converged: bool = True
    train_alpha: np.ndarray = field(default=None, repr=False)

    @property
    def n_features(self):
        return self.support_vectors.shape[1]

    @property
    def upper_bound(self):
        return 1.0 / (self.nu * self.n_train)


def rbf_kernel(a, b, gamma):
    return np.exp(-gamma * cdist(a, b, metric="sqeuclidean"))


def ocsvm_gamma(x, rule="scale") -> float:
    if isinstance(rule, (int, float)) and not isinstance(rule, bool):
        gamma = float(rule)
    elif str(rule).lower() == "scale":
        var = float(np.mean(x.var(axis=0)))
        gamma = 1.0 / (x.shape[1] * var) if var > 0 else 1.0
    else:
        raise ValueError(f"unknown gamma rule {rule!r}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return gamma


def ocsvm_fit(x, nu=0.05, gamma="scale", tol=1e-6, max_iter=100_000) -> OcsvmModel:
    """One-class SVM dual by SMO with maximal-violating-pair selection.

    Solves  min 1/2 a'Ka  s.t.  0 <= a_i <= 1/(nu n),  sum a = 1.
    The full kernel matrix is held in memory (n^2 floats).
    """
    x = as_matrix(x)
    n = x.shape[0]
    if not 0 < nu <= 1:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    if n < 2:
        raise ValueError("one-class SVM needs at least 2 points")
    g = ocsvm_gamma(x, gamma)
    K = rbf_kernel(x, x, g)
    C = 1.0 / (nu * n)

    # feasible start: the first floor(nu n) points at the bound, one fractional
    alpha = np.zeros(n)
    n_full = min(int(nu * n), n)
    alpha[:n_full] = C
    if n_full < n:
        alpha[n_full] = 1.0 - n_full * C
    alpha = np.clip(alpha, 0.0, C)
    grad = K @ alpha

    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        up = alpha < C * (1 - 1e-12)
        low = alpha > C * 1e-12
        g_up = np.where(up, grad, np.inf)
        g_low = np.where(low, grad, -np.inf)
        i = int(np.argmin(g_up))
        j = int(np.argmax(g_low))
        gap = g_low[j] - g_up[i]
        if gap < tol:
            break
        quad = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        step = min(gap / quad, C - alpha[i], alpha[j])
        alpha[i] += step
        alpha[j] -= step
        grad += step * (K[:, i] - K[:, j])
    else:
        it = max_iter
    converged = gap < tol
    if not converged:
        warnings.warn(
            f"one-class SVM did not converge in {max_iter} iterations "
            f"(KKT gap {gap:.3g} > tol {tol:g})", ConvergenceWarning, stacklevel=2)

    free = (alpha > C * 1e-12) & (alpha < C * (1 - 1e-12))
    if np.any(free):
        rho = float(np.mean(grad[free]))
    else:
        up = alpha < C * (1 - 1e-12)
        low = alpha > C * 1e-12
        rho = float(0.5 * (np.min(grad[up], initial=np.inf) + np.max(grad[low], initial=-np.inf)))
    sv = alpha > 0
    return OcsvmModel(x[sv].copy(), alpha[sv].copy(), rho, g, float(nu), n, it,
                      float(gap), bool(converged), alpha.copy())


def ocsvm_decision(model: OcsvmModel, q, block=2048) -> np.ndarray:
    """sum_i a_i K(x_i, q) - rho; positive means inlier."""
    q = _features(q, model.n_features, "q")
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], block):
        k = rbf_kernel(q[start:start + block], model.support_vectors, model.gamma)
        out[start:start + block] = k @ model.alpha - model.rho
    return out


# --------------------------------------------------------------------------
# scoring


def anomaly_score(model, q) -> np.ndarray:
    """Anomaly score with the orientation "higher = more anomalous"."""
    if isinstance(model, GmmModel):
        return -gmm_log_density(model, q)
    if isinstance(model, KdeModel):
        return -kde_log_density(model, q)
    if isinstance(model, OcsvmModel):
        return -ocsvm_decision(model, q)
    raise TypeError(f"not a fitted density model: {type(model).__name__}")


def fit_estimator(name, x, seed=0, **params):
    """Fit ``"gmm"``, ``"kde"`` or ``"ocsvm"`` with keyword hyperparameters."""
    name = name.lower()
    if name == "gmm":
        return gmm_fit(x, seed=seed, **params)
    if name == "kde":
        return kde_fit(x, **params)
    if name == "ocsvm":
        return ocsvm_fit(x, **params)
    raise ValueError(f"unknown estimator {name!r}")


# --------------------------------------------------------------------------
# serialization
#
# "FRTM" | version u32 | kind u32 | json length u32 | json (utf-8)
#        | float64 LE arrays in the order listed under "arrays" in the json

MODEL_MAGIC = b"FRTM"
MODEL_VERSION = 1
_KINDS = {"standardizer": 0, "gmm": 1, "kde": 2, "ocsvm": 3}
_MODEL_HEADER = struct.Struct("<4sIII")


def _layout(model):
    if isinstance(model, Standardizer):
        return "standardizer", {"epsilon": model.epsilon}, {"mean": model.mean, "std": model.std}
    if isinstance(model, GmmModel):
        meta = {"reg_floor": model.reg_floor, "n_iter": model.n_iter,
                "log_likelihood": model.log_likelihood, "converged": model.converged}
        arrays = {"weights": model.weights, "means": model.means,
                  "variances": model.variances, "history": np.asarray(model.history)}
        return "gmm", meta, arrays
    if isinstance(model, KdeModel):
        return "kde", {"bandwidth": model.bandwidth, "rule": model.rule}, {"points": model.points}
    if isinstance(model, OcsvmModel):
        meta = {"rho": model.rho, "gamma": model.gamma, "nu": model.nu, "n_train": model.n_train,
                "n_iter": model.n_iter, "kkt_gap": model.kkt_gap, "converged": model.converged}
        arrays = {"support_vectors": model.support_vectors, "alpha": model.alpha}
        return "ocsvm", meta, arrays
    raise TypeError(f"cannot serialize {type(model).__name__}")


def dumps(model) -> bytes:
    kind, meta, arrays = _layout(model)
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in arrays.items()}
    header = {"meta": meta, "arrays": [[k, list(v.shape)] for k, v in arrays.items()]}
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, _KINDS[kind], len(text)), text]
    parts.extend(v.tobytes() for v in arrays.values())
    return b"".join(parts)


def loads(blob: bytes):
    if len(blob) < _MODEL_HEADER.size or blob[:4] != MODEL_MAGIC:
        raise ValueError("not a model blob (bad magic)")
    _, version, kind_code, n_text = _MODEL_HEADER.unpack_from(blob)
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    kind = {v: k for k, v in _KINDS.items()}.get(kind_code)
    if kind is None:
        raise ValueError(f"unknown model kind {kind_code}")
    offset = _MODEL_HEADER.size
    header = json.loads(blob[offset:offset + n_text].decode("utf-8"))
    offset += n_text
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        if offset + 8 * count > len(blob):
            raise ValueError("model blob is truncated")
        arrays[name] = np.frombuffer(blob, "<f8", count, offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    meta = header["meta"]
    if kind == "standardizer":
        return Standardizer(arrays["mean"], arrays["std"], meta["epsilon"])
    if kind == "gmm":
        return GmmModel(arrays["weights"], arrays["means"], arrays["variances"],
                        meta["reg_floor"], meta["n_iter"], meta["log_likelihood"],
                        meta["converged"], tuple(arrays["history"].tolist()))
    if kind == "kde":
        return KdeModel(arrays["points"], meta["bandwidth"], meta["rule"])
    return OcsvmModel(arrays["support_vectors"], arrays["alpha"], meta["rho"], meta["gamma"],
                      meta["nu"], meta["n_train"], meta["n_iter"], meta["kkt_gap"],
                      meta["converged"])
