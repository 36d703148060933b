"""Closed-form PRDC moments under Gaussian data and Monte Carlo checks.

Setting: reference points x_i ~ N(mu, sigma^2 I_D), i = 1..n_train, test
points from the same law (ID) or shifted by ``shift`` in every coordinate
(OOD). Per-point PRDC are computed in reference-radius mode with 1/k
density normalization, which is the convention the closed forms assume.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .prdc import DensityNormalization, PrdcConfig, RadiusSource, prdc
from .store import rng, substream

METRICS = ("precision", "recall", "density", "coverage")


@dataclass(frozen=True)
class GaussianSpec:
    n: int
    d: int
    mean: object = 0.0       # scalar for every coordinate, or a length-d vector
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if np.ndim(self.mean) not in (0, 1) or (
                np.ndim(self.mean) == 1 and len(self.mean) != self.d):
            raise ValueError("mean must be a scalar or a length-d vector")


def sample_gaussian(spec: GaussianSpec, gen=None) -> np.ndarray:
    """n x d isotropic normal draws (numpy's ziggurat sampler on PCG64)."""
    gen = rng(spec.seed) if gen is None else gen
    z = gen.standard_normal((spec.n, spec.d))
    return np.asarray(spec.mean, dtype=np.float64) + spec.sigma * z


@dataclass(frozen=True)
class TheoryPrediction:
    k: int
    n_train: int
    expected: dict
    variances: dict = field(default_factory=dict)
    # an alternative reading puts coverage at 1 - e^-k; the ball argument gives 1
    expected_coverage_statement: float = float("nan")


def _check_k(k, n_train):
    if int(k) != k or not 1 <= k < n_train:
        raise ValueError(f"need 1 <= k < n_train, got k={k}, n_train={n_train}")


def expected_prdc(k, n_train) -> TheoryPrediction:
    _check_k(k, n_train)
    expected = {
        "precision": 1.0 - math.exp(-k),
        "recall": k / n_train,
        "density": 1.0,
        "coverage": 1.0,
    }
    return TheoryPrediction(int(k), int(n_train), expected,
                            expected_coverage_statement=1.0 - math.exp(-k))


def prdc_variances(k, n_train) -> TheoryPrediction:
    _check_k(k, n_train)
    p = k / n_train
    variances = {
        "precision": math.exp(-k) - math.exp(-2 * k),
        "recall": p * (1 - p) / n_train,
        "density": (1.0 / k) * (1 - p),
        "coverage": 0.0,
    }
    base = expected_prdc(k, n_train)
    return TheoryPrediction(base.k, base.n_train, base.expected, variances,
                            base.expected_coverage_statement)


def beta_order_statistic_mean(k, n) -> float:
    """Mean of the k-th order statistic of n standard uniforms, Beta(k, n-k+1)."""
    if int(k) != k or not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return k / (n + 1)


def chi2_distance_moments(sigma, dim, delta=0.0):
    """Mean and variance of ||x - y||^2 for x ~ N(a, s^2 I), y ~ N(b, s^2 I).

    ``delta`` is ||a - b||; the scaled squared distance is (non-)central
    chi-squared with ``dim`` degrees of freedom and noncentrality
    delta^2 / (2 sigma^2).
    """
    if not sigma > 0 or dim < 1 or delta < 0:
        raise ValueError("need sigma > 0, dim >= 1, delta >= 0")
    lam = delta ** 2 / (2 * sigma ** 2)
    mean = 2 * sigma ** 2 * dim + delta ** 2
    var = 8 * sigma ** 4 * dim + 16 * sigma ** 4 * lam
    return mean, var


# --------------------------------------------------------------------------
# Monte Carlo verification


@dataclass(frozen=True)
class Tolerances:
    precision_abs: float = 0.02
    recall_rel: float = 0.25
    density_abs: float = 0.05
    precision_var_factor: float = 3.0
    ood_max: float = 0.01


@dataclass
class MetricCheck:
    metric: str
    statistic: str            # "mean" or "variance"
    empirical: float
    theoretical: float
    tolerance: str
    passed: bool

    @property
    def gap(self):
        return abs(self.empirical - self.theoretical)


@dataclass
class SimulationReport:
    config: dict
    population: str           # "id" or "ood"
    checks: list
    per_seed: list            # per seed: {metric: (mean, variance)}

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {
            "config": self.config,
            "population": self.population,
            "passed": self.passed,
            "checks": [dict(asdict(c), gap=c.gap) for c in self.checks],
            "per_seed": self.per_seed,
        }

    def csv_rows(self):
        header = ["metric", "statistic", "empirical", "theoretical", "gap", "tolerance", "passed"]
        rows = [[c.metric, c.statistic, repr(c.empirical), repr(c.theoretical), repr(c.gap),
                 c.tolerance, str(c.passed).lower()] for c in self.checks]
        return header, rows


def simulate_prdc(k, n_train, n_test, dim, sigma=1.0, shift=0.0, seed=0):
    """Per-point PRDC (n_test x 4) of one Gaussian draw with reference radii."""
    gen = substream(seed, 0)
    train = sample_gaussian(GaussianSpec(n_train, dim, 0.0, sigma), gen)
    test = sample_gaussian(GaussianSpec(n_test, dim, float(shift), sigma), gen)
    cfg = PrdcConfig(k, RadiusSource.FROM_REFERENCE, DensityNormalization.ONE_OVER_K)
    return prdc(test, train, cfg)


def monte_carlo_verify(k=5, n_train=2000, n_test=500, dim=64, sigma=1.0, shift=0.0,
                       seeds=range(10), tol=Tolerances()) -> SimulationReport:
    """Compare simulated per-point PRDC against the closed forms.

    ``shift == 0`` draws the test set from the reference law and checks the
    ID expectations; ``shift != 0`` draws it shifted by ``shift`` in every
    coordinate and checks that all four means collapse to ~0 for every seed.
    """
    _check_k(k, n_train)
    if n_test < 1 or dim < 1:
        raise ValueError("need n_test >= 1 and dim >= 1")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    per_seed_values = [simulate_prdc(k, n_train, n_test, dim, sigma, shift, s) for s in seeds]
    pooled = np.vstack(per_seed_values)
    per_seed = [
        {"seed": s, **{m: {"mean": float(v[:, j].mean()), "variance": float(v[:, j].var())}
                       for j, m in enumerate(METRICS)}}
        for s, v in zip(seeds, per_seed_values)
    ]
    config = {"k": int(k), "n_train": int(n_train), "n_test": int(n_test), "dim": int(dim),
              "sigma": float(sigma), "shift": float(shift), "seeds": seeds,
              "radius_source": RadiusSource.FROM_REFERENCE.value,
              "normalization": DensityNormalization.ONE_OVER_K.value}

    checks = []
    if shift == 0:
        theory = prdc_variances(k, n_train)
        mean = {m: float(pooled[:, j].mean()) for j, m in enumerate(METRICS)}
        e = theory.expected
        checks.append(MetricCheck("precision", "mean", mean["precision"], e["precision"],
                                  f"abs {tol.precision_abs}",
                                  abs(mean["precision"] - e["precision"]) <= tol.precision_abs))
        checks.append(MetricCheck("recall", "mean", mean["recall"], e["recall"],
                                  f"rel {tol.recall_rel}",
                                  abs(mean["recall"] - e["recall"]) <= tol.recall_rel * e["recall"]))
        checks.append(MetricCheck("density", "mean", mean["density"], e["density"],
                                  f"abs {tol.density_abs}",
                                  abs(mean["density"] - e["density"]) <= tol.density_abs))
        checks.append(MetricCheck("coverage", "mean", mean["coverage"], e["coverage"],
                                  "exact", mean["coverage"] == e["coverage"]))
        var_p = float(pooled[:, 0].var())
        target = theory.variances["precision"]
        f = tol.precision_var_factor
        checks.append(MetricCheck("precision", "variance", var_p, target, f"factor {f}",
                                  target / f <= var_p <= target * f))
    else:
        for s, v in zip(seeds, per_seed_values):
            for j, m in enumerate(METRICS):
                value = float(v[:, j].mean())
                checks.append(MetricCheck(m, f"mean[seed={s}]", value, 0.0,
                                          f"<= {tol.ood_max}", value <= tol.ood_max))
    return SimulationReport(config, "id" if shift == 0 else "ood", checks, per_seed)


# --------------------------------------------------------------------------
# curse-of-dimensionality experiment


def top2_variance_fraction(x, tol=1e-10, max_iter=10_000) -> float:
    """(l1 + l2) / trace of the sample covariance.

    The two leading eigenvalues come from power iteration with deflation,
    started from a fixed pseudo-random vector.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError("need at least 3 rows and 2 columns")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    total = float(np.trace(cov))
    if not total > 0:
        raise ValueError("zero total variance")
    start = rng(0x5EED).standard_normal(cov.shape[0])
    eigvals = []
    work = cov.copy()
    for _ in range(2):
        v = start / np.linalg.norm(start)
        lam = float(v @ work @ v)
        for _ in range(max_iter):
            w = work @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                lam = 0.0
                break
            v = w / norm
            new = float(v @ work @ v)
            done = abs(new - lam) <= tol * max(abs(new), total)
            lam = new
            if done:
                break
        eigvals.append(max(lam, 0.0))
        work = work - lam * np.outer(v, v)
    return float(min(1.0, sum(eigvals) / total))


def mean_cosine_similarity(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    norms = np.linalg.norm(x, axis=1)
    unit = x / np.where(norms > 0, norms, 1.0)[:, None]
    gram = unit @ unit.T
    return float((gram.sum() - np.trace(gram)) / (n * (n - 1)))


CURSE_COLUMNS = (
    ["dim"]
    + [f"inlier_{m}" for m in METRICS]
    + [f"outlier_{m}" for m in METRICS]
    + ["inlier_mean_norm", "inlier_mean_cosine", "inlier_top2_variance"]
)


def curse_experiment(d_min=2, d_max=200, d_step=5, n_in=1000, n_out=100, shift=3.0, k=5,
                     seed=0, cosine_subsample=500, cfg=None):
    """Per-dimension PRDC means (inliers vs inliers, outliers vs inliers) and geometry.

    Dimensions run over ``range(d_min, d_max, d_step)``. Each dimension uses
    its own substream (seed, D).
    """
    if not (1 <= d_min < d_max and d_step >= 1):
        raise ValueError("invalid dimension range")
    if n_in <= k or n_out <= k:
        raise ValueError(f"need more than k={k} inliers and outliers")
    cfg = cfg or PrdcConfig(k)
    rows = []
    for dim in range(d_min, d_max, d_step):
        gen = substream(seed, dim)
        inliers = gen.standard_normal((n_in, dim))
        outliers = shift + gen.standard_normal((n_out, dim))
        inner = prdc(inliers, inliers, cfg).mean(axis=0)
        outer = prdc(outliers, inliers, cfg).mean(axis=0)
        sub = inliers
        if n_in > cosine_subsample:
            sub = inliers[gen.choice(n_in, size=cosine_subsample, replace=False)]
        rows.append([dim, *inner.tolist(), *outer.tolist(),
                     float(np.linalg.norm(inliers, axis=1).mean()),
                     mean_cosine_similarity(sub),
                     top2_variance_fraction(inliers)])
    return rows

