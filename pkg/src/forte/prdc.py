"""Per-point precision, recall, density and coverage.

For a test point ``x`` and reference set ``R`` (size m) with k-NN radii
``r_k``:

* precision: 1 if ``x`` lies in any closed ball ``B(y, r_k(y))``, y in R
* recall:    fraction of R inside the closed ball ``B(x, r_k(x))``
* density:   number of reference balls containing ``x``, over k (or k*m)
* coverage:  1 if the nearest reference is strictly closer than ``r_k(x)``

``r_k(x)`` for recall and coverage is taken either within the test set
(``RadiusSource.WITHIN_TEST``, the detector's default) or against the
reference set (``RadiusSource.FROM_REFERENCE``, the convention under which
the closed-form expectations in :mod:`forte.theory` hold).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .neighbors import _blocks, containment_counts, cross_knn_radii, knn_radii
from .store import as_matrix

METRICS = ("precision", "recall", "density", "coverage")


class RadiusSource(str, enum.Enum):
    WITHIN_TEST = "within_test"
    FROM_REFERENCE = "from_reference"


class DensityNormalization(str, enum.Enum):
    ONE_OVER_K = "one_over_k"
    ONE_OVER_KM = "one_over_km"


@dataclass(frozen=True)
class PrdcConfig:
    k: int = 5
    radius_source: RadiusSource = RadiusSource.WITHIN_TEST
    density_normalization: DensityNormalization = DensityNormalization.ONE_OVER_K

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        object.__setattr__(self, "radius_source", RadiusSource(self.radius_source))
        object.__setattr__(
            self, "density_normalization", DensityNormalization(self.density_normalization))


@dataclass(frozen=True)
class PrdcFeatureMatrix:
    values: np.ndarray
    space_labels: tuple = field(default_factory=tuple)

    @property
    def columns(self):
        return [f"{space}.{m}" for space in self.space_labels for m in METRICS]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _test_radii(test, refs, k, radius_source):
    radius_source = RadiusSource(radius_source)
    if radius_source is RadiusSource.WITHIN_TEST:
        if test.shape[0] <= k:
            raise ValueError(
                f"within-test radii need more than k={k} test points, got {test.shape[0]}")
        return knn_radii(test, k).radii
    if refs.shape[0] < k:
        raise ValueError(
            f"reference radii need at least k={k} reference points, got {refs.shape[0]}")
    return cross_knn_radii(test, refs, k).radii


def _prepare(test, refs, k):
    test = as_matrix(test, "test")
    refs = as_matrix(refs, "refs")
    if test.shape[1] != refs.shape[1]:
        raise ValueError(f"dimension mismatch: {test.shape[1]} vs {refs.shape[1]}")
    return test, refs


def precision_pp(test, refs, k) -> np.ndarray:
    test, refs = _prepare(test, refs, k)
    counts = containment_counts(refs, knn_radii(refs, k), test)
    return (counts > 0).astype(np.float64)


def recall_pp(test, refs, k, radius_source=RadiusSource.WITHIN_TEST) -> np.ndarray:
    test, refs = _prepare(test, refs, k)
    radii = _test_radii(test, refs, k, radius_source)
    out = np.empty(test.shape[0])
    for rows in _blocks(test.shape[0]):
        d = np.sqrt(cdist(test[rows], refs, metric="sqeuclidean"))
        out[rows] = np.count_nonzero(d <= radii[rows, None], axis=1)
    return out / refs.shape[0]


def density_pp(test, refs, k, normalization=DensityNormalization.ONE_OVER_K) -> np.ndarray:
    test, refs = _prepare(test, refs, k)
    counts = containment_counts(refs, knn_radii(refs, k), test)
    if DensityNormalization(normalization) is DensityNormalization.ONE_OVER_K:
        return counts / k
    return counts / (k * refs.shape[0])


def coverage_pp(test, refs, k, radius_source=RadiusSource.WITHIN_TEST) -> np.ndarray:
    test, refs = _prepare(test, refs, k)
    radii = _test_radii(test, refs, k, radius_source)
    out = np.empty(test.shape[0])
    for rows in _blocks(test.shape[0]):
        nearest = np.sqrt(cdist(test[rows], refs, metric="sqeuclidean").min(axis=1))
        out[rows] = nearest < radii[rows]
    return out


def prdc(test, refs, cfg: PrdcConfig = PrdcConfig()) -> np.ndarray:
    """n x 4 matrix of [precision, recall, density, coverage] per test row.

    Shares one blocked pass over the test-to-reference distances.
    """
    test, refs = _prepare(test, refs, cfg.k)
    k = cfg.k
    m = refs.shape[0]
    ref_radii = knn_radii(refs, k).radii
    test_radii = _test_radii(test, refs, k, cfg.radius_source)

    out = np.empty((test.shape[0], 4))
    for rows in _blocks(test.shape[0]):
        d = np.sqrt(cdist(test[rows], refs, metric="sqeuclidean"))
        in_ref_balls = d <= ref_radii[None, :]
        counts = np.count_nonzero(in_ref_balls, axis=1)
        out[rows, 0] = counts > 0
        out[rows, 1] = np.count_nonzero(d <= test_radii[rows, None], axis=1) / m
        out[rows, 2] = counts
        out[rows, 3] = d.min(axis=1) < test_radii[rows]

    if cfg.density_normalization is DensityNormalization.ONE_OVER_K:
        out[:, 2] /= k
    else:
        out[:, 2] /= k * m
    return out


def assemble_features(test_spaces, ref_spaces, cfg: PrdcConfig = PrdcConfig(),
                      labels=None) -> PrdcFeatureMatrix:
    """Concatenate per-space PRDC blocks, in list order, into one matrix."""
    test_spaces = list(test_spaces)
    ref_spaces = list(ref_spaces)
    if not test_spaces:
        raise ValueError("need at least one representation space")
    if len(test_spaces) != len(ref_spaces):
        raise ValueError(
            f"{len(test_spaces)} test spaces but {len(ref_spaces)} reference spaces")
    if labels is None:
        labels = [f"space{i}" for i in range(len(test_spaces))]
    if len(labels) != len(test_spaces):
        raise ValueError("one label per space required")
    n_test = {np.shape(t)[0] for t in test_spaces}
    n_ref = {np.shape(r)[0] for r in ref_spaces}
    if len(n_test) != 1 or len(n_ref) != 1:
        raise ValueError("row counts differ across representation spaces")
    blocks = [prdc(t, r, cfg) for t, r in zip(test_spaces, ref_spaces)]
    return PrdcFeatureMatrix(np.hstack(blocks), tuple(labels))
