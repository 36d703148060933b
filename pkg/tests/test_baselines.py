import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

import oracles
from forte.baselines import (
    HistogramPair,
    Undefined,
    battery,
    histogram_divergences,
    is_defined,
    isolation_forest_scores,
    kolmogorov_sf,
    ks_two_sample,
    lof_scores,
    mahalanobis_distances,
    mahalanobis_mean_distance,
    mann_whitney_u,
    mean_histogram_divergences,
    raw_feature_baseline,
    wasserstein_1d,
    z_score,
)


def pair(p, q):
    return HistogramPair(np.arange(len(p) + 1.0), np.asarray(p, float), np.asarray(q, float))


# two-sample tests

def test_z_score_examples():
    r = z_score([1, 2, 3], [1, 2, 3])
    assert (r.statistic, r.p_value) == (0.0, 1.0)
    assert z_score([0, 2], [1, 3]).statistic == pytest.approx(-1 / math.sqrt(2))
    assert z_score([1, 1], [1, 1]).statistic == 0.0
    with pytest.raises(ValueError):
        z_score([1], [1, 2])


def test_ks_examples():
    r = ks_two_sample([1, 2, 3], [1, 2, 3])
    assert (r.statistic, r.p_value) == (0.0, 1.0)
    assert ks_two_sample([1, 2], [3, 4]).statistic == 1.0
    assert ks_two_sample([1, 3], [2, 4]).statistic == 0.5


def test_ks_matches_scipy(gen):
    for _ in range(10):
        a, b = gen.normal(size=gen.integers(5, 80)), gen.normal(0.3, size=gen.integers(5, 80))
        ref = stats.ks_2samp(a, b, method="asymp")
        assert ks_two_sample(a, b).statistic == pytest.approx(ref.statistic, abs=1e-12)


@pytest.mark.parametrize("lam", [0.2, 0.5, 0.9, 1.0, 1.3, 2.5])
def test_kolmogorov_sf(lam):
    assert kolmogorov_sf(lam) == pytest.approx(special.kolmogorov(lam), abs=1e-10)


def test_mann_whitney_examples():
    assert mann_whitney_u([1, 2], [3, 4]).statistic == 0.0
    r = mann_whitney_u([1, 4], [2, 3])
    assert (r.statistic, r.p_value) == (2.0, 1.0)
    assert mann_whitney_u([5, 5], [5, 5]).p_value == 1.0


def test_mann_whitney_matches_scipy(gen):
    for _ in range(10):
        a = gen.integers(0, 10, size=gen.integers(3, 40)).astype(float)
        b = gen.integers(0, 12, size=gen.integers(3, 40)).astype(float)
        ref = stats.mannwhitneyu(a, b, use_continuity=False, method="asymptotic")
        r = mann_whitney_u(a, b)
        assert r.statistic == ref.statistic
        assert r.p_value == pytest.approx(ref.pvalue, rel=1e-9)


# distances and divergences

def test_mahalanobis_examples(gen):
    assert mahalanobis_distances([[2.0, 1.0]], [0, 0], np.diag([4.0, 1.0]))[0] == \
        pytest.approx(math.sqrt(2))
    q = gen.normal(size=(5, 3))
    assert np.allclose(mahalanobis_distances(q, np.zeros(3), np.eye(3)), np.linalg.norm(q, axis=1))
    assert mahalanobis_distances([[1.0, 2.0]], [1.0, 2.0], np.eye(2))[0] == 0.0


def test_mahalanobis_zero_covariance():
    with pytest.raises(ValueError):
        mahalanobis_mean_distance(np.ones((5, 2)), np.zeros((2, 2)))


def test_divergence_examples():
    same = histogram_divergences(pair([0.5, 0.5], [0.5, 0.5]))
    assert same == {"kl": 0.0, "js": 0.0, "bhattacharyya": 0.0}
    kl = histogram_divergences(pair([0.5, 0.5], [0.25, 0.75]))["kl"]
    assert kl == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3))
    apart = histogram_divergences(pair([1.0, 0.0], [0.0, 1.0]))
    assert isinstance(apart["kl"], Undefined) and not is_defined(apart["bhattacharyya"])
    assert apart["js"] == pytest.approx(math.log(2))


def test_histogram_pair_validation():
    with pytest.raises(ValueError):
        pair([0.6, 0.6], [0.5, 0.5])


def test_mean_divergences_disjoint(gen):
    out = mean_histogram_divergences(gen.normal(size=(50, 2)), 100 + gen.normal(size=(50, 2)))
    assert not is_defined(out["kl"])
    assert out["js"] == pytest.approx(math.log(2))


def test_wasserstein_examples(gen):
    assert wasserstein_1d([1, 2, 3], [1, 2, 3]) == 0.0
    assert wasserstein_1d([0, 1], [1, 2]) == 1.0
    for _ in range(5):
        a, b = gen.normal(size=gen.integers(2, 50)), gen.normal(1, 2, size=gen.integers(2, 50))
        assert wasserstein_1d(a, b) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-9)


# local outlier factor

def test_lof_triangle():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    assert lof_scores(tri, tri[:1], k=2)[0] == pytest.approx(1.0)


def test_lof_far_query(gen):
    cluster = gen.uniform(size=(100, 2))
    inside, far = lof_scores(cluster, [[0.5, 0.5], [10.0, 10.0]], k=10)
    assert far > 1.5 and far > inside


def test_lof_matches_oracle(gen):
    for _ in range(5):
        refs, q = gen.normal(size=(gen.integers(10, 60), 3)), gen.normal(size=(10, 3))
        k = int(gen.integers(1, 8))
        assert np.allclose(lof_scores(refs, q, k), oracles.lof(refs, q, k), rtol=1e-9, atol=0)


def test_lof_validation(gen):
    with pytest.raises(ValueError):
        lof_scores(gen.normal(size=(5, 2)), gen.normal(size=(2, 2)), k=5)


# isolation forest

def test_isolation_forest(gen):
    refs = gen.normal(size=(300, 3))
    q = np.array([[0.0, 0, 0], [100.0, 0, 0]])
    a = isolation_forest_scores(refs, q, n_trees=50, seed=3)
    assert np.array_equal(a, isolation_forest_scores(refs, q, n_trees=50, seed=3))
    assert a[1] > a[0]
    assert np.all((a > 0) & (a < 1))


def test_isolation_forest_degenerate_refs():
    s = isolation_forest_scores(np.ones((20, 2)), [[1.0, 1.0], [5.0, 5.0]], n_trees=10)
    assert s[0] == s[1]


# raw-feature baseline and battery

def test_raw_baseline(gen):
    refs, test_id = gen.normal(size=(200, 4)), gen.normal(size=(100, 4))
    far = raw_feature_baseline(refs, test_id, 3 + gen.normal(size=(100, 4)), "kde")
    assert far.auroc >= 0.99
    assert far.to_dict()["spaces"] == ["raw"]
    null = raw_feature_baseline(refs, test_id, gen.normal(size=(100, 4)), "kde")
    assert abs(null.auroc - 0.5) <= 0.1


def test_battery_on_identical_samples(gen):
    x = gen.normal(size=(80, 3))
    rows = {m: (s, p) for m, s, p, _ in battery(x, x, n_trees=20)}
    assert rows["z_score"] == (0.0, 1.0)
    assert rows["ks"] == (0.0, 1.0)
    assert rows["mann_whitney"] == (80 * 80 * 3 * 3 / 2, 1.0)
    for m in ("jsd", "kld", "bhattacharyya", "wasserstein"):
        assert rows[m][0] == pytest.approx(0.0, abs=1e-12)


finite = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30)


@given(finite, finite)
def test_test_statistics_in_range(a, b):
    for r in (ks_two_sample(a, b), mann_whitney_u(a, b)):
        assert 0.0 <= r.p_value <= 1.0
    assert 0.0 <= ks_two_sample(a, b).statistic <= 1.0
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_1d(b, a))


@given(st.lists(st.floats(0, 10), min_size=4, max_size=4),
       st.lists(st.floats(0, 10), min_size=4, max_size=4))
def test_divergences_nonnegative(p, q):
    p, q = np.asarray(p) + 1e-3, np.asarray(q) + 1e-3
    out = histogram_divergences(pair(p / p.sum(), q / q.sum()))
    assert out["kl"] >= 0 and 0 <= out["js"] <= math.log(2) and out["bhattacharyya"] >= 0
