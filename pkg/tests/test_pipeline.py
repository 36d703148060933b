import numpy as np
import pytest

from forte import PipelineConfig, run_forte, run_forte_arrays
from forte.pipeline import (
    load_config,
    parse_seeds,
    reference_features,
    run_forte_sweep,
    run_forte_sweep_arrays,
)
from forte.prdc import PrdcConfig, prdc
from forte.store import rng, save_binary, split_indices

SEEDS = tuple(range(10))


@pytest.fixture(scope="module")
def separable():
    g = rng(0)
    return (g.standard_normal((600, 16)), 3.0 + g.standard_normal((200, 16)),
            g.standard_normal((200, 16)))


@pytest.fixture(scope="module")
def small():
    g = rng(1)
    return g.standard_normal((90, 4)), 2.0 + g.standard_normal((40, 4))


def test_reference_features_use_the_split(small):
    x, _ = small
    cfg = PrdcConfig(3)
    fit, held, refs = reference_features([x], 4, cfg)
    h, r, t = split_indices(len(x), 4)
    assert np.array_equal(refs[0], x[r])
    assert np.array_equal(fit.values, prdc(x[t], x[r], cfg))
    assert np.array_equal(held.values, prdc(x[h], x[r], cfg))


def test_ood_never_enters_the_model(small):
    x, ood = small
    cfg = PipelineConfig(PrdcConfig(3), "gmm", seeds=(0, 1))
    a = run_forte_arrays([x], [ood], cfg, keep_scores=True)
    b = run_forte_arrays([x], [ood + 5.0], cfg, keep_scores=True)
    for ra, rb in zip(a.seed_results, b.seed_results):
        assert np.array_equal(ra.model.means, rb.model.means)
        assert np.array_equal(ra.scores_id, rb.scores_id)


@pytest.mark.parametrize("estimator", ["gmm", "kde", "ocsvm"])
def test_deterministic_and_thread_independent(small, estimator):
    x, ood = small
    cfg = PipelineConfig(PrdcConfig(3), estimator, seeds=(0, 1, 2))
    one = run_forte_arrays([x], [ood], cfg).to_dict()
    again = run_forte_arrays([x], [ood], cfg).to_dict()
    threaded = run_forte_arrays([x], [ood], PipelineConfig(PrdcConfig(3), estimator,
                                                           seeds=(0, 1, 2), threads=3)).to_dict()
    assert one == again == threaded


def test_report_records_configuration(small):
    x, ood = small
    d = run_forte_arrays([x], [ood], PipelineConfig(PrdcConfig(3, "from_reference"), "kde",
                                                    seeds=(2, 0))).to_dict()
    assert d["seeds"] == [0, 2]
    assert (d["k"], d["radius_source"], d["estimator"]) == (3, "from_reference", "kde")
    assert d["estimator_params"] == {"bandwidth": "scott"}
    assert d["n_id"] == 30 and d["n_ood"] == 40


def test_infeasible_k(small):
    x, ood = small
    with pytest.raises(ValueError, match="infeasible"):
        run_forte_arrays([x], [ood], PipelineConfig(PrdcConfig(30)))
    with pytest.raises(ValueError, match="infeasible"):
        run_forte_arrays([x], [ood[:3]], PipelineConfig(PrdcConfig(3)))


def test_space_validation(small):
    x, ood = small
    with pytest.raises(ValueError):
        run_forte_arrays([x], [ood[:, :3]])
    with pytest.raises(ValueError):
        run_forte_arrays([x, x[:50]], [ood, ood])
    with pytest.raises(ValueError):
        PipelineConfig(estimator="forest")


def test_null_control(separable):
    x, _, null = separable
    for est in ("gmm", "kde", "ocsvm"):
        r = run_forte_arrays([x], [null], PipelineConfig(PrdcConfig(5), est, seeds=SEEDS))
        assert 0.4 <= r.auroc <= 0.6


def test_duplicated_space_adds_nothing(separable):
    x, ood, _ = separable
    for est in ("gmm", "kde", "ocsvm"):
        cfg = PipelineConfig(PrdcConfig(5), est, seeds=SEEDS)
        one = run_forte_arrays([x], [ood], cfg).auroc
        two = run_forte_arrays([x, x], [ood, ood], cfg).auroc
        assert abs(one - two) <= 0.02


def test_separable_far_above_chance(separable):
    x, ood, _ = separable
    for est in ("gmm", "kde", "ocsvm"):
        r = run_forte_arrays([x], [ood], PipelineConfig(PrdcConfig(5), est, seeds=SEEDS))
        assert np.median([a for _, a, _ in r.per_seed]) >= 0.95


@pytest.mark.xfail(strict=True, reason="a GMM component collapses onto the all-zero PRDC "
                   "vector shared by OOD points; see the decision ledger")
def test_separable_gmm_reaches_099(separable):
    x, ood, _ = separable
    r = run_forte_arrays([x], [ood], PipelineConfig(PrdcConfig(5), "gmm", seeds=SEEDS))
    assert r.auroc >= 0.99 and r.fpr95 <= 0.01


@pytest.mark.xfail(strict=True, reason="k=3 and k=5 fall short for the same reason")
def test_separable_gmm_k_sweep(separable):
    x, ood, _ = separable
    reports = run_forte_sweep_arrays([x], [ood], PipelineConfig(seeds=SEEDS), [3, 5, 10], ["gmm"])
    assert all(r.auroc >= 0.99 for r in reports)


def test_sweep_order_and_params(small):
    x, ood = small
    reports = run_forte_sweep_arrays([x], [ood], PipelineConfig(seeds=(0,)), [2, 3],
                                     ["kde", "gmm"], {"gmm": {"n_components": 2}})
    assert [(r.meta["k"], r.meta["estimator"]) for r in reports] == \
        [(2, "kde"), (2, "gmm"), (3, "kde"), (3, "gmm")]
    assert reports[1].meta["estimator_params"]["n_components"] == 2


def test_parse_seeds():
    assert parse_seeds("0-3") == [0, 1, 2, 3]
    assert parse_seeds("5, 1,2") == [5, 1, 2]
    for bad in ("", "3-1", "-1"):
        with pytest.raises(ValueError):
            parse_seeds(bad)


def test_config_file_and_file_runner(tmp_path, small):
    x, ood = small
    save_binary(x, tmp_path / "id.frte")
    save_binary(ood, tmp_path / "ood.frte")
    (tmp_path / "run.cfg").write_text(
        "id = id.frte\nood = ood.frte\nk = 2, 3  # sweep\nestimator = kde, gmm\n"
        "seeds = 0-1\nradius_source = from_reference\ngmm.n_components = 2\n")
    cfg, ks, ests, params = load_config(tmp_path / "run.cfg")
    assert ks == [2, 3] and ests == ["kde", "gmm"]
    assert params["gmm"] == {"n_components": 2}
    assert cfg.seeds == (0, 1) and cfg.prdc.radius_source.value == "from_reference"
    assert cfg.id_paths == (str(tmp_path / "id.frte"),)
    reports = run_forte_sweep(cfg, ks, ests, params)
    assert len(reports) == 4 and reports[0].meta["spaces"] == ["id"]
    single = run_forte(cfg)
    assert single.meta["estimator"] == "kde"


def test_config_rejects_unknown_prefix(tmp_path):
    (tmp_path / "bad.cfg").write_text("id = a\nood = b\nforest.depth = 3\n")
    with pytest.raises(ValueError):
        load_config(tmp_path / "bad.cfg")
