import numpy as np
import pytest

from bam import infer
from bam.infer import InferConfig


@pytest.fixture(scope="module")
def rows():
    return infer.run_infer(InferConfig(seeds=(0, 1, 2)), master_seed=0)


def test_rate_bounds():
    theta = infer.sinusoid_rate(np.arange(500))
    assert theta.min() == pytest.approx(0.2)
    assert theta.max() == pytest.approx(0.8)
    np.testing.assert_allclose(theta[:100].mean(), 0.5, atol=1e-12)


def test_counts_are_one_draw_per_step():
    theta, counts = infer.simulate_counts(InferConfig(), 0, 3)
    assert counts.shape == theta.shape == (500,)
    assert counts.min() >= 0 and counts.max() <= 15
    again = infer.simulate_counts(InferConfig(), 0, 3)[1]
    np.testing.assert_array_equal(counts, again)


def test_rows_cover_every_method_and_step(rows):
    cfg = InferConfig(seeds=(0, 1, 2))
    assert cfg.methods() == ["recursive", "bocd", "bf", "bam_lam0", "bam_lam0.1"]
    assert len(rows) == 3 * 500 * len(cfg.methods())
    assert {r["method"] for r in rows} == set(cfg.methods())
    for r in rows:
        assert 0.0 < r["mean"] < 1.0 and np.isfinite(r["log_variance"])
        if r["method"] != "bocd":
            assert r["mixture_mean"] == r["mean"] and r["changepoint"] == 0


def test_recursive_converges_to_average_rate(rows):
    finals = [r["mean"] for r in rows if r["method"] == "recursive" and r["t"] == 499]
    assert abs(np.median(finals) - 0.5) < 0.05


def test_recursive_has_lowest_final_variance(rows):
    cfg = InferConfig(seeds=(0, 1, 2))
    rb = infer.final_log_variance(rows, "recursive")
    for m in cfg.methods()[1:]:
        other = infer.final_log_variance(rows, m)
        assert all(rb[s] < other[s] for s in rb)


def test_bocd_mixture_mean_differs_from_map_point(rows):
    bocd = [r for r in rows if r["method"] == "bocd"]
    assert any(abs(r["mixture_mean"] - r["mean"]) > 1e-6 for r in bocd)
    assert any(r["changepoint"] for r in bocd)


def test_post_changepoint_variances_align(rows):
    bam, bocd = infer.post_changepoint_variances(rows, "bam_lam0")
    assert bam.shape == bocd.shape and bam.size > 0


def test_config_validation():
    with pytest.raises(ValueError):
        InferConfig(seeds=())
    with pytest.raises(ValueError):
        InferConfig(bf_alpha=1.5)
    with pytest.raises(ValueError):
        InferConfig(bocd_hazard=0.0)
    with pytest.raises(ValueError):
        InferConfig(steps=0)


def test_regularized_bam_is_smoother():
    rows = infer.run_infer(InferConfig(), master_seed=0)
    smooth = np.median(infer.step_changes(rows, "bam_lam0.1"))
    rough = np.median(infer.step_changes(rows, "bam_lam0"))
    assert smooth < rough, (smooth, rough)
