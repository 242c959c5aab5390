import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bam import conjugate as cj
from bam.memory import (BufferFullError, MemoryBuffer, ReadoutWeights, SelectionConfig, bam_prior,
                        bam_step, select, select_bottom_up, select_exhaustive, select_parallel,
                        weight_score)

from conftest import assert_beliefs_close, random_base, random_stats


def make_buffer(batches):
    buf = MemoryBuffer()
    for b in batches:
        buf.append(b)
    return buf


def oracle_score(base, batches, subset, target, lam):
    prior = base
    if subset:
        prior = base.update(sum((batches[i] for i in subset[1:]), batches[subset[0]]))
    score = prior.log_marginal(target)
    return score - lam * math.sqrt(2 * prior.kl(base)) if lam else score


def oracle_greedy(base, batches, target, lam):
    chosen, best = [], oracle_score(base, batches, [], target, lam)
    while True:
        cands = [(oracle_score(base, batches, chosen + [i], target, lam), i)
                 for i in range(len(batches)) if i not in chosen]
        if not cands:
            return set(chosen), best
        score, i = max(cands, key=lambda c: (c[0], -c[1]))
        if score <= best + 1e-12:
            return set(chosen), best
        chosen.append(i)
        best = score


def oracle_exhaustive(base, batches, target, lam):
    best, best_set = -math.inf, ()
    for size in range(len(batches) + 1):
        for ids in itertools.combinations(range(len(batches)), size):
            s = oracle_score(base, batches, list(ids), target, lam)
            if s > best:
                best, best_set = s, ids
    return set(best_set), best


# --- buffer and weights ------------------------------------------------------


def test_buffer_ids_and_family_checks():
    buf = MemoryBuffer()
    assert buf.append(cj.gaussian_stats([1.0])) == 0
    assert buf.append(cj.gaussian_stats([2.0])) == 1
    assert list(buf.ids) == [0, 1]
    with pytest.raises(ValueError, match="family"):
        buf.append(cj.binomial_stats(1, 2))
    with pytest.raises(ValueError, match="family"):
        bam_prior(cj.BetaBelief(), buf, ReadoutWeights.all(buf))


def test_buffer_capacity_refuses_instead_of_evicting():
    buf = MemoryBuffer(capacity=2)
    buf.append(cj.gaussian_stats([1.0]))
    buf.append(cj.gaussian_stats([2.0]))
    with pytest.raises(BufferFullError):
        buf.append(cj.gaussian_stats([3.0]))
    assert len(buf) == 2


def test_readout_weights_validation():
    w = ReadoutWeights.from_dense([1, 0, 1])
    assert w.selected == {0, 2}
    np.testing.assert_array_equal(w.dense(), [1, 0, 1])
    with pytest.raises(ValueError):
        ReadoutWeights.from_dense([0.5, 1])
    with pytest.raises(ValueError):
        ReadoutWeights(frozenset({3}), 2)


# --- prior construction ---------------------------------------------------------


def test_bam_prior_reductions(rng):
    base = cj.GaussianBelief(0.0, 2.0, 0.5)
    batches = [random_stats("gaussian", rng) for _ in range(5)]
    buf = make_buffer(batches)
    assert bam_prior(base, buf, ReadoutWeights.none(buf)) == base
    recursive = base
    for b in batches:
        recursive = recursive.update(b)
    assert_beliefs_close(bam_prior(base, buf, ReadoutWeights.all(buf)), recursive)


def _raw_posterior(family, base, raw):
    """Posterior computed from the pooled raw observations with textbook formulas."""
    if family == "binomial":
        k = sum(r[0] for r in raw)
        n = sum(r[1] for r in raw)
        return cj.BetaBelief(base.alpha + k, base.beta + n - k)
    if family == "gaussian":
        y = np.concatenate(raw) if raw else np.zeros(0)
        prec = 1 / base.variance + y.size / base.noise_variance
        return cj.GaussianBelief((base.mean / base.variance + y.sum() / base.noise_variance) / prec,
                                 1 / prec, base.noise_variance)
    phi = np.vstack([r[0] for r in raw]) if raw else np.zeros((0, base.d_feat))
    y = np.vstack([r[1] for r in raw]) if raw else np.zeros((0, base.d_out))
    prec = base.precision + phi.T @ phi / base.noise_variance
    mean = np.linalg.solve(prec, base.precision @ base.mean.T + phi.T @ y / base.noise_variance).T
    return cj.RegressionBelief(mean, prec, base.noise_variance)


def _raw_batch(family, rng):
    if family == "binomial":
        n = int(rng.integers(1, 20))
        return (int(rng.integers(0, n + 1)), n)
    if family == "gaussian":
        return rng.normal(size=int(rng.integers(1, 5)))
    rows = int(rng.integers(1, 6))
    return (rng.normal(size=(rows, 3)), rng.normal(size=(rows, 2)))


def _summarise(family, raw):
    if family == "binomial":
        return cj.binomial_stats(*raw)
    if family == "gaussian":
        return cj.gaussian_stats(raw)
    return cj.regression_stats(*raw)


@pytest.mark.parametrize("family", ("binomial", "gaussian", "regression"))
def test_bam_prior_equals_from_scratch_posterior(family, rng):
    for _ in range(500 // 3 + 1):
        base = random_base(family, rng)
        raw = [_raw_batch(family, rng) for _ in range(int(rng.integers(1, 8)))]
        buf = make_buffer([_summarise(family, r) for r in raw])
        w = ReadoutWeights.from_dense(rng.integers(0, 2, size=len(raw)))
        oracle = _raw_posterior(family, base, [raw[i] for i in sorted(w.selected)])
        assert_beliefs_close(bam_prior(base, buf, w), oracle, rtol=1e-10, atol=1e-12)


def test_prior_variance_dominance_exhaustive(rng):
    # every subset prior is at least as wide as the all-ones prior
    for _ in range(20):
        base = random_base("gaussian", rng)
        buf = make_buffer([random_stats("gaussian", rng) for _ in range(10)])
        floor = bam_prior(base, buf, ReadoutWeights.all(buf)).variance
        for bits in itertools.product((0, 1), repeat=10):
            assert bam_prior(base, buf, ReadoutWeights.from_dense(bits)).variance >= floor


# --- scores -------------------------------------------------------------------------


def test_weight_score_examples(rng):
    base = cj.GaussianBelief(0.0, 1.0, 0.5)
    buf = make_buffer([random_stats("gaussian", rng) for _ in range(4)])
    target = random_stats("gaussian", rng)
    w = ReadoutWeights.from_dense([1, 0, 1, 1])
    prior = bam_prior(base, buf, w)
    assert weight_score(base, buf, w, target, 0.0) == prior.log_marginal(target)
    empty = ReadoutWeights.none(buf)
    assert weight_score(base, buf, empty, target, 0.7) == base.log_marginal(target)
    with pytest.raises(ValueError):
        weight_score(base, buf, w, target, -1.0)


# --- selection strategies --------------------------------------------------------


def test_empty_buffer_selects_nothing(rng):
    target = random_stats("gaussian", rng)
    for strategy in ("bottom_up", "parallel", "exhaustive"):
        sel = select(cj.GaussianBelief(), MemoryBuffer(), target, SelectionConfig(strategy=strategy))
        assert len(sel.weights) == 0


def test_bottom_up_picks_matching_binomial_batches():
    rng = np.random.default_rng(3)
    base = cj.BetaBelief(1, 1)
    batches = [cj.binomial_stats(rng.binomial(15, th), 15) for th in (0.2, 0.8, 0.2, 0.8, 0.2, 0.8)]
    buf = make_buffer(batches)
    target = cj.binomial_stats(rng.binomial(100, 0.8), 100)
    sel = select_bottom_up(base, buf, target)
    assert sel.selected == {1, 3, 5}
    assert oracle_exhaustive(base, batches, target, 0.0)[0] == {1, 3, 5}
    # the evidence agrees with scipy's beta-binomial
    prior = bam_prior(base, buf, sel)
    assert prior.log_marginal(target) == pytest.approx(
        stats.betabinom.logpmf(target.successes, 100, prior.alpha, prior.beta), abs=1e-10)


@pytest.mark.parametrize("family,lam", [("binomial", 0.0), ("gaussian", 0.0), ("gaussian", 0.5),
                                        ("binomial", 0.2), ("regression", 0.0)])
def test_bottom_up_matches_oracle_greedy(family, lam, rng):
    for _ in range(25):
        base = random_base(family, rng)
        batches = [random_stats(family, rng) for _ in range(7)]
        target = random_stats(family, rng)
        sel = select(base, make_buffer(batches), target, SelectionConfig(lam=lam))
        chosen, score = oracle_greedy(base, batches, target, lam)
        assert sel.weights.selected == chosen
        assert sel.score == pytest.approx(score, abs=1e-9)


def test_greedy_sandwich(rng):
    # instances cycle through the three families
    hits = 0
    for k in range(100):
        family = ("binomial", "gaussian", "regression")[k % 3]
        base = random_base(family, rng)
        batches = [random_stats(family, rng) for _ in range(10)]
        target = random_stats(family, rng)
        buf = make_buffer(batches)
        greedy = select(base, buf, target)
        full = select(base, buf, target, SelectionConfig(strategy="exhaustive"))
        empty = base.log_marginal(target)
        assert empty <= greedy.score <= full.score + 1e-9
        hits += abs(greedy.score - full.score) <= 1e-9
    assert hits >= 60


def test_exhaustive_matches_brute_force_and_tie_breaks(rng):
    for family in ("binomial", "gaussian"):
        for _ in range(10):
            base = random_base(family, rng)
            batches = [random_stats(family, rng) for _ in range(6)]
            target = random_stats(family, rng)
            w = select_exhaustive(base, make_buffer(batches), target)
            assert w.selected == oracle_exhaustive(base, batches, target, 0.0)[0]
    # identical batches tie; the smallest, lexicographically first subset wins
    base = cj.GaussianBelief(0.0, 1.0, 1.0)
    same = [cj.gaussian_stats([0.2])] * 3
    w = select_exhaustive(base, make_buffer(same), cj.gaussian_stats([0.2, 0.2]))
    assert w.selected in ({0}, {0, 1}, {0, 1, 2})
    assert min(w.selected) == 0


def test_exhaustive_small_buffers():
    base = cj.GaussianBelief(0.0, 1.0, 1.0)
    near, far = cj.gaussian_stats([1.0]), cj.gaussian_stats([-8.0])
    target = cj.gaussian_stats([1.0, 1.2])
    assert select_exhaustive(base, make_buffer([near]), target).selected == {0}
    assert select_exhaustive(base, make_buffer([far]), target).selected == set()
    with pytest.raises(ValueError, match="max_exhaustive"):
        select_exhaustive(base, make_buffer([near] * 4), target, SelectionConfig(max_exhaustive=3))


def test_parallel_examples():
    base = cj.GaussianBelief(0.0, 1.0, 0.1)
    far = make_buffer([cj.gaussian_stats([6.0 + i, 6.5 + i]) for i in range(4)])
    target = cj.gaussian_stats([-1.0, -1.1, -0.9])
    for i, s in far:
        assert base.update(s).log_marginal(target) < base.log_marginal(target)
    assert select_parallel(base, far, target).selected == set()

    mixed = make_buffer([cj.gaussian_stats(v) for v in ([-1.0], [-0.8], [-1.3], [5.0])])
    survivors = select_parallel(base, mixed, target, SelectionConfig(strategy="parallel",
                                                                     quantile_q=0.0))
    assert survivors.selected == {0, 1, 2}
    top = select_parallel(base, mixed, target, SelectionConfig(strategy="parallel", quantile_q=1.0))
    assert len(top.selected) == 1

    single = make_buffer([cj.gaussian_stats([-1.0, -1.0])])
    assert select_parallel(base, single, target).selected == {0}


def test_parallel_scores_each_batch_against_the_base(rng):
    # oracle: per-batch score vs the base score, then a linear-interpolation quantile
    for _ in range(20):
        base = random_base("binomial", rng)
        batches = [random_stats("binomial", rng) for _ in range(9)]
        target = random_stats("binomial", rng)
        lam, q = 0.1, 0.4
        scores = np.array([oracle_score(base, batches, [i], target, lam) for i in range(9)])
        base_score = oracle_score(base, batches, [], target, lam)
        keep = scores > base_score
        want = set()
        if keep.any():
            cut = np.quantile(scores[keep], q)
            want = set(np.flatnonzero(keep & (scores >= cut)).tolist())
        got = select_parallel(base, make_buffer(batches), target,
                              SelectionConfig(lam=lam, strategy="parallel", quantile_q=q))
        assert got.selected == want


def test_nearest_sum_fast_path_matches_generic_greedy():
    # buffers of equal-size Gaussian batches above the fast-path threshold
    rng = np.random.default_rng(8)
    for trial in range(15):
        base = cj.GaussianBelief(rng.normal(), rng.uniform(0.01, 1.0), 0.0625)
        values = rng.choice([0.1, 0.5, 0.9], size=60) + rng.normal(0, 0.25, size=60)
        batches = [cj.gaussian_stats([v]) for v in values]
        target = cj.gaussian_stats([rng.choice([0.1, 0.5, 0.9]) + rng.normal(0, 0.25)])
        sel = select(base, make_buffer(batches), target)
        chosen, score = oracle_greedy(base, batches, target, 0.0)
        assert sel.score == pytest.approx(score, abs=1e-9)
        assert sel.weights.selected == chosen


def test_selection_is_deterministic(rng):
    base = random_base("binomial", rng)
    batches = [random_stats("binomial", rng) for _ in range(12)]
    target = random_stats("binomial", rng)
    a = select(base, make_buffer(batches), target, SelectionConfig(lam=0.1))
    b = select(base, make_buffer(batches), target, SelectionConfig(lam=0.1))
    assert a == b
    payload = json.loads(a.to_json())
    assert payload["selected"] == sorted(a.weights.selected)
    assert payload["lambda"] == 0.1


def test_selection_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(lam=-0.1)
    with pytest.raises(ValueError):
        SelectionConfig(strategy="top_down")
    with pytest.raises(ValueError):
        SelectionConfig(quantile_q=1.5)


# --- one step -----------------------------------------------------------------------


def test_bam_step_first_and_forced_weights(rng):
    base = cj.GaussianBelief(0.0, 1.0, 0.5)
    buf = MemoryBuffer()
    first = random_stats("gaussian", rng)
    w, post, _ = bam_step(base, buf, first)
    assert len(w) == 0 and len(buf) == 1
    assert_beliefs_close(post, base.update(first))

    recursive = base.update(first)
    for _ in range(5):
        batch = random_stats("gaussian", rng)
        recursive = recursive.update(batch)
        _, post, _ = bam_step(base, buf, batch, weights=ReadoutWeights.all(buf))
        assert_beliefs_close(post, recursive, rtol=1e-12)


def test_bam_step_append_flag(rng):
    buf = MemoryBuffer()
    bam_step(cj.BetaBelief(), buf, random_stats("binomial", rng), append=False)
    assert len(buf) == 0


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=10), st.floats(0.0, 2.0))
@settings(max_examples=60, deadline=None)
def test_greedy_never_worse_than_forgetting(values, lam):
    base = cj.GaussianBelief(0.0, 1.0, 0.5)
    buf = make_buffer([cj.gaussian_stats([v]) for v in values[:-1]])
    target = cj.gaussian_stats([values[-1]])
    sel = select(base, buf, target, SelectionConfig(lam=lam))
    assert sel.score >= weight_score(base, buf, ReadoutWeights.none(buf), target, lam)
    assert sel.score == pytest.approx(weight_score(base, buf, sel.weights, target, lam), abs=1e-9)
