import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import assume, given
from hypothesis import strategies as st

from relana.catalog import PairStream
from relana.confidence import (
    ConfidenceReport,
    bernoulli_kl,
    bound_on_R,
    chernoff_lower_tail,
    filter_false_associations,
    invert_kl,
    kl_radius,
    null_mean,
    pair_confidence,
    tail_bound,
)
from relana.cooccur import CooccurrenceTable, accumulate, relatedness

probs = st.floats(0.0, 1.0, allow_nan=False)
open_probs = st.floats(1e-6, 1 - 1e-6)


def _random_table(seed, num_items=6, num_pairs=400):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(num_items * num_items)).reshape(num_items, num_items)
    np.fill_diagonal(w, 0)
    w /= w.sum()
    flat = rng.choice(num_items * num_items, num_pairs, p=w.ravel())
    return accumulate(PairStream(flat // num_items, flat % num_items), num_items)


@given(probs, probs)
def test_kl_is_nonnegative_and_zero_on_diagonal(a, b):
    v = bernoulli_kl(a, b)
    assert v >= 0
    assert bernoulli_kl(a, a) == 0


def test_kl_known_values():
    assert bernoulli_kl(0.5, 0.25) == pytest.approx(0.5 * np.log(2) + 0.5 * np.log(2 / 3))
    assert bernoulli_kl(0.0, 0.5) == pytest.approx(np.log(2))
    assert np.isinf(bernoulli_kl(0.5, 0.0))
    with pytest.raises(ValueError):
        bernoulli_kl(1.5, 0.5)


@given(open_probs, st.floats(1e-6, 2.0))
def test_inversion_lands_on_the_kl_boundary(mu, t):
    up = invert_kl(mu, t, "upper")
    lo = invert_kl(mu, t, "lower")
    assert lo <= mu <= up
    assert bernoulli_kl(mu, up) <= t + 1e-9
    assert bernoulli_kl(mu, lo) <= t + 1e-9
    # just outside the endpoints the KL ball is left (unless clamped at 0 or 1)
    if up < 1 - 1e-9:
        assert bernoulli_kl(mu, min(1.0, up + 1e-9)) > t - 1e-9
    if lo > 1e-9:
        assert bernoulli_kl(mu, max(0.0, lo - 1e-9)) > t - 1e-9


@given(open_probs, st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_inversion_widens_with_radius(mu, t1, t2):
    t1, t2 = sorted((t1, t2))
    assert invert_kl(mu, t2, "upper") >= invert_kl(mu, t1, "upper") - 1e-12
    assert invert_kl(mu, t2, "lower") <= invert_kl(mu, t1, "lower") + 1e-12


@given(st.floats(1e-8, 5.0))
def test_inversion_closed_form_at_zero(t):
    assert invert_kl(0.0, t, "upper") == pytest.approx(1 - np.exp(-t), abs=1e-10)
    assert invert_kl(0.0, t, "lower") == 0.0


def test_inversion_vectorizes():
    mu = np.array([0.0, 0.1, 0.5])
    out = invert_kl(mu, 0.05, "upper")
    assert out.shape == (3,)
    assert out[1] == pytest.approx(invert_kl(0.1, 0.05, "upper"))
    with pytest.raises(ValueError):
        invert_kl(0.1, -1.0)
    with pytest.raises(ValueError):
        invert_kl(0.1, 0.1, "sideways")


def test_kl_radius_semantics():
    assert kl_radius(0.1, 100, "significance") == pytest.approx(np.log(10) / 100)
    assert kl_radius(0.9, 100, "confidence") == pytest.approx(np.log(10) / 100)
    assert kl_radius(1.0, 100, "significance") == 0.0
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            kl_radius(bad, 100, "confidence")
    with pytest.raises(ValueError):
        kl_radius(0.5, 100, "percent")


def test_chernoff_tail_shape():
    eps = np.array([0.1, 0.3, 1.0, 3.0])
    b = chernoff_lower_tail(0.01, 1000, eps)
    assert np.all((b > 0) & (b <= 1))
    assert np.all(np.diff(b) < 0)
    assert chernoff_lower_tail(0.01, 10_000, 0.3) < chernoff_lower_tail(0.01, 1000, 0.3)
    with pytest.raises(ValueError):
        chernoff_lower_tail(0.01, 100, 0.0)


def test_tail_bound_uses_table_marginals():
    t = _random_table(0)
    mu = null_mean(t, 0, 1)
    assert mu == pytest.approx(t.item_counts[0] * t.context_counts[1] / t.n**2)
    assert tail_bound(t, 0, 1, 0.5) == pytest.approx(float(chernoff_lower_tail(mu, t.n, 0.5)))
    assert null_mean(t, 0, 1, slack=2.0) == pytest.approx(4 * mu)


@given(st.integers(0, 10_000))
def test_alpha_one_significance_keeps_exactly_positive_pairs(seed):
    t = _random_table(seed)
    est = relatedness(t)
    _, reports = filter_false_associations(t, 1.0, kind="significance")
    dropped = {(r.i, r.j) for r in reports}
    for i, j, v in zip(est.rows.tolist(), est.cols.tolist(), est.values.tolist()):
        if abs(v) > 1e-9:
            assert ((i, j) in dropped) == (v <= 0)


@given(st.integers(0, 10_000), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_higher_confidence_drops_more(seed, a1, a2):
    assume(abs(a1 - a2) > 1e-6)
    a1, a2 = sorted((a1, a2))
    t = _random_table(seed)
    _, r1 = filter_false_associations(t, a1)
    _, r2 = filter_false_associations(t, a2)
    assert {(r.i, r.j) for r in r1} <= {(r.i, r.j) for r in r2}


def test_filter_recomputes_marginals():
    t = _random_table(3)
    clean, reports = filter_false_associations(t, 0.5)
    assert clean.n == t.n - sum(t.count(r.i, r.j) for r in reports)
    np.testing.assert_array_equal(clean.item_counts, np.asarray(clean.pair_counts.sum(axis=1)).ravel())
    for r in reports:
        assert clean.count(r.i, r.j) == 0
        assert r.verdict == "drop" and r.bound_on_R <= 0


def test_lower_bound_covers_truth():
    # center-only table with known cell probabilities
    joint = np.array([[0.03, 0.27], [0.37, 0.33]])
    n = 20_000
    rng = np.random.default_rng(0)
    R = np.log(joint / np.outer(joint.sum(1), joint.sum(0)))
    hits = 0
    trials = 400
    for _ in range(trials):
        counts = rng.multinomial(n, joint.ravel()).reshape(2, 2)
        t = CooccurrenceTable(sp.csr_matrix(counts), "center-only")
        hits += bound_on_R(t, 0, 0, 0.1) <= R[0, 0]
    assert hits / trials >= 0.9


def test_strong_pair_has_positive_lower_bound():
    # n = 1e5, N_0 = N_1 = 1e4, N_01 = 4e3: relatedness log 4
    counts = np.array([[0, 4, 6], [4, 0, 6], [6, 6, 68]]) * 1000
    t = CooccurrenceTable(sp.csr_matrix(counts))
    assert relatedness(t).get(0, 1) == pytest.approx(np.log(4), rel=1e-12)
    lo = bound_on_R(t, 0, 1, 0.05, "lower")
    hi = bound_on_R(t, 0, 1, 0.05, "upper")
    assert 0 < lo < np.log(4) < hi


def test_pair_confidence_matches_scalar_bound():
    t = _random_table(7)
    q = pair_confidence(t, 0.2, kind="significance")
    k = 3
    i, j = int(q["rows"][k]), int(q["cols"][k])
    assert q["bound"][k] == pytest.approx(bound_on_R(t, i, j, 0.2), rel=1e-9, abs=1e-9)


def test_report_json_handles_infinite_bounds():
    r = ConfidenceReport(0, 1, 0.0, 0.1, 0.2, 0.0, float("-inf"), "drop")
    assert json.loads(json.dumps(r.to_json()))["bound_on_R"] == "-inf"
