import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from relana.catalog import InteractionLog, PairStream, SyntheticSpec, generate_synthetic, sequence_pairs
from relana.cooccur import (
    CooccurrenceTable,
    accumulate,
    accumulate_sharded,
    merge,
    minus_log_k,
    relatedness,
    relatedness_histogram,
)

pair_lists = st.lists(
    st.tuples(st.integers(0, 7), st.integers(0, 7)).filter(lambda p: p[0] != p[1]),
    min_size=1,
    max_size=60,
)


def _stream(pairs):
    c, x = zip(*pairs)
    return PairStream(np.array(c), np.array(x))


def _center_only(entries, m=3):
    rows, cols, vals = zip(*[(i, j, v) for (i, j), v in entries.items()])
    return CooccurrenceTable(sp.csr_matrix((vals, (rows, cols)), shape=(m, m)), "center-only")


def test_independent_counts_give_zero():
    t = _center_only({(0, 1): 2, (0, 2): 8, (2, 1): 18, (2, 0): 72})
    assert (t.n, t.item_counts[0], t.context_counts[1]) == (100, 10, 20)
    assert relatedness(t).get(0, 1) == pytest.approx(0.0, abs=1e-15)


def test_doubled_counts_give_log_two():
    t = _center_only({(0, 1): 4, (0, 2): 6, (2, 1): 16, (2, 0): 74})
    assert (t.n, t.item_counts[0], t.context_counts[1]) == (100, 10, 20)
    assert relatedness(t).get(0, 1) == pytest.approx(np.log(2), abs=1e-12)


def test_never_cooccurring_pair_is_missing():
    t = accumulate(_stream([(0, 1), (1, 2)]), 4)
    est = relatedness(t)
    assert est.get(0, 2) is None
    assert est.missing_mask()[0, 2]
    assert relatedness(t, clip_negative=True).get(0, 2) is None


@given(pair_lists)
def test_both_roles_marginals_sum_to_n(pairs):
    t = accumulate(_stream(pairs), 8)
    assert t.symmetric
    assert t.n == 2 * len(pairs)
    assert t.pair_counts.sum() == t.item_counts.sum() == t.context_counts.sum() == t.n
    np.testing.assert_array_equal(t.item_counts, t.context_counts)


@given(pair_lists)
def test_center_only_marginals(pairs):
    t = accumulate(_stream(pairs), 8, "center-only")
    assert t.n == len(pairs)
    assert t.item_counts.sum() == t.context_counts.sum() == t.n
    c = np.bincount([p[0] for p in pairs], minlength=8)
    np.testing.assert_array_equal(t.item_counts, c)


@given(pair_lists, st.integers(1, 40))
def test_accumulation_is_order_and_split_invariant(pairs, cut):
    whole = accumulate(_stream(pairs), 8)
    rev = accumulate(_stream(pairs[::-1]), 8)
    assert whole.equals(rev)
    cut = min(cut, len(pairs) - 1)
    if cut > 0:
        parts = merge(accumulate(_stream(pairs[:cut]), 8), accumulate(_stream(pairs[cut:]), 8))
        assert whole.equals(parts)


@given(pair_lists, st.integers(1, 5), st.integers(1, 8))
def test_sharded_accumulation_matches(pairs, shards, threads):
    s = _stream(pairs)
    assert accumulate_sharded(s, 8, num_shards=shards, threads=threads).equals(accumulate(s, 8))


@given(pair_lists, st.floats(-3, 3))
def test_shift_is_additive(pairs, shift):
    t = accumulate(_stream(pairs), 8)
    np.testing.assert_allclose(relatedness(t, shift).values, relatedness(t).values + shift, atol=1e-12)


@given(pair_lists)
def test_clip_keeps_support(pairs):
    t = accumulate(_stream(pairs), 8)
    raw, clip = relatedness(t), relatedness(t, clip_negative=True)
    np.testing.assert_array_equal(raw.observed_mask(), clip.observed_mask())
    assert np.all(clip.values >= 0)
    np.testing.assert_allclose(clip.values, np.maximum(raw.values, 0))


def test_independent_items_center_on_zero():
    # centers from {0,1,2} and contexts from {3,4,5}, drawn independently;
    # delta-method variance of the log ratio is (1/p_ij - 1/a_i - 1/b_j + 1)/m
    a = np.array([0.2, 0.3, 0.5])
    b = np.array([0.5, 0.25, 0.25])
    m = 20_000
    z = []
    for seed in range(60):
        rng = np.random.default_rng(seed)
        c = rng.choice(3, m, p=a)
        x = 3 + rng.choice(3, m, p=b)
        est = relatedness(accumulate(PairStream(c, x), 6, "center-only"))
        i, j = est.rows, est.cols - 3
        var = (1 / (a[i] * b[j]) - 1 / a[i] - 1 / b[j] + 1) / m
        z.append(est.values / np.sqrt(var))
    z = np.abs(np.concatenate(z))
    assert len(z) == 60 * 9
    assert np.mean(z < 3) >= 0.99
    assert np.all(z < 5)


def test_relatedness_on_synthetic_is_positive_within_class():
    c = generate_synthetic(SyntheticSpec(num_items=8, num_classes=2, within_prob=0.9, cross_prob=0.1, num_records=20000))
    t = accumulate(sequence_pairs(c.log, window=1), 8)
    R = relatedness(t).to_dense(np.nan)
    same = c.classes[:, None] == c.classes[None, :]
    off = ~np.eye(8, dtype=bool)
    assert np.all(R[same & off] > 0) and np.all(R[~same] < 0)


def test_minus_log_k():
    assert minus_log_k(1) == 0.0
    assert minus_log_k(5) == pytest.approx(-np.log(5))


def test_histogram_reports_negative_share():
    t = _center_only({(0, 1): 4, (0, 2): 6, (2, 1): 16, (2, 0): 74})
    h = relatedness_histogram(relatedness(t), bins=10)
    assert h["counts"].sum() == 4
    assert 0 <= h["negative_fraction"] <= 1


def test_table_validation():
    with pytest.raises(IndexError):
        accumulate(_stream([(0, 9)]), 4)
    with pytest.raises(ValueError):
        accumulate(_stream([(0, 1)]), 4, "rows-only")
    with pytest.raises(ValueError):
        merge(CooccurrenceTable.empty(3), CooccurrenceTable.empty(3, "center-only"))
    with pytest.raises(ValueError):
        merge(CooccurrenceTable.empty(3), CooccurrenceTable.empty(4))
    with pytest.raises(ValueError):
        relatedness(CooccurrenceTable.empty(3))
    with pytest.raises(ValueError):
        CooccurrenceTable(sp.csr_matrix(np.array([[0, -1], [0, 0]])))


def test_window_pairs_feed_both_roles():
    log = InteractionLog(np.zeros(3, int), np.zeros(3, int), np.array([0, 1, 2]), np.arange(3), 3)
    t = accumulate(sequence_pairs(log, window=2), 3)
    assert t.count(0, 1) == t.count(1, 0) == 1
    assert t.n == 6
