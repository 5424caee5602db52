import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relana.catalog import (
    BasketModel,
    DataError,
    InteractionLog,
    PairStream,
    SyntheticSpec,
    Vocabulary,
    WeightedGraph,
    basket_pairs,
    build_session_graph,
    factor_grid_model,
    generate_synthetic,
    ingest_transactions,
    make_log,
    random_walk_pairs,
    sequence_pairs,
    split_sessions_by_gap,
    transition_probabilities,
)
from relana.cooccur import accumulate, relatedness


def _log(seqs, num_items=None, sessions=None):
    user = np.concatenate([[u] * len(s) for u, s in enumerate(seqs)])
    item = np.concatenate([np.asarray(s) for s in seqs])
    pos = np.concatenate([np.arange(len(s)) for s in seqs])
    sess = user if sessions is None else np.concatenate(sessions)
    return InteractionLog(user, sess, item, pos, num_items or int(item.max()) + 1)


# --------------------------------------------------------------------------
# vocabulary and ingestion
# --------------------------------------------------------------------------


def test_vocabulary_roundtrip():
    v = Vocabulary(["x", "y", "z"], [1, 2, 3])
    assert v.decode(v.encode(["z", "x"])) == ["z", "x"]
    assert len(v) == 3


def test_vocabulary_rejects_duplicates_and_negative_counts():
    with pytest.raises(DataError):
        Vocabulary(["a", "a"])
    with pytest.raises(DataError):
        Vocabulary(["a", "b"], [1, -1])


def test_ingest_three_rows(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text("order_id,user_id,product_id,add_to_cart_order\n1,u,a,1\n1,u,b,2\n1,u,c,3\n")
    vocab, log = ingest_transactions(p)
    assert len(vocab) == 3
    assert vocab.decode(log.item) == ["a", "b", "c"]
    assert log.position.tolist() == [1, 2, 3]


def test_ingest_orders_records_per_user(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text(
        "order_id,user_id,product_id,add_to_cart_order\n"
        "2,u1,c,2\n1,u2,a,1\n2,u1,b,1\n3,u1,d,1\n"
    )
    vocab, log = ingest_transactions(p)
    assert vocab.decode(log.item[log.user == 0]) == ["b", "c", "d"]
    assert vocab.decode(log.item[log.user == 1]) == ["a"]
    assert vocab.frequency.tolist() == [1, 1, 1, 1]


def test_ingest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_transactions(tmp_path / "missing.csv")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="no records"):
        ingest_transactions(empty)
    header_only = tmp_path / "h.csv"
    header_only.write_text("order_id,user_id,product_id,add_to_cart_order\n")
    with pytest.raises(DataError, match="no records"):
        ingest_transactions(header_only)
    bad = tmp_path / "bad.csv"
    bad.write_text("order_id,user_id,product_id,add_to_cart_order\n1,u,a,1\n1,u,b,x\n")
    with pytest.raises(DataError, match="line 3"):
        ingest_transactions(bad)
    short = tmp_path / "short.csv"
    short.write_text("order_id,user_id,product_id,add_to_cart_order\n1,u\n")
    with pytest.raises(DataError, match="line 2"):
        ingest_transactions(short)
    with pytest.raises(DataError, match="unknown column"):
        ingest_transactions(bad, {"session": "o", "user": "user_id", "item": "product_id", "position": "add_to_cart_order"})


def test_ingest_min_frequency(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text("order_id,user_id,product_id,add_to_cart_order\n1,u,a,1\n1,u,b,2\n2,u,a,1\n")
    vocab, log = ingest_transactions(p, min_frequency=2)
    assert vocab.items == ["a"]
    assert len(log) == 2


def test_make_log_rejects_repeated_positions():
    with pytest.raises(DataError):
        make_log([0, 0], [0, 0], [0, 1], [1, 1], 2)


def test_split_sessions_by_gap():
    log = _log([[0, 1, 2, 3]])
    out = split_sessions_by_gap(log, np.array([0.0, 1.0, 10.0, 10.5]), max_gap=2.0)
    assert out.session.tolist() == [0, 0, 1, 1]


# --------------------------------------------------------------------------
# sequence windows
# --------------------------------------------------------------------------


def test_sequence_pairs_window_two():
    s = sequence_pairs(_log([[0, 1, 2]]), window=2)
    assert s.pairs() == [(1, 0), (2, 1), (2, 0)]
    assert s.provenance == "sequence-window"


def test_sequence_pairs_single_item_is_empty():
    assert len(sequence_pairs(_log([[4]], num_items=5), window=3)) == 0


def test_sequence_pairs_suppresses_self_pairs():
    s = sequence_pairs(_log([[0, 0, 1]]), window=1)
    assert s.pairs() == [(1, 0)]
    assert s.suppressed == 1


def test_sequence_pairs_symmetric_option():
    s = sequence_pairs(_log([[0, 1]]), window=1, symmetric=True)
    assert s.pairs() == [(1, 0), (0, 1)]


def test_sequence_pairs_rejects_bad_window():
    with pytest.raises(ValueError):
        sequence_pairs(_log([[0, 1]]), window=0)


@given(
    st.lists(st.lists(st.integers(0, 6), min_size=1, max_size=12), min_size=1, max_size=6),
    st.integers(1, 6),
)
def test_sequence_pair_count_matches_window_formula(seqs, window):
    s = sequence_pairs(_log(seqs, num_items=7), window)
    expected = sum(min(window, t) for seq in seqs for t in range(len(seq)))
    assert len(s) + s.suppressed == expected
    assert np.all(s.centers != s.contexts)


def test_pair_stream_rejects_self_pairs():
    with pytest.raises(DataError):
        PairStream([1], [1])


def test_neighborhoods_rebuild_windows():
    s = sequence_pairs(_log([[0, 1, 2, 3]]), window=2)
    assert [h.tolist() for h in s.neighborhoods()] == [[0, 1], [0, 1, 2], [1, 2, 3]]


def test_basket_pairs_all_ordered_pairs():
    s = basket_pairs(_log([[0, 1, 2], [3, 4]]))
    assert sorted(s.pairs()) == sorted(
        [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (3, 4), (4, 3)]
    )
    assert [h.tolist() for h in s.neighborhoods()] == [[0, 1, 2], [3, 4]]


# --------------------------------------------------------------------------
# session graph and walks
# --------------------------------------------------------------------------


def test_session_graph_repeated_sessions():
    g = build_session_graph(_log([[0, 1], [0, 1]]))
    assert g.edges() == [(0, 1, 2)]


def test_session_graph_single_item_has_no_edges():
    g = build_session_graph(_log([[0]], num_items=2))
    assert g.edges() == []


def test_session_graph_hand_enumeration():
    g = build_session_graph(_log([[0, 1, 2], [1, 2]]))
    assert g.edges() == [(0, 1, 1), (0, 2, 1), (1, 2, 2)]


def test_session_graph_counts_duplicates_once():
    g = build_session_graph(_log([[0, 1, 0]]))
    assert g.edges() == [(0, 1, 1)]


@given(st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=6, unique=True), min_size=1, max_size=8))
def test_session_graph_symmetric_and_total_weight(sessions):
    g = build_session_graph(_log(sessions, num_items=10))
    A = g.adjacency
    assert (A != A.T).nnz == 0
    assert sum(w for _, _, w in g.edges()) == sum(len(s) * (len(s) - 1) // 2 for s in sessions)


def test_weighted_graph_rejects_self_loops():
    with pytest.raises(DataError):
        WeightedGraph(np.array([[1, 0], [0, 0]]))


def test_walk_on_two_node_path():
    g = WeightedGraph(np.array([[0, 1], [1, 0]]))
    s = random_walk_pairs(g, walk_length=3, walks_per_node=1, context_size=5, seed=0)
    # walks [0,1,0] and [1,0,1]; the (x, x) pair at lag 2 is suppressed
    assert s.pairs() == [(1, 0), (0, 1), (0, 1), (1, 0)]
    assert s.suppressed == 2


def test_unbiased_transitions_are_first_order():
    A = np.array([[0, 1, 1, 0], [1, 0, 1, 1], [1, 1, 0, 0], [0, 1, 0, 0]])
    g = WeightedGraph(A)
    nbrs, p = transition_probabilities(g, prev=0, cur=1, p=1.0, q=1.0)
    nbrs0, p0 = transition_probabilities(g, prev=None, cur=1)
    assert nbrs.tolist() == nbrs0.tolist()
    np.testing.assert_allclose(p, p0)
    np.testing.assert_allclose(p, [1 / 3] * 3)


def test_biased_transition_weights():
    A = np.array([[0, 1, 1, 0], [1, 0, 1, 1], [1, 1, 0, 0], [0, 1, 0, 0]])
    nbrs, p = transition_probabilities(WeightedGraph(A), prev=0, cur=1, p=2.0, q=0.5)
    # back to 0: 1/p; 2 is adjacent to 0: 1; 3 is two hops from 0: 1/q
    w = np.array([0.5, 1.0, 2.0])
    assert nbrs.tolist() == [0, 2, 3]
    np.testing.assert_allclose(p, w / w.sum())


def test_biased_walk_frequencies_match_transitions():
    A = np.array([[0, 1, 1, 0], [1, 0, 1, 1], [1, 1, 0, 0], [0, 1, 0, 0]])
    g = WeightedGraph(A)
    s = random_walk_pairs(g, walk_length=3, walks_per_node=4000, p=2.0, q=0.5, context_size=1, seed=3)
    # walks from node 0 that step to 1 first, then pick the third node
    walks = s.contexts.reshape(-1, 2)[:, :]
    centers = s.centers.reshape(-1, 2)
    starts_0 = np.flatnonzero((walks[:, 0] == 0) & (centers[:, 0] == 1))[:4000]
    third = centers[starts_0, 1]
    _, p = transition_probabilities(g, prev=0, cur=1, p=2.0, q=0.5)
    freq = np.array([np.mean(third == v) for v in (0, 2, 3)])
    se = np.sqrt(p * (1 - p) / len(third))
    assert np.all(np.abs(freq - p) < 4 * se)


def test_walks_are_deterministic():
    g = build_session_graph(_log([[0, 1, 2], [1, 3], [2, 3, 4]]))
    a = random_walk_pairs(g, 10, 3, 0.5, 2.0, 3, seed=9)
    b = random_walk_pairs(g, 10, 3, 0.5, 2.0, 3, seed=9)
    assert np.array_equal(a.centers, b.centers) and np.array_equal(a.contexts, b.contexts)


def test_walks_skip_isolated_nodes():
    g = WeightedGraph(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]]))
    s = random_walk_pairs(g, 4, 2, seed=0)
    assert 2 not in set(s.centers.tolist()) | set(s.contexts.tolist())


def test_walks_reject_bad_bias():
    g = WeightedGraph(np.array([[0, 1], [1, 0]]))
    with pytest.raises(ValueError):
        random_walk_pairs(g, p=0.0)


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------


def test_synthetic_relatedness_signs():
    c = generate_synthetic(SyntheticSpec(num_items=4, num_classes=2, within_prob=0.9, cross_prob=0.1))
    same = c.classes[:, None] == c.classes[None, :]
    off = ~np.eye(4, dtype=bool)
    assert np.all(c.truth[same & off] > 0)
    assert np.all(c.truth[~same] < 0)


def test_synthetic_closed_form_relatedness():
    # 2 classes x 2 items: joint 0.9/Z within, 0.1/Z across, Z = 4*(0.9 + 2*0.1)
    c = generate_synthetic(SyntheticSpec(num_items=4, num_classes=2, within_prob=0.9, cross_prob=0.1))
    Z = 4 * 1.1
    marg = 1.1 / Z
    assert c.truth[0, 2] == pytest.approx(np.log(0.9 / Z / marg**2))
    assert c.truth[0, 1] == pytest.approx(np.log(0.1 / Z / marg**2))


def test_planted_independent_pair_has_zero_truth():
    spec = SyntheticSpec(num_items=6, num_classes=2, independent_pairs=[(0, 2)])
    c = generate_synthetic(spec)
    assert c.truth[0, 2] == 0.0 and c.truth[2, 0] == 0.0
    marg = c.joint.sum(axis=1)
    assert c.joint[0, 2] == pytest.approx(marg[0] * marg[2], rel=1e-12)


def test_synthetic_estimate_converges():
    spec = SyntheticSpec(
        num_items=6, num_classes=2, within_prob=0.7, cross_prob=0.3, num_records=1_000_000,
        independent_pairs=[(1, 3)], seed=5,
    )
    c = generate_synthetic(spec)
    table = accumulate(sequence_pairs(c.log, window=1), spec.num_items)
    est = relatedness(table).to_dense(np.nan)
    off = ~np.eye(6, dtype=bool)
    assert np.nanmax(np.abs(est[off] - c.truth[off])) < 0.05


def test_synthetic_sequences_have_requested_shape():
    spec = SyntheticSpec(num_items=10, num_classes=2, num_records=200, sequence_length=5, session_length=2)
    c = generate_synthetic(spec)
    assert len(c.log) == 200
    assert len(c.log.user_slices()) == 40
    assert len(c.log.session_slices()) == 40 * 3


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(within_prob=0.1, cross_prob=0.2).validate()
    with pytest.raises(ValueError):
        SyntheticSpec(independent_pairs=[(1, 1)]).validate()
    with pytest.raises(ValueError):
        SyntheticSpec(cross_prob=0.0).validate()


# --------------------------------------------------------------------------
# basket model
# --------------------------------------------------------------------------


def test_basket_model_set_probabilities():
    m = BasketModel([0.25, 0.75], [[0.5, 0.2, 0.1], [0.1, 0.4, 0.3]])
    assert m.set_prob([0, 1]) == pytest.approx(0.25 * 0.1 + 0.75 * 0.04)
    P = m.pair_probs()
    assert P[0, 1] == pytest.approx(m.set_prob([0, 1]))
    assert P[2, 2] == pytest.approx(m.marginals()[2])
    cond = m.conditional([0])
    assert cond[1] == pytest.approx(m.set_prob([0, 1]) / m.set_prob([0]))
    assert cond[0] == 1.0


def test_basket_sampling_matches_marginals():
    m = BasketModel([0.5, 0.5], [[0.6, 0.1, 0.3], [0.2, 0.5, 0.3]])
    member = m.sample_membership(40_000, np.random.default_rng(0))
    freq = member.mean(axis=0)
    se = np.sqrt(m.marginals() * (1 - m.marginals()) / 40_000)
    assert np.all(np.abs(freq - m.marginals()) < 4 * se)


def test_basket_sample_log_is_valid():
    m, base, style = factor_grid_model(3, 2, 1, seed=1)
    log = m.sample_log(200, seed=1)
    for sl in log.session_slices():
        items = log.item[sl]
        assert len(set(items.tolist())) == len(items)
        assert np.all(np.diff(log.position[sl]) > 0)
    assert len(base) == len(style) == m.num_items == 6


def test_basket_model_validation():
    with pytest.raises(ValueError):
        BasketModel([0.5, 0.6], [[0.5], [0.5]])
    with pytest.raises(ValueError):
        BasketModel([1.0], [[1.0]])
