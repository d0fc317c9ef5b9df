import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathcast import autograd as ag
from pathcast.cig import Cig, merge_weights
from pathcast.static import (
    aggregate_content,
    appnp_operator,
    appnp_propagate,
    build_content,
    hashed_unit_vector,
    load_feature_file,
    next_community_distribution,
    normalized_adjacency,
    session_attention,
    session_attention_batch,
)


def weighted(nodes, counts):
    return merge_weights(Cig("v", list(nodes), dict(counts)))


def test_aggregation_identities():
    v = np.array([0.3, -1.0, 2.0])
    assert aggregate_content(v, np.ones(3), "mul").data.tolist() == v.tolist()
    assert aggregate_content(v, np.zeros(3), "add").data.tolist() == v.tolist()
    assert aggregate_content(np.array([1.0, 2.0]), np.array([3.0, 4.0]), "concat").data.tolist() == [1, 2, 3, 4]


def test_concat_projection_restores_dimension():
    r = np.random.default_rng(0)
    out = aggregate_content(r.normal(size=(5, 4)), r.normal(size=(5, 4)), "concat", r.normal(size=(8, 4)), np.zeros(4))
    assert out.shape == (5, 4)


def test_aggregation_errors():
    with pytest.raises(ValueError):
        aggregate_content(np.ones(3), np.ones(4), "mul")
    with pytest.raises(ValueError):
        aggregate_content(np.ones(3), np.ones(3), "max")


def dense_appnp(nodes, edges, s0, alpha, L):
    n = len(nodes)
    pos = {c: i for i, c in enumerate(nodes)}
    A = np.eye(n)
    for (a, b), w in edges.items():
        A[pos[a], pos[b]] += w
        A[pos[b], pos[a]] += w
    d = A.sum(1)
    N = A / np.sqrt(np.outer(d, d))
    S = s0.copy()
    for _ in range(L):
        S = (1 - alpha) * N @ S + alpha * s0
    return S


def test_appnp_weighted_path_matches_dense_oracle():
    g = weighted("ABC", {("A", "B"): 1, ("B", "C"): 3})
    s0 = np.random.default_rng(2).normal(size=(3, 5))
    out = appnp_propagate(g, s0, 0.1, 4).data
    assert np.max(np.abs(out - dense_appnp(g.nodes, g.edges, s0, 0.1, 4))) < 1e-12


def test_appnp_teleport_limit():
    g = weighted("ABCD", {("A", "B"): 2, ("B", "C"): 1, ("C", "D"): 5, ("D", "A"): 1})
    s0 = np.random.default_rng(3).normal(size=(4, 6))
    assert np.max(np.abs(appnp_propagate(g, s0, 0.999, 8).data - s0)) < 1e-2


@pytest.mark.parametrize("alpha,L", [(0.0, 1), (0.1, 4), (0.7, 9)])
def test_isolated_node_is_fixed(alpha, L):
    g = weighted("A", {})
    s0 = np.array([[0.25, -3.0]])
    assert np.allclose(appnp_propagate(g, s0, alpha, L).data, s0, atol=1e-15)


def test_appnp_errors():
    g = weighted("AB", {("A", "B"): 1})
    with pytest.raises(ValueError):
        appnp_propagate(g, np.ones((2, 2)), 0.1, 0)
    with pytest.raises(ValueError):
        appnp_propagate(g, np.ones((2, 2)), 1.0, 2)
    with pytest.raises(ValueError):
        appnp_propagate(Cig("v", ["A", "B"], {("A", "B"): 1}), np.ones((2, 2)))


def test_operator_matches_propagation():
    g = weighted("ABCD", {("A", "B"): 1, ("C", "A"): 2, ("D", "C"): 1})
    s0 = np.random.default_rng(4).normal(size=(4, 3))
    assert np.allclose(appnp_operator(g) @ s0, appnp_propagate(g, s0).data, atol=1e-13)


def test_normalized_adjacency_symmetric():
    g = weighted("ABC", {("A", "B"): 1, ("B", "C"): 2})
    N = normalized_adjacency(g).toarray()
    assert np.allclose(N, N.T)
    assert np.all(np.linalg.eigvalsh(N) <= 1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1), st.floats(0.0, 0.95), st.integers(1, 6))
def test_appnp_permutation_equivariance(n, seed, alpha, L):
    r = np.random.default_rng(seed)
    nodes = [f"c{i}" for i in range(n)]
    edges = {(a, b): int(r.integers(1, 4)) for a in nodes for b in nodes if a != b and r.random() < 0.4}
    s0 = r.normal(size=(n, 3))
    perm = r.permutation(n)
    g1 = weighted(nodes, edges)
    g2 = weighted([nodes[i] for i in perm], edges)
    out1 = appnp_propagate(g1, s0, alpha, L).data
    out2 = appnp_propagate(g2, s0[perm], alpha, L).data
    assert np.allclose(out1[perm], out2, atol=1e-12)
    assert out1.shape == s0.shape


def attention_params(d, seed):
    r = np.random.default_rng(seed)
    return r.normal(size=d), r.normal(size=(d, d)), r.normal(size=(d, d)), r.normal(size=d)


def test_attention_single_node():
    w1, wg, wh, b = attention_params(3, 0)
    s = np.array([[1.0, -2.0, 0.5]])
    ctx, beta = session_attention(s, w1, wg, wh, b)
    expected_beta = w1 @ (1 / (1 + np.exp(-(s[0] @ wg + s[0] @ wh + b))))
    assert beta.data[0] == pytest.approx(expected_beta, abs=1e-12)
    assert np.allclose(ctx.data, beta.data[0] * s[0], atol=1e-14)


def test_attention_zero_w1_gives_zero_context():
    _, wg, wh, b = attention_params(4, 1)
    ctx, _ = session_attention(np.random.default_rng(0).normal(size=(3, 4)), np.zeros(4), wg, wh, b)
    assert not ctx.data.any()


def test_attention_identical_nodes_equal_beta():
    w1, wg, wh, b = attention_params(4, 2)
    s = np.tile(np.array([0.1, 0.2, -0.3, 0.4]), (3, 1))
    _, beta = session_attention(s, w1, wg, wh, b)
    assert np.ptp(beta.data) == 0.0


def test_attention_empty_raises():
    w1, wg, wh, b = attention_params(2, 3)
    with pytest.raises(ValueError):
        session_attention(np.zeros((0, 2)), w1, wg, wh, b)


def test_batched_attention_matches_single():
    d = 3
    w1, wg, wh, b = attention_params(d, 4)
    r = np.random.default_rng(5)
    seqs = [r.normal(size=(k, d)) for k in (1, 3, 2)]
    embs = np.zeros((3, 3, d))
    mask = np.zeros((3, 3), bool)
    last = np.zeros((3, d))
    for i, s in enumerate(seqs):
        embs[i, : len(s)] = s
        mask[i, : len(s)] = True
        last[i] = s[-1]
    batch = session_attention_batch(ag.Tensor(embs), mask, ag.Tensor(last), w1, wg, wh, b).data
    for i, s in enumerate(seqs):
        assert np.allclose(batch[i], session_attention(s, w1, wg, wh, b)[0].data, atol=1e-13)


def test_distribution_uniform_for_identical_rows():
    r = np.random.default_rng(6)
    table = np.tile(r.normal(size=4), (5, 1))
    p = next_community_distribution(r.normal(size=4), r.normal(size=4), table, r.normal(size=(8, 4)), r.normal(size=4))
    assert np.allclose(p.data, 0.2, atol=1e-15)


def test_distribution_hand_oracle():
    head_w = np.vstack([np.eye(2), np.zeros((2, 2))])  # z = last
    table = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]])
    last = np.array([2.0, 1.0])
    p = next_community_distribution(np.array([9.0, 9.0]), last, table, head_w, np.zeros(2)).data
    logits = np.array([2.0, 1.0, 3.0, -2.0])
    e = np.exp(logits)
    assert np.allclose(p, e / e.sum(), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_distribution_sums_to_one_and_is_monotone(seed, n):
    r = np.random.default_rng(seed)
    ctx, last = r.normal(size=3), r.normal(size=3)
    table, hw, hb = r.normal(size=(n, 3)), r.normal(size=(6, 3)), r.normal(size=3)
    p = next_community_distribution(ctx, last, table, hw, hb).data
    z = np.concatenate([last, ctx]) @ hw + hb
    s = table @ z
    assert abs(p.sum() - 1) <= 1e-12
    order_s, order_p = np.argsort(s, kind="stable"), np.argsort(p, kind="stable")
    assert np.all(np.diff(s[order_p]) >= -1e-12) and np.all(np.diff(p[order_s]) >= -1e-15)


def test_hashed_vectors_are_stable_units():
    a = hashed_unit_vector("vid-1", 16)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert np.array_equal(a, hashed_unit_vector("vid-1", 16))
    assert not np.array_equal(a, hashed_unit_vector("vid-2", 16))


def test_build_content_channels():
    cf = build_content(["a", "b", "c"], {"a": "ch1", "b": "ch1"}, 4)
    assert cf.channel_of.tolist() == [0, 0, 1]
    assert cf.video_vec.shape == (3, 4) and cf.channel_init.shape == (2, 4)


def test_feature_file_validation(tmp_path):
    p = tmp_path / "f.jsonl"
    p.write_text('{"id": "a", "vector": [1, 2]}\n')
    assert load_feature_file(p, 2)["a"].tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        load_feature_file(p, 3)
