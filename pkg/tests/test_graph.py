import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgformer.errors import ContractError
from bgformer.graph import (
    SparseAdjacency,
    build_batch_graph,
    knn_visual_adjacency,
    label_adjacency,
    minmax_normalize,
    similarity,
    sym_laplacian_normalize,
    write_graph_dump,
)
from bgformer.numerics import make_rng

F3 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
S3 = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])


def test_similarity_examples():
    q, _ = np.linalg.qr(make_rng(0).standard_normal((4, 4)))
    np.testing.assert_allclose(similarity(q), np.eye(4), atol=1e-15)
    assert np.array_equal(similarity(F3), S3)
    f = make_rng(1).standard_normal((6, 3))
    s = similarity(f)
    assert np.max(np.abs(s - s.T)) <= 1e-12
    np.testing.assert_allclose(np.diag(s), np.sum(f * f, axis=1), rtol=1e-14)


def test_similarity_needs_two_rows():
    with pytest.raises(ContractError):
        similarity(np.ones((1, 3)))


def test_knn_hand_example():
    a = knn_visual_adjacency(S3, 1)
    assert a.indices.tolist() == [[2], [0], [0]]
    assert a.weights.tolist() == [[1.0], [0.0], [1.0]]


def test_knn_full_and_range():
    s = make_rng(2).standard_normal((5, 5))
    full = knn_visual_adjacency(s, 4).to_dense()
    mask = ~np.eye(5, dtype=bool)
    assert np.array_equal(full[mask], s[mask]) and not np.diag(full).any()
    for k in (0, 5):
        with pytest.raises(ContractError):
            knn_visual_adjacency(s, k)


def test_label_adjacency():
    assert label_adjacency([0, 0, 1]).tolist() == [[1, 1, 0], [1, 1, 0], [0, 0, 1]]
    assert np.array_equal(label_adjacency([3, 1, 2]), np.eye(3))
    assert np.array_equal(label_adjacency([4, 4, 4, 4]), np.ones((4, 4)))


def test_minmax_normalize():
    adj = SparseAdjacency(np.array([[1, 2], [0, 2]]), np.array([[0.0, 2.0], [4.0, 8.0]]))
    assert minmax_normalize(adj).weights.tolist() == [[0.0, 0.25], [0.5, 1.0]]
    flat = SparseAdjacency(adj.indices, np.full((2, 2), 3.0))
    assert not minmax_normalize(flat).weights.any()
    rnd = SparseAdjacency(adj.indices, make_rng(3).standard_normal((2, 2)))
    out = minmax_normalize(rnd).weights
    assert out.min() == 0.0 and out.max() == 1.0


def test_sym_laplacian_examples():
    assert sym_laplacian_normalize(label_adjacency([0, 0])).tolist() == [[1.0, 0.5], [0.5, 1.0]]
    assert np.array_equal(sym_laplacian_normalize(np.eye(4)), 2 * np.eye(4))


@pytest.mark.parametrize("m", [1, 2, 3, 5, 7, 9])
def test_single_class_exact_values(m):
    out = sym_laplacian_normalize(label_adjacency([1] * m))
    expected = np.full((m, m), 1 / m)
    np.fill_diagonal(expected, 2 / m)
    assert np.array_equal(out, expected)


def test_build_batch_graph_worked_example():
    g = build_batch_graph(F3, [0, 0, 1], 1)
    assert g.a_v.indices.tolist() == [[2], [0], [0]]
    assert g.a_v_norm.weights.tolist() == [[1.0], [0.0], [1.0]]
    a_l = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1.0]])
    d = a_l.sum(axis=1)
    np.testing.assert_allclose(g.a_l_norm, (a_l + np.eye(3)) / np.sqrt(np.outer(d, d)), rtol=0, atol=1e-15)


def test_orthonormal_full_graph_is_degenerate():
    g = build_batch_graph(np.eye(5), list(range(5)), 4)
    assert np.array_equal(g.a_v.indices, g.a_v_norm.indices)
    assert not g.a_v_norm.weights.any()


def test_k_is_capped_at_batch_minus_one():
    g = build_batch_graph(make_rng(5).standard_normal((4, 3)), [0, 0, 1, 1], 100)
    assert g.k == 3 and g.a_v.k == 3


@settings(max_examples=60, deadline=None)
@given(
    b=st.integers(2, 24),
    c=st.integers(1, 8),
    seed=st.integers(0, 2**31),
    data=st.data(),
)
def test_graph_invariants(b, c, seed, data):
    k = data.draw(st.integers(1, b - 1))
    rng = make_rng(seed)
    f = rng.standard_normal((b, c))
    labels = rng.integers(0, max(1, b // 2), size=b)
    g = build_batch_graph(f, labels, k)
    assert g.a_v.indices.shape == (b, min(k, b - 1))
    for i in range(b):
        row = g.a_v.indices[i]
        assert i not in row and len(set(row.tolist())) == row.size
        assert np.all(np.diff(row) > 0)
    assert np.array_equal(g.a_v.indices, g.a_v_norm.indices)
    assert g.a_v_norm.weights.min() >= 0.0 and g.a_v_norm.weights.max() <= 1.0
    assert np.array_equal(g.a_l_norm, g.a_l_norm.T)
    same = labels[:, None] == labels[None, :]
    assert np.all(g.a_l_norm[same] > 0) and np.all(g.a_l_norm[same] <= 2.0)
    assert not g.a_l_norm[~same].any()


@settings(max_examples=30, deadline=None)
@given(b=st.integers(3, 16), seed=st.integers(0, 2**31), data=st.data())
def test_permutation_equivariance(b, seed, data):
    k = data.draw(st.integers(1, b - 1))
    rng = make_rng(seed)
    f = rng.standard_normal((b, 4))
    labels = rng.integers(0, 3, size=b)
    perm = rng.permutation(b)
    g = build_batch_graph(f, labels, k)
    gp = build_batch_graph(f[perm], labels[perm], k)
    # continuous features: similarity ties have probability zero
    np.testing.assert_allclose(gp.a_v.to_dense(), g.a_v.to_dense()[np.ix_(perm, perm)], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(gp.a_v_norm.to_dense(), g.a_v_norm.to_dense()[np.ix_(perm, perm)], rtol=1e-12, atol=1e-12)
    assert np.array_equal(gp.a_l_norm, g.a_l_norm[np.ix_(perm, perm)])


def test_graph_dump_format():
    g = build_batch_graph(F3, [0, 0, 1], 1)
    buf = io.StringIO()
    write_graph_dump(buf, g)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# B=3 k=1"
    assert lines[1:] == ["0\t2\t1.0\t1.0", "1\t0\t0.0\t0.0", "2\t0\t1.0\t1.0"]
