import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsehl.sparse import (
    ShapeError,
    SparseMatrix,
    from_dense,
    from_triplets,
    identity,
    row_sums,
    scale_cols,
    scale_rows,
    sparsity,
    spmm_dense,
    spmm_sparse,
    to_dense,
    transpose,
    write_matrix_market,
)

TOY = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])


def toy():
    return from_triplets([0, 0, 1, 2], [0, 1, 0, 1], [1, 1, 1, 1], (3, 2))


def check_canonical(a: SparseMatrix):
    p = a.row_offsets
    assert p.size == a.n_rows + 1 and p[0] == 0 and p[-1] == a.nnz
    assert np.all(np.diff(p) >= 0)
    for i in range(a.n_rows):
        c = a.col_indices[p[i]:p[i + 1]]
        assert np.all(np.diff(c) > 0)
        assert np.all(c < a.n_cols)
    assert np.all(a.values != 0)


class TestConstruction:
    def test_toy_from_triplets(self):
        a = toy()
        np.testing.assert_array_equal(to_dense(a), TOY)
        check_canonical(a)

    def test_empty(self):
        a = from_triplets([], [], [], (2, 2))
        assert a.nnz == 0
        np.testing.assert_array_equal(to_dense(a), np.zeros((2, 2)))

    def test_duplicates_summed(self):
        a = from_triplets([0, 0], [0, 0], [1.0, 2.0], (1, 1))
        assert a.nnz == 1 and to_dense(a)[0, 0] == 3.0

    def test_cancelling_duplicates_dropped(self):
        a = from_triplets([0, 0], [1, 1], [1.0, -1.0], (1, 2))
        assert a.nnz == 0

    def test_out_of_bounds(self):
        with pytest.raises(IndexError):
            from_triplets([3], [0], [1.0], (3, 2))
        with pytest.raises(IndexError):
            from_triplets([0], [-1], [1.0], (3, 2))

    def test_arrays_are_read_only(self):
        a = toy()
        with pytest.raises(ValueError):
            a.values[0] = 5.0


class TestProducts:
    def test_toy_times_forecast(self):
        out = spmm_dense(toy(), np.array([[1.0, 0.0], [0.0, 0.0]]))
        np.testing.assert_array_equal(out, [[1, 0], [1, 0], [0, 0]])

    def test_identity_and_zero(self):
        B = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(spmm_dense(identity(4), B), B)
        np.testing.assert_array_equal(spmm_dense(from_triplets([], [], [], (2, 4)), B), np.zeros((2, 3)))

    def test_vector_operand(self):
        np.testing.assert_array_equal(spmm_dense(toy(), np.array([4.0, 4.0])), [8, 4, 4])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            spmm_dense(toy(), np.ones((3, 1)))
        with pytest.raises(ShapeError):
            spmm_sparse(toy(), toy())

    def test_matmul_operator(self):
        np.testing.assert_array_equal(to_dense(toy() @ transpose(toy())), TOY @ TOY.T)


class TestTransposeAndReductions:
    def test_toy_transpose(self):
        np.testing.assert_array_equal(to_dense(transpose(toy())), [[1, 1, 0], [1, 0, 1]])

    def test_identity_transpose(self):
        assert transpose(identity(5)) == identity(5)

    def test_single_entry(self):
        a = from_triplets([1], [3], [2.5], (2, 4))
        t = transpose(a)
        assert t.shape == (4, 2) and to_dense(t)[3, 1] == 2.5 and t.nnz == 1

    def test_row_sums(self):
        np.testing.assert_array_equal(row_sums(toy()), [2, 1, 1])
        np.testing.assert_array_equal(row_sums(identity(3)), np.ones(3))
        np.testing.assert_array_equal(row_sums(from_triplets([], [], [], (3, 3))), np.zeros(3))


class TestScaling:
    def test_scale_rows_toy(self):
        out = scale_rows(toy(), [0.25, 0.5, 0.5])
        np.testing.assert_array_equal(to_dense(out), [[0.25, 0.25], [0.5, 0], [0, 0.5]])

    def test_all_ones(self):
        assert scale_rows(toy(), np.ones(3)) == toy()
        assert scale_cols(toy(), np.ones(2)) == toy()

    def test_scale_cols_identity(self):
        v = np.array([2.0, 3.0, 5.0])
        np.testing.assert_array_equal(to_dense(scale_cols(identity(3), v)), np.diag(v))

    def test_errors(self):
        with pytest.raises(ZeroDivisionError):
            scale_rows(toy(), [1.0, 0.0, 1.0])
        with pytest.raises(ShapeError):
            scale_cols(toy(), [1.0])


class TestSparsity:
    def test_m5_shape(self):
        # l nonzeros per column over n rows
        n_b, l, n = 3049, 12, 42840
        rows = np.concatenate([(k * 3001 + np.arange(n_b)) % (n - n_b) for k in range(l - 1)]
                              + [n - n_b + np.arange(n_b)])
        cols = np.tile(np.arange(n_b), l)
        a = from_triplets(rows, cols, np.ones(rows.size), (n, n_b))
        assert a.nnz == n_b * l
        assert abs(sparsity(a) - 0.99972) < 5e-6

    def test_dense_and_toy(self):
        assert sparsity(from_dense(np.ones((2, 2)))) == 0.0
        assert sparsity(toy()) == pytest.approx(1 / 3, abs=1e-15)


def test_matrix_market(tmp_path):
    path = tmp_path / "s.mtx"
    write_matrix_market(toy(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "%%MatrixMarket matrix coordinate real general"
    assert lines[1].split() == ["3", "2", "4"]
    assert lines[2].split()[:2] == ["1", "1"]


@st.composite
def sparse_pair(draw):
    m = draw(st.integers(1, 50))
    k = draw(st.integers(1, 50))
    n = draw(st.integers(1, 50))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    dens = draw(st.floats(0.0, 0.3))
    A = rng.normal(size=(m, k)) * (rng.random((m, k)) < dens)
    B = rng.normal(size=(k, n)) * (rng.random((k, n)) < dens)
    return A, B


@settings(max_examples=60, deadline=None)
@given(sparse_pair())
def test_spmm_sparse_matches_dense(pair):
    A, B = pair
    C = spmm_sparse(from_dense(A), from_dense(B))
    check_canonical(C)
    np.testing.assert_allclose(to_dense(C), A @ B, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(sparse_pair())
def test_transpose_involution_and_row_sums(pair):
    A, _ = pair
    a = from_dense(A)
    assert transpose(transpose(a)) == a
    np.testing.assert_allclose(row_sums(a), spmm_dense(a, np.ones((a.n_cols, 1)))[:, 0], rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(sparse_pair(), st.booleans())
def test_scale_round_trip(pair, dyadic):
    A, _ = pair
    a = from_dense(A)
    rng = np.random.default_rng(a.n_rows)
    if dyadic:
        v = 2.0 ** rng.integers(-8, 8, size=a.n_rows)
        assert scale_rows(scale_rows(a, v), 1.0 / v) == a
    else:
        v = rng.uniform(0.5, 2.0, size=a.n_rows)
        np.testing.assert_allclose(to_dense(scale_rows(scale_rows(a, v), 1.0 / v)), A, rtol=1e-15, atol=0)
