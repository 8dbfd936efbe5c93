import math

import numpy as np
import pytest

from oracles import decay_matrix, scalar_truncate
from spammkit import (ConfigError, InputError, build_from_coo, build_from_dense, get_element,
                      insignificant_sum_sq, norm_sq, truncate)
from spammkit.quadtree import padded_size


def walk_norms(node, rel=1e-12):
    if node is None:
        return 0.0
    if node.leaf is not None:
        total = sum(float(np.sum(b * b)) for _, _, b in node.leaf.iter_blocks())
        assert math.isclose(node.norm_sq, total, rel_tol=rel)
        return node.norm_sq
    total = sum(walk_norms(c, rel) for c in node.children)
    assert math.isclose(node.norm_sq, total, rel_tol=rel)
    return node.norm_sq


class TestBuild:
    def test_zero_matrix_is_empty(self):
        m = build_from_dense(np.zeros((2, 2)), 2, 2)
        assert m.root is None
        assert norm_sq(m) == 0.0

    def test_identity_single_leaf(self):
        m = build_from_dense(np.eye(2), 2, 2)
        assert m.root.leaf is not None
        assert norm_sq(m) == 2.0

    def test_three_nonzeros(self):
        rng = np.random.default_rng(3)
        d = np.zeros((8, 8))
        pos = rng.choice(64, size=3, replace=False)
        vals = rng.standard_normal(3)
        d.flat[pos] = vals
        m = build_from_dense(d, 4, 2)
        assert math.isclose(norm_sq(m), sum(v * v for v in vals), rel_tol=1e-12)
        assert m.nnz() == 3

    def test_round_trip_and_padding(self):
        rng = np.random.default_rng(0)
        d = rng.standard_normal((37, 37)) * (rng.random((37, 37)) < 0.3)
        m = build_from_dense(d, 8, 4)
        assert m.n_padded == padded_size(37, 8) == 64
        assert np.array_equal(m.to_dense(), d)
        for _ in range(50):
            i, j = rng.integers(0, 37, size=2)
            assert get_element(m, int(i), int(j)) == d[i, j]
        walk_norms(m.root)

    def test_all_zero_quadrants_are_empty(self):
        d = np.zeros((16, 16))
        d[0, 0] = 1.0
        m = build_from_dense(d, 4, 2)
        assert m.root.children[1] is None
        assert m.root.children[2] is None
        assert m.root.children[3] is None

    @pytest.mark.parametrize("ts,bs", [(6, 2), (8, 3), (4, 8)])
    def test_bad_sizes(self, ts, bs):
        with pytest.raises(ConfigError):
            build_from_dense(np.eye(4), ts, bs)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        d = np.eye(4)
        d[1, 2] = bad
        with pytest.raises(InputError):
            build_from_dense(d, 4, 2)

    def test_non_square(self):
        with pytest.raises(InputError):
            build_from_dense(np.ones((3, 4)), 4, 2)

    def test_coo_sums_duplicates(self):
        m = build_from_coo(5, [0, 0, 4], [1, 1, 4], [1.5, 2.0, -1.0], 4, 2)
        assert get_element(m, 0, 1) == 3.5
        assert get_element(m, 4, 4) == -1.0
        assert m.nnz() == 2

    def test_coo_cancelling_duplicates_prune(self):
        m = build_from_coo(4, [2, 2], [3, 3], [1.0, -1.0], 4, 2)
        assert m.root is None


class TestNormAndAccess:
    def test_empty(self):
        m = build_from_dense(np.zeros((4, 4)), 4, 2)
        assert norm_sq(m) == 0.0
        assert get_element(m, 3, 1) == 0.0

    def test_identity(self):
        m = build_from_dense(np.eye(20), 8, 4)
        assert norm_sq(m) == 20.0
        assert all(get_element(m, k, k) == 1.0 for k in range(20))

    def test_random_flat_sum(self):
        rng = np.random.default_rng(11)
        d = rng.standard_normal((32, 32)) * (rng.random((32, 32)) < 0.1)
        m = build_from_dense(d, 8, 2)
        assert math.isclose(norm_sq(m), float(np.sum(d * d)), rel_tol=1e-12)

    @pytest.mark.parametrize("i,j", [(-1, 0), (0, 5), (5, 5)])
    def test_out_of_range(self, i, j):
        m = build_from_dense(np.eye(5), 4, 2)
        with pytest.raises(InputError):
            get_element(m, i, j)


class TestTruncate:
    def test_zero_threshold_identical(self):
        d = decay_matrix(16, 0.5)
        m = build_from_dense(d, 8, 2)
        t = truncate(m, 0.0)
        assert np.array_equal(t.to_dense(), d)

    def test_everything_below(self):
        m = build_from_dense(np.full((4, 4), 0.1), 4, 2)
        assert truncate(m, 0.2).root is None

    def test_banded_matches_loop(self):
        d = decay_matrix(16, 0.5)
        m = build_from_dense(d, 8, 2)
        t = truncate(m, 1e-3)
        ref = scalar_truncate(d, 1e-3)
        assert t.nnz() == int(np.count_nonzero(ref))
        assert np.array_equal(t.to_dense(), ref)
        walk_norms(t.root)

    def test_strict_boundary(self):
        d = np.array([[0.5, 0.25], [0.25, 0.125]])
        t = truncate(build_from_dense(d, 2, 2), 0.25)
        assert np.array_equal(t.to_dense(), [[0.5, 0.25], [0.25, 0.0]])

    def test_input_unchanged(self):
        d = decay_matrix(16, 0.5)
        m = build_from_dense(d, 4, 2)
        truncate(m, 0.1)
        assert np.array_equal(m.to_dense(), d)

    def test_negative(self):
        with pytest.raises(InputError):
            truncate(build_from_dense(np.eye(2), 2, 2), -1e-3)


class TestInsignificant:
    def test_all_counted(self):
        d = decay_matrix(16, 0.3)
        m = build_from_dense(d, 8, 4)
        assert math.isclose(insignificant_sum_sq(m, 1.0), norm_sq(m), rel_tol=1e-12)

    def test_none_counted(self):
        d = decay_matrix(16, 0.3)
        m = build_from_dense(d, 8, 4)
        assert insignificant_sum_sq(m, d[d > 0].min() / 2) == 0.0

    def test_matches_loop(self):
        d = decay_matrix(64, 0.1)
        m = build_from_dense(d, 16, 4)
        expected = 0.0
        for i in range(64):
            for j in range(64):
                if abs(d[i, j]) <= 1e-2:
                    expected += d[i, j] ** 2
        assert math.isclose(insignificant_sum_sq(m, 1e-2), expected, rel_tol=1e-12)

    def test_bounds_truncation_error(self):
        d = decay_matrix(64, 0.1)
        m = build_from_dense(d, 16, 4)
        tau = 3e-3
        err = np.sum((d - truncate(m, tau).to_dense()) ** 2)
        assert math.isclose(err, insignificant_sum_sq(m, tau), rel_tol=1e-12)

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_bad_eps(self, eps):
        with pytest.raises(InputError):
            insignificant_sum_sq(build_from_dense(np.eye(2), 2, 2), eps)
