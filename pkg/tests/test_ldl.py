import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from climstat.covariance import SparseSymmetric
from climstat.ldl import NotPositiveDefiniteError, condition_pd, minimum_degree_order, solve
from climstat.mmio import read_factors, read_symmetric, write_factors, write_symmetric

from synth import random_correlation_matrix


def two_by_two(r):
    return SparseSymmetric.from_dense([[1.0, r], [r, 1.0]])


def test_two_by_two_closed_form():
    ap, f, rep = condition_pd(two_by_two(1.0), growth_cap=None)
    assert ap.to_dense()[0, 1] == pytest.approx(math.sqrt(0.99), abs=1e-12)
    assert f.d.min() == pytest.approx(0.01, abs=1e-12)
    assert rep.modified_entries == 1 and rep.repaired_pivots == 1


def test_identity_untouched():
    eye = SparseSymmetric.from_dense(np.eye(5))
    ap, f, rep = condition_pd(eye)
    assert np.array_equal(ap.to_dense(), np.eye(5))
    assert np.array_equal(f.d, np.ones(5)) and f.L.nnz == 0
    assert rep.modified_entries == 0


def test_well_conditioned_input_kept():
    ap, f, rep = condition_pd(two_by_two(0.5))
    assert ap.to_dense()[0, 1] == 0.5 and rep.modified_entries == 0
    x = solve(f, [1.0, 0.0])
    assert x == pytest.approx([4 / 3, -2 / 3], abs=1e-14)


def test_cap_only_shrinks_further():
    a = two_by_two(1.0)
    pure = condition_pd(a, growth_cap=None)[0].to_dense()[0, 1]
    capped = condition_pd(a, growth_cap=0.5)[0].to_dense()[0, 1]
    assert capped == pytest.approx(0.5) and capped < pure


def test_diagonal_below_floor_rejected():
    with pytest.raises(NotPositiveDefiniteError):
        condition_pd(SparseSymmetric.from_dense([[0.001, 0.0], [0.0, 1.0]]))


@pytest.mark.parametrize("kwargs", [dict(delta_floor=0.0), dict(delta_floor=1.5),
                                    dict(ordering="amd")])
def test_argument_validation(kwargs):
    with pytest.raises(ValueError):
        condition_pd(two_by_two(0.1), **kwargs)


def test_raise_diagonal_variant():
    ap, f, rep = condition_pd(two_by_two(1.0), preserve_diagonal=False)
    dense = ap.to_dense()
    assert dense[0, 1] == 1.0
    assert dense[1, 1] == pytest.approx(1.01) and rep.raised_diagonals == 1
    assert np.allclose(f.reconstruct(), dense, atol=1e-14)


def test_solve_shape_mismatch():
    _, f, _ = condition_pd(two_by_two(0.2))
    with pytest.raises(ValueError):
        solve(f, np.ones(3))
    assert solve(f, np.eye(2)).shape == (2, 2)


def test_minimum_degree_is_permutation():
    a = random_correlation_matrix(np.random.default_rng(0), 60, 0.05)
    p = minimum_degree_order(a.n, a.rows, a.cols)
    assert sorted(p.tolist()) == list(range(60))
    # star graph: leaves go first, the hub only once its degree ties the last leaf
    hub = SparseSymmetric(5, [0, 0, 0, 0, 0, 1, 2, 3, 4], [0, 1, 2, 3, 4, 1, 2, 3, 4],
                          [1, .1, .1, .1, .1, 1, 1, 1, 1])
    assert 0 in minimum_degree_order(5, hub.rows, hub.cols)[-2:].tolist()


def check_contract(a, ap, f, rng, floor=0.01):
    dense, new = a.to_dense(), ap.to_dense()
    assert f.d.min() >= floor
    assert np.array_equal(np.diag(new), np.diag(dense))
    assert np.all(np.abs(new) <= np.abs(dense))
    assert np.all((np.sign(new) == np.sign(dense)) | (new == 0))
    assert np.array_equal(new, new.T)
    b = rng.normal(size=a.n)
    x = f.solve(b)
    assert np.linalg.norm(new @ x - b) / np.linalg.norm(b) < 1e-9
    assert np.allclose(f.reconstruct(), new, atol=1e-10)


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(2, 120), st.floats(0.0, 0.1),
       st.sampled_from(["uniform", "normal"]), st.sampled_from([1.0, 2.0]))
def test_conditioning_contract(seed, n, density, spread, cap):
    rng = np.random.default_rng(seed)
    a = random_correlation_matrix(rng, n, density, spread)
    ap, f, rep = condition_pd(a, growth_cap=cap)
    check_contract(a, ap, f, rng)
    assert 0 <= rep.fraction_modified <= 1


@settings(deadline=None, max_examples=15)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_positive_definite_input_unchanged(seed, n):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(n, n + 5))
    cov = g @ g.T
    s = 1 / np.sqrt(np.diag(cov))
    corr = cov * s[:, None] * s[None, :]
    corr = (corr + corr.T) / 2
    np.fill_diagonal(corr, 1.0)
    if np.linalg.eigvalsh(corr).min() < 0.2:
        return
    ap, f, rep = condition_pd(SparseSymmetric.from_dense(corr))
    # every pivot of a matrix this well conditioned stays above the floor
    assert rep.modified_entries == 0
    assert np.array_equal(ap.to_dense(), corr)


def test_matrixmarket_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    a = random_correlation_matrix(rng, 40, 0.1)
    ap, f, _ = condition_pd(a)
    write_symmetric(tmp_path / "a.mtx", ap, comments=["note"])
    back = read_symmetric(tmp_path / "a.mtx")
    assert np.array_equal(back.to_dense(), ap.to_dense())
    write_factors(tmp_path / "f", f)
    g = read_factors(tmp_path / "f")
    assert np.array_equal(g.perm, f.perm) and np.array_equal(g.d, f.d)
    assert (g.L != f.L).nnz == 0
    b = rng.normal(size=40)
    assert np.array_equal(solve(g, b), solve(f, b))
