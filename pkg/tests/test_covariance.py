import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from climstat.covariance import (CovKey, Neighborhood, PointwiseCovEstimate, SparseSymmetric,
                                 assemble_matrix, correlation_histogram, pointwise_covariances,
                                 to_correlations)
from climstat.grid import BoxKey, GridSpec, YearBoxKey, wrapped_difference
from climstat.ingest import BinnedStore
from climstat.twoscale import StatField, climatological_sd, yearly_aggregates

from oracles import brute_covariances

SPEC = GridSpec()
A = BoxKey(0, 0, 0, 0)
B = BoxKey(1, 0, 0, 0)


def aggs(data):
    """data: box -> {year: value} with one measurement per box-year."""
    store = BinnedStore.from_values(SPEC, {YearBoxKey(b, y): [v] for b, ys in data.items()
                                           for y, v in ys.items()})
    return yearly_aggregates(store)


def by_key(estimates):
    return {e.key: e for e in estimates}


def test_self_covariance_is_variance():
    ag = aggs({A: {2000: 1.0, 2001: 2.0, 2002: 3.0}})
    est = by_key(pointwise_covariances(ag, SPEC, min_support=2, max_lag=0))
    assert est[CovKey(A, A, 0)].covariance == 1.0
    assert climatological_sd(ag, SPEC).get(A) ** 2 == 1.0


def test_two_box_covariance_and_correlation():
    ag = aggs({A: {2000: 1.0, 2001: 2.0, 2002: 3.0}, B: {2000: 2.0, 2001: 4.0, 2002: 6.0}})
    est = by_key(pointwise_covariances(ag, SPEC, min_support=2, max_lag=0))
    ab = est[CovKey(A, B, 0)]
    assert ab.covariance == 2.0 and ab.support == 3
    sd = StatField(SPEC, "sd_concentration", {A: math.sqrt(2), B: math.sqrt(2)})
    corr, dropped = to_correlations([ab], sd)
    assert dropped == 0
    assert corr[0].correlation == pytest.approx(1.0, abs=1e-15)


def test_support_threshold():
    ag = aggs({A: {2000: 1.0, 2001: 2.0}, B: {2001: 5.0, 2005: 1.0}})
    est = by_key(pointwise_covariances(ag, SPEC, min_support=2, max_lag=0))
    assert CovKey(A, B, 0) not in est
    with pytest.raises(ValueError):
        pointwise_covariances(ag, SPEC, min_support=1)


def test_lagged_pairs_use_each_box_own_years():
    ag = aggs({A: {2000: 1.0, 2001: 4.0, 2002: 2.0}, B: {2001: 1.0, 2002: 3.0, 2003: 8.0}})
    est = by_key(pointwise_covariances(ag, SPEC, min_support=2, max_lag=1))
    e = est[CovKey(A, B, 1)]
    assert e.support == 3
    assert e.covariance == pytest.approx(np.cov([1, 4, 2], [1, 3, 8])[0, 1], rel=1e-15)


def test_canonical_key():
    assert CovKey.canonical(B, A, 1) == CovKey(A, B, -1)
    assert CovKey.canonical(A, A, -2) == CovKey(A, A, 2)
    assert CovKey(A, A, 0).is_variance and not CovKey(A, A, 1).is_variance


@pytest.mark.parametrize("cov,sa,sb,expected", [(0.0, 1.0, 2.0, 0.0), (0.005, 0.01, 0.05, 0.5),
                                                 (5.0, 1.0, 1.0, 1.0), (-5.0, 1.0, 1.0, -1.0)])
def test_correlation_floor_and_clamp(cov, sa, sb, expected):
    sd = StatField(SPEC, "sd_concentration", {A: sa, B: sb})
    (e,), _ = to_correlations([PointwiseCovEstimate(CovKey(A, B, 0), cov, None, 40)], sd)
    assert e.correlation == pytest.approx(expected, rel=1e-12)


def test_correlations_need_sd_field():
    with pytest.raises(ValueError):
        to_correlations([], StatField(SPEC, "mean"))
    sd = StatField(SPEC, "sd_concentration", {A: 1.0})
    out, dropped = to_correlations([PointwiseCovEstimate(CovKey(A, B, 0), 1.0, None, 9)], sd)
    assert out == [] and dropped == 1


def _random_data(rng, n_boxes, n_years):
    boxes = [BoxKey(int(rng.integers(0, 3)), int(rng.integers(0, 2)), 0, int(rng.integers(0, 2)))
             for _ in range(n_boxes)]
    data = {}
    for b in set(boxes):
        years = sorted(set(int(y) for y in rng.integers(2000, 2000 + n_years, n_years)))
        data[b] = {y: float(rng.normal()) for y in years}
    return data


def _near(a, b):
    d = wrapped_difference(a, b, SPEC)
    return all(abs(x) <= 1 for x in d)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    data = _random_data(rng, 4, 8)
    est = pointwise_covariances(aggs(data), SPEC, min_support=2, max_lag=2)
    ref = brute_covariances(data, 2, 2, _near)
    got = {(e.key.box_a, e.key.box_b, e.key.lag): (e.covariance, e.support) for e in est}
    assert got.keys() == ref.keys()
    for k, (c, n) in ref.items():
        assert got[k][1] == n
        assert got[k][0] == pytest.approx(c, rel=1e-12, abs=1e-14)


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2**32 - 1), st.integers(-50, 50))
def test_annual_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    data = _random_data(rng, 4, 8)
    moved = {b: {y + shift: v for y, v in ys.items()} for b, ys in data.items()}
    a = pointwise_covariances(aggs(data), SPEC, min_support=2)
    b = pointwise_covariances(aggs(moved), SPEC, min_support=2)
    assert a == b


def test_workers_do_not_change_output():
    rng = np.random.default_rng(5)
    data = {BoxKey(i % 6, i // 6, 0, 0): {y: float(rng.normal()) for y in range(1960, 2000)}
            for i in range(24)}
    ag = aggs(data)
    serial = pointwise_covariances(ag, SPEC, min_support=30)
    assert serial == pointwise_covariances(ag, SPEC, min_support=30, workers=4)
    assert [e.key for e in serial] == sorted(e.key for e in serial)


def test_neighborhood_restricts_pairs():
    data = {A: {y: float(y % 3) for y in range(2000, 2010)},
            BoxKey(2, 0, 0, 0): {y: float(y % 4) for y in range(2000, 2010)}}
    est = pointwise_covariances(aggs(data), SPEC, min_support=2)
    assert all(e.key.box_a == e.key.box_b for e in est)
    wide = pointwise_covariances(aggs(data), SPEC, min_support=2, neighborhood=Neighborhood(lon=2))
    assert any(e.key.box_a != e.key.box_b for e in wide)


def est(a, b, lag, r):
    return PointwiseCovEstimate(CovKey(a, b, lag), r, r, 40)


def test_assemble_examples():
    pts = [YearBoxKey(A, 2000), YearBoxKey(A, 2001), YearBoxKey(B, 2000)]
    m = assemble_matrix([], pts)
    assert np.array_equal(m.to_dense(), np.eye(3))
    m = assemble_matrix([est(A, B, 0, 0.005)], pts)
    assert m.nnz == 3
    m = assemble_matrix([est(A, B, 0, 0.5)], pts)
    expected = np.eye(3)
    expected[0, 2] = expected[2, 0] = 0.5
    assert np.array_equal(m.to_dense(), expected)


def test_assemble_lag_and_errors():
    pts = [YearBoxKey(A, 2000), YearBoxKey(A, 2001), YearBoxKey(B, 2001), YearBoxKey(B, 2002)]
    m = assemble_matrix([est(A, B, 1, 0.3), est(A, A, 1, 0.2)], pts).to_dense()
    assert m[0, 2] == 0.3 and m[1, 3] == 0.3 and m[0, 3] == 0.0
    assert m[0, 1] == 0.2
    with pytest.raises(ValueError):
        assemble_matrix([est(A, B, 0, 0.3), est(A, B, 0, 0.4)], pts)
    with pytest.raises(ValueError):
        assemble_matrix([PointwiseCovEstimate(CovKey(A, B, 0), 1.0, None, 3)], pts)
    with pytest.raises(ValueError):
        assemble_matrix([], pts + pts[:1])


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_assembled_storage_bound(seed):
    rng = np.random.default_rng(seed)
    data = _random_data(rng, 4, 8)
    ag = aggs(data)
    raw = pointwise_covariances(ag, SPEC, min_support=2)
    sd = climatological_sd(ag, SPEC, min_years=2)
    corr, _ = to_correlations(raw, sd)
    pts = sorted(a.key for a in ag)
    m = assemble_matrix(corr, pts)
    assert np.array_equal(m.diagonal(), np.ones(len(pts)))
    dense = m.to_dense()
    assert np.array_equal(dense, dense.T)
    pairs = sum(1 for e in corr if not e.key.is_variance and abs(e.correlation) >= 0.01
                for p in pts if p.box == e.key.box_a
                and YearBoxKey(e.key.box_b, p.year + e.key.lag) in set(pts))
    assert m.nnz <= pairs + len(pts)


def test_sparse_symmetric_validation():
    with pytest.raises(ValueError):
        SparseSymmetric(2, [1], [0], [1.0])
    with pytest.raises(ValueError):
        SparseSymmetric(2, [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        SparseSymmetric.from_dense([[1, 2], [3, 1]])
    m = SparseSymmetric.from_dense([[1, 0.5, 0], [0.5, 1, 0], [0, 0, 2]])
    assert m.nnz == 4
    assert np.allclose(m.matvec(np.ones(3)), [1.5, 1.5, 2])
    assert SparseSymmetric.from_scipy(m.to_scipy()).to_dense().tolist() == m.to_dense().tolist()


def test_correlation_histogram():
    es = [est(A, B, 0, r) for r in (-1.0, -0.5, 0.005, 0.5, 0.52, 1.0)]
    es = [PointwiseCovEstimate(CovKey(A, B, i), e.covariance, e.correlation, 40)
          for i, e in enumerate(es)]
    hist = correlation_histogram(es)
    assert len(hist) == 40
    assert sum(c for _, _, c in hist) == 5
    assert hist[0][2] == 1 and hist[-1][2] == 1
    assert hist[30] == pytest.approx((0.5, 0.55, 2))
