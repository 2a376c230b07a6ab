import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from climstat.grid import BoxKey, GridSpec, YearBoxKey
from climstat.ingest import BinnedStore
from climstat.twoscale import (ESTIMATED, StatField, climatological_iqr, climatological_mean,
                               climatological_sd, extract_series, field_summary, noise_iqr_field,
                               noise_sd_field, quantile, relative_field, yearly_aggregates)

SPEC = GridSpec()
BOX = BoxKey(1, 2, 0, 3)


def store_of(by_year, box=BOX):
    return BinnedStore.from_values(SPEC, {YearBoxKey(box, y): v for y, v in by_year.items()})


def aggs_of(by_year):
    return yearly_aggregates(store_of(by_year))


@pytest.mark.parametrize("values,p,expected", [
    ([1, 2, 3, 4], 0.5, 2.5),
    ([1, 2, 3, 4], 0.25, 1.75),
    ([7], 0.3, 7.0),
])
def test_quantile_examples(values, p, expected):
    assert quantile(values, p) == expected


def test_quantile_errors():
    with pytest.raises(ValueError):
        quantile([], 0.5)
    with pytest.raises(ValueError):
        quantile([1.0], 1.5)


sorted_lists = st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40).map(sorted)


@given(sorted_lists, st.floats(0, 1), st.floats(0, 1))
def test_quantile_properties(v, p, q):
    assert quantile(v, 0) == v[0] and quantile(v, 1) == v[-1]
    lo, hi = sorted((p, q))
    assert quantile(v, lo) <= quantile(v, hi) + 1e-9 * (1 + abs(v[-1]))
    assert np.isclose(quantile(v, p), np.quantile(v, p), rtol=1e-12, atol=1e-6)


def test_yearly_aggregate_examples():
    (a,) = aggs_of({2000: [1, 2, 3]})
    assert (a.mean_c, a.median_c, a.noise_sd, a.noise_iqr, a.count) == (2, 2, 1.0, 1.0, 3)
    (b,) = aggs_of({2000: [5]})
    assert b.mean_c == 5 and b.noise_sd is None and b.noise_iqr == 0
    (c,) = aggs_of({2000: [2, 2, 2, 2]})
    assert c.noise_sd == 0 and c.noise_iqr == 0


def test_climatological_mean_unbalanced_years():
    aggs = aggs_of({2000: [1, 3], 2001: [10]})
    m = climatological_mean(aggs, SPEC)
    assert m.get(BOX) == 6.0
    assert m.provenance[BOX] == ESTIMATED
    pooled = np.mean([1, 3, 10])
    assert pooled == pytest.approx(14 / 3)


def test_climatological_mean_thresholds_and_median():
    assert climatological_mean(aggs_of({2000: [1]}), SPEC, min_years=2).get(BOX) is None
    med = climatological_mean(aggs_of({2000: [1], 2001: [2], 2002: [9]}), SPEC, mode="median")
    assert med.kind == "median_mean" and med.get(BOX) == 2


def test_climatological_sd_iqr():
    aggs = aggs_of({2000: [1], 2001: [2], 2002: [3]})
    assert climatological_sd(aggs, SPEC).get(BOX) == 1.0
    assert climatological_iqr(aggs, SPEC).get(BOX) == 1.0
    const = aggs_of({y: [4] for y in range(2000, 2004)})
    assert climatological_sd(const, SPEC).get(BOX) == 0
    assert climatological_iqr(const, SPEC).get(BOX) == 0
    two = aggs_of({2000: [1], 2001: [2]})
    assert climatological_sd(two, SPEC, min_years=3).get(BOX) is None
    assert climatological_iqr(two, SPEC, min_years=3).get(BOX) is None


def test_noise_fields():
    assert noise_sd_field(aggs_of({2000: [1, 2, 3]}), SPEC).get(BOX) == 1.0
    # variances 1 and 9, counts 3 and 3
    aggs = aggs_of({2000: [1, 2, 3], 2001: [0, 3, 6]})
    assert noise_sd_field(aggs, SPEC).get(BOX) == pytest.approx(math.sqrt(5), rel=1e-15)
    assert noise_iqr_field(aggs, SPEC).get(BOX) == quantile([1.0, 3.0], 0.5)
    singles = aggs_of({2000: [1], 2001: [2], 2002: [3]})
    assert noise_sd_field(singles, SPEC).get(BOX) is None
    assert noise_iqr_field(singles, SPEC).get(BOX) is None


def test_relative_field():
    mean = StatField(SPEC, "mean", {BOX: 2.0, BoxKey(0, 0, 0, 0): 0.0, BoxKey(0, 0, 0, 1): 1.0})
    sd = StatField(SPEC, "sd_concentration", {BOX: 0.5, BoxKey(0, 0, 0, 0): 1.0})
    rel = relative_field(mean, sd)
    assert rel.kind == "relative_sd"
    assert rel.values == {BOX: 0.25}
    iqr = StatField(SPEC, "iqr_concentration", {BOX: 1.0})
    assert relative_field(mean, iqr).kind == "qcd"


def test_statfield_rejects_unknown_kind():
    with pytest.raises(ValueError):
        StatField(SPEC, "variance")


def test_extract_series():
    store = store_of({2000: [1, 2, 3], 2001: [10]})
    aggs = yearly_aggregates(store)
    k = YearBoxKey(BOX, 2000)
    assert extract_series(store, aggs, k, "eta").tolist() == [1, 2, 3]
    eps = extract_series(store, aggs, k, "epsilon")
    assert eps.tolist() == [-1, 0, 1]
    assert extract_series(store, aggs, BOX, "delta").tolist() == [2, 10]
    with pytest.raises(ValueError):
        extract_series(store, aggs, YearBoxKey(BOX, 1999), "eta")
    with pytest.raises(ValueError):
        extract_series(store, aggs, k, "delta")


@settings(deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30))
def test_epsilon_sums_to_zero(vals):
    store = store_of({2000: vals})
    eps = extract_series(store, yearly_aggregates(store), YearBoxKey(BOX, 2000), "epsilon")
    assert abs(eps.sum()) <= 1e-9 * max(1.0, np.abs(vals).max()) * len(vals)


year_data = st.dictionaries(st.integers(1950, 2000),
                            st.lists(st.floats(-10, 10), min_size=1, max_size=6),
                            min_size=3, max_size=10)


@settings(deadline=None, max_examples=60)
@given(year_data, st.integers(0, 3))
def test_duplicating_a_year_leaves_mean_unchanged(data, which):
    years = sorted(data)
    y = years[which % len(years)]
    dup = dict(data)
    dup[y] = data[y] * 2
    a = climatological_mean(aggs_of(data), SPEC).get(BOX)
    b = climatological_mean(aggs_of(dup), SPEC).get(BOX)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@settings(deadline=None, max_examples=60)
@given(year_data, st.floats(-50, 50), st.floats(0.1, 10))
def test_spread_fields_translation_and_scale(data, shift, scale):
    base = aggs_of(data)
    moved = aggs_of({y: [v + shift for v in vals] for y, vals in data.items()})
    scaled = aggs_of({y: [v * scale for v in vals] for y, vals in data.items()})
    for fn in (climatological_sd, climatological_iqr, noise_sd_field, noise_iqr_field):
        v0 = fn(base, SPEC).get(BOX)
        if v0 is None:
            continue
        assert fn(moved, SPEC).get(BOX) == pytest.approx(v0, abs=1e-9)
        assert fn(scaled, SPEC).get(BOX) == pytest.approx(v0 * scale, rel=1e-9, abs=1e-9)
        assert v0 >= 0


@settings(deadline=None, max_examples=40)
@given(year_data)
def test_relative_sd_nonnegative(data):
    aggs = aggs_of({y: [abs(v) for v in vals] for y, vals in data.items()})
    rel = relative_field(climatological_mean(aggs, SPEC), climatological_sd(aggs, SPEC))
    assert all(v >= 0 for v in rel.values.values())


def test_field_summary():
    f = StatField(SPEC, "mean", {BoxKey(0, 0, 0, 0): 1.0, BoxKey(0, 0, 0, 1): 2.0,
                                 BoxKey(0, 0, 0, 11): 4.0, BoxKey(0, 0, 2, 0): 5.0})
    s = field_summary(f)
    assert s["count"] == 4 and s["mean"] == 3.0
    assert [r["depth_level"] for r in s["depth_profile"]] == [0, 2]
    assert s["depth_profile"][0]["mean"] == pytest.approx(7 / 3)
    # month 0->1 and month 11->0 wrap
    assert s["monthly_change"]["count"] == 2
    assert s["monthly_change"]["mean_abs_change"] == 2.0
