import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quakecast import gmice


def test_unit_pga_gives_intercept():
    assert gmice.pga_to_intensity(1.0) == 2.03
    assert gmice.convert_pga(1.0) == gmice.IntensityResult(2.03, False, False)


def test_ten_cm_s2():
    assert gmice.pga_to_intensity(10.0) == pytest.approx(4.31, abs=1e-12)


def test_low_pga_clamped_to_floor():
    raw = 2.03 + 2.28 * math.log10(0.5)
    assert raw == pytest.approx(1.3436, abs=1e-4)
    res = gmice.convert_pga(0.5)
    assert res.value == 2.0 and res.clamped and not res.degenerate


def test_high_pga_clamped_to_ceiling():
    res = gmice.convert_pga(1e6)
    assert res.value == 9.5 and res.clamped


@pytest.mark.parametrize("pga", [0.0, -3.0])
def test_non_positive_pga_is_degenerate(pga):
    res = gmice.convert_pga(pga)
    assert res.value == 2.0 and res.degenerate
    assert gmice.pga_to_intensity(pga) == 2.0
    assert gmice.clamp_flags(pga)


def test_inverse_examples():
    assert gmice.intensity_to_pga(2.03) == pytest.approx(1.0, rel=1e-12)
    assert gmice.intensity_to_pga(4.31) == pytest.approx(10.0, rel=1e-9)


@pytest.mark.parametrize("bad", [1.99, 9.51, float("nan")])
def test_inverse_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        gmice.intensity_to_pga(bad)


def test_vectorised_matches_scalar(rng):
    pga = 10 ** rng.uniform(-3, 5, size=200)
    vec = gmice.pga_to_intensity(pga)
    assert np.array_equal(vec, [gmice.convert_pga(p).value for p in pga])
    assert np.array_equal(gmice.clamp_flags(pga), [gmice.convert_pga(p).clamped for p in pga])


@given(st.floats(min_value=-10, max_value=1e9, allow_nan=False))
def test_output_within_scale(pga):
    v = gmice.pga_to_intensity(pga)
    assert 2.0 <= v <= 9.5


@given(st.floats(min_value=1e-6, max_value=1e8), st.floats(min_value=1e-6, max_value=1e8))
def test_monotone(a, b):
    lo, hi = sorted((a, b))
    assert gmice.pga_to_intensity(lo) <= gmice.pga_to_intensity(hi)


@given(st.floats(min_value=1e-6, max_value=1e8))
def test_clamp_flag_iff_raw_outside(pga):
    raw = 2.03 + 2.28 * math.log10(pga)
    assert gmice.convert_pga(pga).clamped == (raw < 2.0 or raw > 9.5)


@given(st.floats(min_value=2.03, max_value=9.5))
def test_round_trip(i):
    assert gmice.pga_to_intensity(gmice.intensity_to_pga(i)) == pytest.approx(i, rel=1e-9)
