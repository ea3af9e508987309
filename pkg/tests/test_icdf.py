import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtri

from qwgn import icdf
from qwgn.icdf import (GrnWord, build_table, convert, crest_factor, decompose, evaluate,
                       icdf_reference, ideal_magnitude, urn_to_grn)

mpmath.mp.dps = 40
ULP = 2.0 ** -10


def mp_quantile(u) -> float:
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(u) - 1))


# --- icdf_reference -------------------------------------------------------

def test_reference_center():
    assert icdf_reference(0.5) == 0.0


def test_reference_one_sigma():
    assert icdf_reference(0.841344746) == pytest.approx(1.0, abs=1e-6)


def test_reference_crest_point_w12():
    assert icdf_reference(1 - 2.0 ** -12) == pytest.approx(3.48, abs=0.02)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_reference_domain(u):
    with pytest.raises(ValueError):
        icdf_reference(u)


def test_reference_matches_mpmath_to_2_pow_40():
    us = np.concatenate([
        np.ldexp(1.0, -np.arange(1, 40)),
        np.linspace(1e-6, 1 - 1e-6, 301),
        1 - np.ldexp(1.0, -np.arange(2, 40)),
        [0.02425, 0.97575, 0.0242, 0.0243],
    ])
    got = icdf_reference(us)
    want = np.array([mp_quantile(u) for u in us])
    assert np.max(np.abs(got - want)) <= 2.0 ** -40


def test_reference_array_and_scalar_agree():
    us = np.array([0.1, 0.5, 0.9])
    assert list(icdf_reference(us)) == [icdf_reference(u) for u in us]


@given(st.floats(min_value=1e-300, max_value=1 - 1e-16))
@settings(max_examples=200, deadline=None)
def test_reference_odd_symmetry(u):
    if not 0 < u < 1:
        return
    v = 1.0 - u
    if not 0 < v < 1 or 1.0 - v != u:
        return
    assert icdf_reference(u) == pytest.approx(-icdf_reference(v), abs=1e-12)


# --- crest factor -----------------------------------------------------------

@pytest.mark.parametrize("w,cf", [(12, 3.5), (16, 4.2), (24, 5.3), (32, 6.2)])
def test_crest_factor_table(w, cf):
    assert crest_factor(w) == pytest.approx(cf, abs=0.05)


@pytest.mark.parametrize("w", [2, 3, 12, 16, 24, 32, 48])
def test_crest_factor_matches_erfinv(w):
    want = float(mpmath.sqrt(2) * mpmath.erfinv(1 - mpmath.mpf(2) ** (1 - w)))
    assert crest_factor(w) == pytest.approx(want, abs=1e-12)


def test_crest_factor_w2():
    assert crest_factor(2) == pytest.approx(float(mpmath.sqrt(2) * mpmath.erfinv(0.5)), abs=1e-14)


# --- decompose ------------------------------------------------------------

def string_decompose(value: int, w: int):
    """Bit-string oracle for the LZD / sub / barrel-shift split."""
    s = format(value, f"0{w}b")
    sign, mag = int(s[0]), s[1:]
    if "1" not in mag:
        return sign, True, 0, 0, 0
    z = mag.index("1")
    after = mag[z + 1:]
    sub = int((after[:2] + "00")[:2], 2)
    xs = (after[2:] + "0" * 11)[:11]
    return sign, False, z, sub, int(xs, 2)


def test_decompose_zero_magnitude():
    d = decompose(0x800, 12)
    assert d.is_zero and d.sign == 1


def test_decompose_top_bit():
    d = decompose(0b10000000000, 12)
    assert (d.sign, d.z, d.sub, d.x, d.is_zero) == (0, 0, 0, 0, False)


def test_decompose_hand_trace_w16():
    d = decompose(0b000101101001011, 16)
    assert (d.z, d.sub, d.x) == (3, 0b01, 0b10100101100)


@pytest.mark.parametrize("w", [12, 16, 24, 32])
@given(data=st.data())
@settings(max_examples=300, deadline=None)
def test_decompose_matches_string_oracle(w, data):
    v = data.draw(st.integers(min_value=0, max_value=(1 << w) - 1))
    d = decompose(v, w)
    assert (d.sign, d.is_zero, d.z, d.sub, d.x) == string_decompose(v, w)


def test_decompose_exhaustive_w12():
    v = np.arange(1 << 12)
    sign, z, sub, x, zero = icdf.decompose_array(v, 12)
    for i in range(0, 1 << 12, 7):
        assert (sign[i], zero[i], z[i], sub[i], x[i]) == string_decompose(i, 12)
    assert np.all(z[~zero] <= 10) and np.all(x < 2 ** 11)


def test_decompose_rejects_bad_width():
    with pytest.raises(ValueError):
        decompose(1, 13)


# --- table ----------------------------------------------------------------

@pytest.mark.parametrize("w", [12, 16, 24, 32])
def test_table_shape_and_widths(w):
    t = build_table(w)
    assert t.n_entries == 4 * (w - 1)
    for arr, bits in ((t.c0, 35), (t.c1, 20), (t.c2, 7)):
        assert arr.min() >= -(1 << (bits - 1)) and arr.max() < (1 << (bits - 1))
    # exponents are the largest that fit: one more bit overflows some entry
    for arr, bits in ((t.c0, 35), (t.c1, 20), (t.c2, 7)):
        assert 2 * np.max(np.abs(arr)) + 1 > (1 << (bits - 1)) - 1


@pytest.mark.parametrize("w", [12, 16, 24, 32])
def test_table_fit_error_within_two_ulp(w):
    assert build_table(w).max_fit_error.max() <= 2.0 ** -9


@pytest.mark.parametrize("w", [12, 16, 24, 32])
def test_deepest_entry_c0_is_crest_factor(w):
    t = build_table(w)
    c0 = t.c0[w - 2, 0] / 2.0 ** t.f0
    assert c0 == pytest.approx(crest_factor(w), abs=2.0 ** -9)


def test_table_roundtrip_bytes():
    t = build_table(16)
    back = icdf.CoefficientTable.from_bytes(t.to_bytes())
    assert (back.width, back.f0, back.f1, back.f2) == (t.width, t.f0, t.f1, t.f2)
    for a, b in ((back.c0, t.c0), (back.c1, t.c1), (back.c2, t.c2)):
        assert np.array_equal(a, b)
    assert len(t.to_bytes()) == 10 + 13 * 60


def test_table_file_rejects_garbage():
    with pytest.raises(ValueError):
        icdf.CoefficientTable.from_bytes(b"XXXX" + bytes(100))


# --- datapath -------------------------------------------------------------

def horner_oracle(t, z, sub, x):
    """Plain-int Horner with the documented alignments; truncation toward zero."""
    def align(v, s):
        if s <= 0:
            return v << -s
        q = abs(v) >> s
        return -q if v < 0 else q

    s1 = align(int(t.c2[z, sub]) * x, t.f2 + 11 - t.f1) + int(t.c1[z, sub])
    s2 = align(s1 * x, t.f1 + 11 - t.f0) + int(t.c0[z, sub])
    return min(max(align(s2, t.f0 - 10), 0), 2 ** 13 - 1)


@pytest.mark.parametrize("w", [12, 16, 24, 32])
def test_vector_datapath_matches_int_oracle(w):
    t = build_table(w)
    rng = np.random.default_rng(w)
    v = rng.integers(0, 1 << w, 3000, dtype=np.uint64)
    sign, z, sub, x, zero = icdf.decompose_array(v, w)
    _, mag = icdf.evaluate_array(t, sign, z, sub, x, zero)
    for i in range(v.size):
        want = 0 if zero[i] else horner_oracle(t, int(z[i]), int(sub[i]), int(x[i]))
        assert mag[i] == want


def test_evaluate_zero():
    g = urn_to_grn(0x800, 12)
    assert g.magnitude == 0 and g.value == 0.0
    assert urn_to_grn(0, 12).value == 0.0


def test_evaluate_deepest_tail_w12():
    g = urn_to_grn(1, 12)
    want = icdf_reference(1 - 2.0 ** -12) * 1024     # 3570.79
    assert abs(g.magnitude - want) <= 2
    assert g.sign == 0 and g.magnitude == 3570


def test_evaluate_checks_width():
    with pytest.raises(ValueError):
        evaluate(build_table(16), decompose(5, 12))


@pytest.mark.parametrize("w", [12, 16])
def test_exhaustive_accuracy(w):
    v = np.arange(1 << w, dtype=np.uint64)
    sign, mag = convert(v, w)
    err = np.abs(mag * ULP - ideal_magnitude(v, w))
    assert err.max() <= 2 * ULP


@pytest.mark.parametrize("w", [12, 16])
def test_ideal_mapping_against_ndtri(w):
    m = np.arange(1, 1 << (w - 1))
    assert np.allclose(ideal_magnitude(m, w), -ndtri(m / 2.0 ** w), atol=1e-12)


@pytest.mark.parametrize("w", [12, 16])
def test_max_output_equals_crest_factor(w):
    _, mag = convert(np.arange(1 << w, dtype=np.uint64), w)
    assert abs(mag.max() * ULP - crest_factor(w)) <= 2 * ULP


def test_sign_flip_negates_exactly():
    w = 12
    v = np.arange(1 << (w - 1), dtype=np.uint64)
    s0, m0 = convert(v, w)
    s1, m1 = convert(v | np.uint64(1 << (w - 1)), w)
    assert np.array_equal(icdf.to_codes(s0, m0), -icdf.to_codes(s1, m1))


def test_monotone_within_one_ulp():
    w = 12
    m = np.arange(1, 1 << (w - 1), dtype=np.uint64)
    _, mag = convert(m, w)
    rises = np.diff(mag)
    assert rises.max() <= 1
    assert np.all(np.diff(ideal_magnitude(m, w)) < 0)


def test_exhaustive_distribution_w12():
    w = 12
    v = np.arange(1 << w, dtype=np.uint64)
    x = icdf.to_real(*convert(v, w))
    assert x.sum() == 0.0
    ideal = ideal_magnitude(v, w)
    ideal_q = np.floor(ideal * 1024) / 1024
    assert x.var() == pytest.approx(np.mean(ideal_q ** 2), rel=0.01)


def test_grn_word_fields():
    g = GrnWord(1, 1024)
    assert g.value == -1.0 and g.code == -1024
    with pytest.raises(ValueError):
        GrnWord(0, 1 << 13)
