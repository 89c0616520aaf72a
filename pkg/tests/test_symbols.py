import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coherentq.coherent import Fiducial
from coherentq.hilbert import SpaceConfig, canonical_ops, spectrum
from coherentq.symbols import (
    FunctionSymbol,
    InadmissibleSymbol,
    OrderedPoly,
    PolySymbol,
    SymbolSyntaxError,
    admissible,
    conditions_check,
    format_symbol,
    is_semibounded,
    lower_symbol_poly,
    parse_symbol,
    toeplitz_quantize,
    upper_from_lower_poly,
    upper_symbol,
)


def _leading(A, B, m):
    return np.max(np.abs(A[:m, :m] - B[:m, :m]))


@pytest.fixture(scope="module")
def ops(cfg64):
    return canonical_ops(cfg64)


# parsing ---------------------------------------------------------------------


def test_parse_examples():
    h = parse_symbol("0.5*p^2 + 0.5*q^2")
    assert h.coeffs == {(2, 0): 0.5, (0, 2): 0.5}
    assert parse_symbol("q^4").coeffs == {(0, 4): 1.0}
    assert parse_symbol("0.5*p^2+0.5*q^2+q^4").degree == 4
    assert parse_symbol("0").coeffs == {}
    assert parse_symbol("-2*p*q - 1e-3").coeffs == {(1, 1): -2.0, (0, 0): -1e-3}


@pytest.mark.parametrize("text,col", [("0.5*p^ + q", 8), ("p + + q", 5), ("r^2", 1), ("p q", 3), ("", 1)])
def test_parse_errors_carry_column(text, col):
    with pytest.raises(SymbolSyntaxError) as e:
        parse_symbol(text)
    assert e.value.column == col


coeff = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False).filter(lambda x: x != 0)
polys = st.dictionaries(st.tuples(st.integers(0, 4), st.integers(0, 4)), coeff, max_size=6).map(PolySymbol)


@settings(max_examples=200, deadline=None)
@given(polys)
def test_format_parse_round_trip(h):
    text = format_symbol(h)
    again = parse_symbol(text)
    assert again.coeffs == h.coeffs
    assert format_symbol(again) == text


# quantization ------------------------------------------------------------------


def test_toeplitz_of_one_is_identity(cfg64, ground64):
    H = toeplitz_quantize(PolySymbol.constant(1.0), ground64, cfg64)
    assert _leading(H, np.eye(64), 32) < 1e-6


def test_toeplitz_oscillator(cfg64, ground64, ops):
    P, Q = ops
    H = toeplitz_quantize(parse_symbol("0.5*p^2+0.5*q^2"), ground64, cfg64)
    assert _leading(H, 0.5 * (P @ P + Q @ Q + np.eye(64)), 32) < 1e-6


def _anti_wick_q4(m_max):
    """Closed form of ∫q⁴|p,q><p,q| dμ in the number basis (ħ=Ω=1)."""
    ang = {0: 6 / 16, 2: 4 / 16, -2: 4 / 16, 4: 1 / 16, -4: 1 / 16}
    T = np.zeros((m_max, m_max))
    for m in range(m_max):
        for n in range(m_max):
            c = ang.get(m - n, 0.0)
            if c:
                T[m, n] = 4 * c * math.exp(math.lgamma(3 + (m + n) / 2) - 0.5 * (math.lgamma(m + 1) + math.lgamma(n + 1)))
    return T


def test_toeplitz_q4_against_moment_oracle(cfg64, ground64):
    H = toeplitz_quantize(parse_symbol("q^4"), ground64, cfg64)
    oracle = _anti_wick_q4(32)
    assert np.max(np.abs(H[:32, :32] - oracle)) <= 1e-6 * max(1.0, np.max(np.abs(oracle)))


def test_linearity(cfg64, ground64):
    h1, h2 = parse_symbol("p^2*q"), parse_symbol("q^2 - p")
    H = toeplitz_quantize(2.0 * h1 - 3.0 * h2, ground64, cfg64)
    H1 = toeplitz_quantize(h1, ground64, cfg64)
    H2 = toeplitz_quantize(h2, ground64, cfg64)
    assert np.max(np.abs(H - (2 * H1 - 3 * H2))) < 1e-10


def test_positivity(cfg64, ground64):
    H = toeplitz_quantize(parse_symbol("p^2*q^2 + q^4"), ground64, cfg64)
    assert spectrum(0.5 * (H[:32, :32] + H[:32, :32].conj().T))[0] > -1e-8


def test_action_angle_quadrature_matches(cfg64, ground64):
    H = toeplitz_quantize(FunctionSymbol(lambda u, v: u, growth=("poly", 2)), ground64, cfg64, chart="action-angle")
    ref = toeplitz_quantize(parse_symbol("0.5*p^2+0.5*q^2"), ground64, cfg64)
    assert _leading(H, ref, 32) < 1e-6


def test_gauge_does_not_change_toeplitz(cfg64, ground64):
    h = parse_symbol("q^2 + p*q")
    a = toeplitz_quantize(h, ground64, cfg64)
    b = toeplitz_quantize(h, ground64, cfg64, gauge=lambda p, q: p * q**2)
    assert np.max(np.abs(a - b)) < 1e-10


# upper and lower symbols --------------------------------------------------------


def test_upper_symbols(cfg64, ground64, ops):
    P, Q = ops
    axis = np.linspace(-2, 2, 21)
    pp, qq = np.meshgrid(axis, axis, indexing="ij")
    up = upper_symbol(0.5 * (P @ P + Q @ Q - np.eye(64)), ground64, axis, axis, cfg64)
    assert np.max(np.abs(up.values - 0.5 * (pp**2 + qq**2))) < 1e-7
    assert np.max(np.abs(upper_symbol(np.eye(64), ground64, axis, axis, cfg64).values - 1)) < 1e-12
    assert np.max(np.abs(upper_symbol(Q, ground64, axis, axis, cfg64).values - qq)) < 1e-8


def test_lower_symbol_examples(cfg64, ground64):
    osc = lower_symbol_poly(OrderedPoly.from_text("0.5*P*P+0.5*Q*Q+0.5"), cfg64)
    assert osc.close_to(parse_symbol("0.5*p^2+0.5*q^2"))
    assert lower_symbol_poly(OrderedPoly.from_text("1"), cfg64).close_to(PolySymbol.constant(1.0))
    q2 = lower_symbol_poly(OrderedPoly.from_text("Q*Q"), cfg64)
    assert q2.close_to(parse_symbol("q^2 - 0.5"))
    H = toeplitz_quantize(q2, ground64, cfg64)
    assert _leading(H, OrderedPoly.from_text("Q*Q").matrix(cfg64), 32) < 1e-6


def test_lower_symbol_round_trip_quartic(cfg64, ground64):
    target = OrderedPoly.from_text("Q^4 + 0.5*P*Q*Q*P")
    h = lower_symbol_poly(target, cfg64)
    H = toeplitz_quantize(h, ground64, cfg64)
    assert _leading(H, target.matrix(cfg64), 24) < 1e-6


def test_weyl_symbol_of_ordered_product():
    w = OrderedPoly.from_text("P*Q").weyl_symbol(1.0)
    assert w.close_to(PolySymbol({(1, 1): 1.0, (0, 0): -0.5j}))


def test_upper_from_lower_matches_numerics(cfg64, ground64):
    h = parse_symbol("q^4 + p^2*q")
    axis = np.linspace(-1.5, 1.5, 9)
    num = upper_symbol(toeplitz_quantize(h, ground64, cfg64), ground64, axis, axis, cfg64).values
    pp, qq = np.meshgrid(axis, axis, indexing="ij")
    assert np.max(np.abs(num - upper_from_lower_poly(h, cfg64)(pp, qq))) < 1e-7


# admissibility -------------------------------------------------------------------


def test_conditions():
    assert conditions_check(parse_symbol("p^2*q^4")).cond1
    assert conditions_check(PolySymbol({})).cond2
    rep = conditions_check(FunctionSymbol(lambda p, q: np.exp(p**2), growth=("gauss", 1.0)))
    assert not rep.cond1 and not rep.cond1_at(1.0)
    with pytest.raises(InadmissibleSymbol):
        conditions_check(FunctionSymbol(lambda p, q: np.exp(p**2)))


def test_semibounded_whitelist():
    assert is_semibounded(parse_symbol("p^2 + q^4"))
    assert not is_semibounded(parse_symbol("q^3"))
    with pytest.raises(InadmissibleSymbol):
        admissible(parse_symbol("q^4 - p^2"))
    assert admissible(parse_symbol("q^3"), allow_unbounded=True).cond1
