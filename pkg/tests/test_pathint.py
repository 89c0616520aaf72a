import warnings

import numpy as np
import pytest

from coherentq.charts import get_chart
from coherentq.coherent import overlap_analytic
from coherentq.hilbert import SpaceConfig, canonical_ops
from coherentq.pathint import (
    TASK_PAIRS,
    GridTailError,
    LatticeConfig,
    UnsupportedHamiltonian,
    dk_expectation,
    dk_propagator,
    free_kernel,
    fresnel_quadrature,
    fresnel_toy,
    lattice_propagator,
    matrix_propagator,
    mehler_kernel,
    refine_bridge,
    sample_bridge,
    sample_bridges,
    stratonovich_action,
    stratonovich_integral,
)
from coherentq.symbols import parse_symbol

CFG = SpaceConfig(48)
ORIGIN, ONE = (0.0, 0.0), (1.0, 0.0)
OSC = parse_symbol("0.5*p^2+0.5*q^2")
ZERO = parse_symbol("0")


def _within(est, target, k=3.0, extra=0.0):
    return abs(est.mean - target) <= k * est.stderr + extra


# Fresnel ---------------------------------------------------------------------


def test_fresnel_examples():
    assert fresnel_toy(1.0) == pytest.approx(np.sqrt(np.pi * (1 + 1j)), abs=1e-14)
    assert abs(fresnel_toy(1e4) - np.sqrt(2j * np.pi)) < 1e-2
    assert abs(fresnel_quadrature(1.0) - fresnel_toy(1.0)) < 1e-8


def test_fresnel_monotone_approach():
    nus = np.logspace(-1, 5, 25)
    gap = [abs(fresnel_toy(n) - np.sqrt(2j * np.pi)) for n in nus]
    assert np.all(np.diff(gap) < 0)


@pytest.mark.parametrize("nu", [0.0, -1.0])
def test_fresnel_rejects_nonpositive(nu):
    with pytest.raises(ValueError):
        fresnel_toy(nu)


# lattice ---------------------------------------------------------------------


@pytest.mark.parametrize("N", [1, 4, 9])
def test_free_particle_exact(N):
    lat = LatticeConfig(N, 1.0, 0.0, 1.0)
    assert abs(lattice_propagator(parse_symbol("0.5*p^2"), lat) - free_kernel(1.0, 0.0, 1.0)) < 1e-6


def test_free_particle_mass_and_hbar():
    h = parse_symbol("0.25*p^2")  # m = 2
    cfg = SpaceConfig(8, hbar=0.5)
    got = lattice_propagator(h, LatticeConfig(3, 0.7, 0.2, -0.4), cfg)
    assert abs(got - free_kernel(0.7, 0.2, -0.4, mass=2.0, hbar=0.5)) < 1e-6


def test_oscillator_first_order():
    ref = mehler_kernel(1.0, 0.0, 1.0)
    e64 = abs(lattice_propagator(OSC, LatticeConfig(64, 1.0, 0.0, 1.0)) - ref)
    e128 = abs(lattice_propagator(OSC, LatticeConfig(128, 1.0, 0.0, 1.0)) - ref)
    assert 1.5 <= e64 / e128 <= 3


def test_composition():
    """N=3 over T equals two N=1 halves glued over the middle contour."""
    qa, qb, T = 0.1, 0.8, 0.6
    kw = dict(half_width=6.0, nodes=401)
    whole = lattice_propagator(OSC, LatticeConfig(3, T, qa, qb, **kw))
    rot = np.exp(1j * np.pi / 4)
    s = np.linspace(-6, 6, 401)
    w = np.full(s.size, s[1] - s[0]) * rot
    w[[0, -1]] *= 0.5
    mids = 0.5 * (qa + qb) + rot * s
    left = np.array([lattice_propagator(OSC, LatticeConfig(1, T / 2, qa, m, **kw)) for m in mids])
    right = np.array([lattice_propagator(OSC, LatticeConfig(1, T / 2, m, qb, **kw)) for m in mids])
    assert abs(np.sum(left * right * w) - whole) < 1e-8 * abs(whole)


def test_short_time_single_step():
    # N=1 with V: modulus grows like the free δ-family and the phase tends to the free one
    for T in (1e-1, 1e-2, 1e-3):
        k = lattice_propagator(OSC, LatticeConfig(1, T, 0.3, 0.3, half_width=6 * np.sqrt(T)))
        assert abs(k / free_kernel(T, 0.3, 0.3) - 1) < 0.1 * T


@pytest.mark.parametrize("text", ["p^2*q", "p^4", "q^3", "-q^4", "-0.5*p^2"])
def test_lattice_rejects(text):
    with pytest.raises(UnsupportedHamiltonian):
        lattice_propagator(parse_symbol(text), LatticeConfig(2, 1.0, 0.0, 0.0))


def test_lattice_grid_tail():
    with pytest.raises(GridTailError):
        lattice_propagator(OSC, LatticeConfig(4, 1.0, 0.0, 1.0, half_width=0.5, nodes=51))


# bridges -----------------------------------------------------------------------


def test_bridge_endpoints_pinned():
    b = sample_bridge(3.0, 2.0, ((0.4, -1.0), (0.4, -1.0)), 64, seed=5)
    assert (b.p[0], b.q[0], b.p[-1], b.q[-1]) == (0.4, -1.0, 0.4, -1.0)


def test_bridge_midpoint_variance():
    n = 10**5
    _, p, q = sample_bridges(n, 2.0, 1.0, ((0, 0), (0, 0)), 64, seed=11)
    x = q[:, 32]
    var = x.var()
    se = var * np.sqrt(2 / (n - 1))
    assert abs(var - 0.5) < 3 * se
    assert abs(p[:, 32].var() - 0.5) < 3 * se


def test_bridge_determinism():
    a = sample_bridge(1.0, 1.0, ((0, 0), (1, 1)), 32, seed=9)
    b = sample_bridge(1.0, 1.0, ((0, 0), (1, 1)), 32, seed=9)
    assert np.array_equal(a.p, b.p) and np.array_equal(a.q, b.q)


def test_refine_keeps_points():
    b = sample_bridge(1.0, 1.0, ((0, 0), (1, 1)), 16, seed=2)
    r = refine_bridge(b, seed=3)
    assert np.array_equal(r.p[::2], b.p) and r.times.size == 33


# Stratonovich --------------------------------------------------------------------


def test_constant_momentum():
    q = np.random.default_rng(0).normal(size=50)
    q[0], q[-1] = -0.3, 1.1
    assert stratonovich_integral(np.full(50, 2.5), q) == pytest.approx(2.5 * 1.4, abs=1e-13)


def test_circle_area():
    r = 1.7
    t = np.linspace(0, 2 * np.pi, 10**4 + 1)
    # q = r cos t, p = r sin t runs clockwise in (q, p), i.e. positively for ∮p dq
    assert abs(stratonovich_integral(r * np.sin(t), -r * np.cos(t)) - np.pi * r**2) < 1e-4


def test_action_assembly():
    b = sample_bridge(1.0, 1.0, ((0.2, 0.0), (0.5, 1.0)), 128, seed=1)
    G = lambda p, q: p * q  # noqa: E731
    S = stratonovich_action(b, OSC, hbar=0.5, gauge=G)
    ref = (stratonovich_integral(b.p, b.q) + 0.5 - 0.0
           - np.trapezoid(OSC(b.p, b.q), b.times))
    assert S == pytest.approx(1j * ref / 0.5, abs=1e-12)


def _mapped_gap(chart, path):
    u, v = chart.forward(path.p, path.q)
    if chart.periodic_v is not None:
        v = np.unwrap(v, period=chart.periodic_v)
    F = chart.generating
    return abs(stratonovich_integral(u, v) - stratonovich_integral(path.p, path.q)
               - (F(path.p[-1], path.q[-1]) - F(path.p[0], path.q[0])))


def test_rotation_invariance_exact():
    b = sample_bridge(1.0, 1.0, ((0.0, 0.0), (1.0, -0.5)), 256, seed=4)
    assert _mapped_gap(get_chart("rotation-45"), b) < 1e-12


def test_action_angle_invariance_refines():
    chart = get_chart("action-angle")
    b = sample_bridge(0.05, 1.0, ((2.0, 0.0), (0.0, 2.0)), 2**6, seed=8)
    gaps = []
    for k in range(8):
        gaps.append(_mapped_gap(chart, b))
        b = refine_bridge(b, seed=100 + k)
    # at least as fast as steps^{-1/2} over the dyadic sequence
    assert gaps[-1] <= gaps[0] * 2 ** (-0.5 * 7) * 2
    assert gaps[-1] < 1e-3


# Wiener-regularized propagator -----------------------------------------------------------


def test_dk_free_overlap():
    est = dk_propagator(ZERO, 40.0, 1.0, ORIGIN, ONE, n_samples=10**5, seed=3)
    exact = overlap_analytic(ONE, ORIGIN, CFG)
    drift = abs(dk_expectation(ZERO, 10.0, 1.0, ORIGIN, ONE) - dk_expectation(ZERO, 40.0, 1.0, ORIGIN, ONE))
    assert _within(est, exact, extra=drift)


def test_dk_normalization():
    # convergence is governed by νT, so short times need large ν
    est = dk_propagator(ZERO, 400.0, 0.02, (0.3, -0.2), (0.3, -0.2), n_samples=10**5, seed=4)
    assert _within(est, 1.0, extra=1e-3)


def test_dk_short_time_kernel():
    est = dk_propagator(ZERO, 800.0, 0.05, ORIGIN, ONE, n_samples=10**5, seed=6)
    assert _within(est, overlap_analytic(ONE, ORIGIN, CFG), extra=1e-3)


def test_dk_hermitian():
    a, b = (0.2, -0.3), (0.6, 0.4)
    fwd = dk_propagator(ZERO, 40.0, 0.7, a, b, n_samples=10**5, seed=1)
    back = dk_propagator(ZERO, 40.0, 0.7, b, a, n_samples=10**5, seed=2)
    assert abs(fwd.mean - np.conj(back.mean)) <= 3 * np.hypot(fwd.stderr, back.stderr)


def test_dk_adjoint_with_hamiltonian():
    # (e^{-iHT})† = e^{-i(-H)T}; checked against the exact estimator mean
    a, b = (0.2, -0.3), (0.6, 0.4)
    fwd = dk_propagator(OSC, 20.0, 0.7, a, b, n_samples=10**5, seed=1)
    adj = np.conj(dk_expectation(parse_symbol("-0.5*p^2-0.5*q^2"), 20.0, 0.7, b, a))
    assert _within(fwd, adj)


def test_dk_time_reversal():
    # h even in p: <b|U|a> = <Θa|U|Θb> with Θ(p, q) = (-p, q)
    a, b = (0.2, -0.3), (0.6, 0.4)
    fwd = dk_propagator(OSC, 20.0, 0.7, a, b, n_samples=10**5, seed=1)
    rev = dk_propagator(OSC, 20.0, 0.7, (-b[0], b[1]), (-a[0], a[1]), n_samples=10**5, seed=2)
    assert abs(fwd.mean - rev.mean) <= 3 * np.hypot(fwd.stderr, rev.stderr)


def test_dk_determinism_and_workers():
    n = 4 * TASK_PAIRS + 100
    a = dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=n, seed=77)
    b = dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=n, seed=77)
    c = dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=n, seed=77, workers=2)
    assert a == b == c
    assert a.mean != dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=n, seed=78).mean


def test_dk_drift_decreases():
    exact = overlap_analytic(ONE, ORIGIN, CFG)
    err = [abs(dk_expectation(ZERO, nu, 1.0, ORIGIN, ONE) - exact) for nu in (5, 10, 20, 40)]
    assert np.all(np.diff(err) < 0)


def test_dk_oscillator_expectation_converges():
    P, Q = canonical_ops(CFG)
    oracle = matrix_propagator(0.5 * (P @ P + Q @ Q) + 0.5 * np.eye(CFG.dim), 1.0, ORIGIN, ONE, cfg=CFG)
    err = [abs(dk_expectation(OSC, nu, 1.0, ORIGIN, ONE) - oracle) for nu in (10, 20, 40, 80)]
    assert np.all(np.diff(err) < 0)
    # first order in 1/ν
    assert 1.6 < err[-2] / err[-1] < 2.4


def test_dk_bridge_matches_slice():
    kw = dict(n_samples=2 * 10**4, seed=12)
    s = dk_propagator(OSC, 2.0, 0.5, ORIGIN, ONE, **kw)
    b = dk_propagator(OSC, 2.0, 0.5, ORIGIN, ONE, method="bridge", steps=512, **kw)
    assert abs(s.mean - b.mean) <= 3 * np.hypot(s.stderr, b.stderr) + 5e-3


def test_dk_gauge_boundary_term():
    G = lambda p, q: 0.3 * p * q + q  # noqa: E731
    base = dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=2000, seed=5)
    gauged = dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=2000, seed=5, gauge=G)
    assert gauged.mean == pytest.approx(base.mean * np.exp(1j * (G(*ONE) - G(*ORIGIN))), abs=1e-14)
    # the exact mean matches the overlap of gauged coherent states
    ex = dk_expectation(ZERO, 400.0, 0.05, ORIGIN, ONE, gauge=G)
    P, Q = canonical_ops(CFG)
    ref = matrix_propagator(0 * P, 0.05, ORIGIN, ONE, cfg=CFG, gauge=G)
    assert abs(ex - ref) < 1e-3


def test_dk_frequency_scaling():
    cfg = SpaceConfig(48, 1.0, 2.0)
    exact = overlap_analytic(ONE, ORIGIN, cfg)
    lo = abs(dk_expectation(ZERO, 20.0, 1.0, ORIGIN, ONE, cfg=cfg) - exact)
    hi = abs(dk_expectation(ZERO, 80.0, 1.0, ORIGIN, ONE, cfg=cfg) - exact)
    assert hi < lo and hi < 1e-3


def test_dk_precision_warning():
    with pytest.warns(RuntimeWarning, match="increase n_samples"):
        dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=100, seed=1, target_rel_stderr=1e-6)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=100, seed=1, target_rel_stderr=10.0)


def test_dk_rejects():
    with pytest.raises(UnsupportedHamiltonian):
        dk_expectation(parse_symbol("0.5*p^2+q^4"), 10.0, 1.0, ORIGIN, ONE)
    with pytest.raises(ValueError):
        dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=2)
    with pytest.raises(ValueError):
        dk_propagator(OSC, 10.0, 1.0, ORIGIN, ONE, n_samples=10, method="euler")
