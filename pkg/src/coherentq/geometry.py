"""Phase-space geometry read off the coherent states.

Differentials of |p,q> are taken by central differences with one Richardson
halving; the same derivative vectors give the canonical one-form
θ = iħ<ψ|dψ> and the metric dσ² = 2ħ²(<dψ|dψ> - |<ψ|dψ>|²).  Curvature,
pushforwards and loop integrals work on callables so that any chart can be
fed through them.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize
from skimage.measure import find_contours

from .charts import get_chart
from .coherent import coherent_states, trusted
from .hilbert import TruncationError, variances
from .symbols import FunctionSymbol, PolySymbol

FD_REL_STEP = 1e-4
RICHARDSON_TOL = 1e-6
CURVATURE_STEP = 1e-2
LOOP_GRID = 512


class FiniteDifferenceError(RuntimeError):
    pass


class OpenLevelSet(ValueError):
    pass


@dataclass(frozen=True)
class OneForm:
    """θ = theta_u du + theta_v dv on a chart."""

    theta_u: Callable
    theta_v: Callable
    chart: str = "cartesian"

    def __call__(self, u, v):
        return self.theta_u(u, v), self.theta_v(u, v)


@dataclass(frozen=True)
class MetricTensor:
    """dσ² = A du² + B du dv + C dv² on a chart."""

    A: Callable
    B: Callable
    C: Callable
    chart: str = "cartesian"

    def __call__(self, u, v):
        return self.A(u, v), self.B(u, v), self.C(u, v)

    def matrix(self, u, v):
        a, b, c = (np.asarray(x, float) for x in self(u, v))
        a, b, c = np.broadcast_arrays(a, b, c)
        return np.stack([np.stack([a, b / 2], -1), np.stack([b / 2, c], -1)], -2)

    def positive_definite(self, u, v):
        a, b, c = self(u, v)
        return bool(np.all(np.asarray(a) > 0) and np.all(4 * np.asarray(a) * np.asarray(c) - np.asarray(b) ** 2 > 0))

    @classmethod
    def constant(cls, A, B, C, chart="cartesian"):
        def const(x):
            return lambda u, v: np.full(np.broadcast(np.asarray(u), np.asarray(v)).shape, float(x))

        return cls(const(A), const(B), const(C), chart)


# ---------------------------------------------------------------------------
# coherent-state differentials


def _central(p, q, fid, cfg, gauge, delta):
    n = p.size
    pts_p = np.concatenate([p + delta, p - delta, p, p])
    pts_q = np.concatenate([q, q, q + delta, q - delta])
    V = coherent_states(pts_p, pts_q, fid, cfg, gauge=gauge, check=False)
    d_p = (V[:n] - V[n:2 * n]) / (2 * delta[:, None])
    d_q = (V[2 * n:3 * n] - V[3 * n:]) / (2 * delta[:, None])
    return d_p, d_q


def state_derivatives(p, q, fid, cfg, gauge=None, rel_step=FD_REL_STEP):
    """ψ and its p/q derivatives at each label (Richardson-extrapolated).

    Raises FiniteDifferenceError when the two step sizes disagree, which is
    how round-off cancellation from a too-small step shows up.
    """
    p, q = np.broadcast_arrays(np.atleast_1d(np.asarray(p, float)), np.atleast_1d(np.asarray(q, float)))
    p = p.ravel()
    q = q.ravel()
    if not np.all(trusted(p, q, cfg, fid)):
        raise TruncationError("finite-difference labels outside trusted radius")
    delta = rel_step * np.maximum(1.0, np.hypot(p, q))
    psi = coherent_states(p, q, fid, cfg, gauge=gauge, check=False)
    a_p, a_q = _central(p, q, fid, cfg, gauge, delta)
    b_p, b_q = _central(p, q, fid, cfg, gauge, delta / 2)
    r_p = (4 * b_p - a_p) / 3
    r_q = (4 * b_q - a_q) / 3
    scale = max(1.0, float(np.max(np.abs(r_p))), float(np.max(np.abs(r_q))))
    gap = max(float(np.max(np.abs(r_p - b_p))), float(np.max(np.abs(r_q - b_q))))
    if gap > RICHARDSON_TOL * scale:
        raise FiniteDifferenceError(
            f"Richardson disagreement {gap:.2e} at step {rel_step:.1e}; step too small or too large"
        )
    return psi, r_p, r_q


def _inner(a, b):
    return np.einsum("ni,ni->n", a.conj(), b)


def canonical_one_form(fid, cfg, gauge=None, rel_step=FD_REL_STEP):
    """θ = iħ<p,q|d|p,q> as a OneForm evaluated lazily at any labels."""

    def components(u, v):
        shape = np.broadcast(np.asarray(u), np.asarray(v)).shape
        psi, d_p, d_q = state_derivatives(u, v, fid, cfg, gauge, rel_step)
        tp = 1j * cfg.hbar * _inner(psi, d_p)
        tq = 1j * cfg.hbar * _inner(psi, d_q)
        return tp.real.reshape(shape), tq.real.reshape(shape)

    return OneForm(lambda u, v: components(u, v)[0], lambda u, v: components(u, v)[1])


def fubini_study_metric(fid, cfg, gauge=None, rel_step=FD_REL_STEP):
    """dσ² = 2ħ²(‖dψ‖² - |<ψ|dψ>|²) from finite differences of the states."""

    def components(u, v):
        shape = np.broadcast(np.asarray(u), np.asarray(v)).shape
        psi, d_p, d_q = state_derivatives(u, v, fid, cfg, gauge, rel_step)
        cp = _inner(psi, d_p)
        cq = _inner(psi, d_q)
        g_pp = (_inner(d_p, d_p) - np.abs(cp) ** 2).real
        g_qq = (_inner(d_q, d_q) - np.abs(cq) ** 2).real
        g_pq = (_inner(d_p, d_q) - np.conj(cp) * cq).real
        k = 2 * cfg.hbar**2
        return (k * g_pp).reshape(shape), (2 * k * g_pq).reshape(shape), (k * g_qq).reshape(shape)

    return MetricTensor(
        lambda u, v: components(u, v)[0],
        lambda u, v: components(u, v)[1],
        lambda u, v: components(u, v)[2],
    )


# one global constant reconciles the variance form with dσ²: Ω = 1 gives ħ(dp² + dq²)
VARIANCE_METRIC_SCALE = 2.0


def variance_metric(fid, cfg):
    """Constant metric from the fiducial's second moments.

    A = 2<(ΔQ)²>, B = -2<ΔQΔP + ΔPΔQ>, C = 2<(ΔP)²>.
    """
    vq, cov, vp = variances(fid.vec, cfg)
    s = VARIANCE_METRIC_SCALE
    return MetricTensor.constant(s * vq, -s * cov, s * vp)


# ---------------------------------------------------------------------------
# derivatives of callables (4th-order central stencils)


def _d1(f, u, v, h, axis):
    e = (h, 0.0) if axis == 0 else (0.0, h)

    def at(k):
        return np.asarray(f(u + k * e[0], v + k * e[1]), float)

    # paired differences cancel exactly on constants
    return (8 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12 * h)


def _d2(f, u, v, h, axis):
    e = (h, 0.0) if axis == 0 else (0.0, h)

    def at(k):
        return np.asarray(f(u + k * e[0], v + k * e[1]), float)

    return (16 * (at(1) + at(-1)) - (at(2) + at(-2)) - 30 * at(0)) / (12 * h * h)


def _dmixed(f, u, v, h):
    def du(vv):
        return _d1(f, u, vv, h, 0)

    return (8 * (du(v + h) - du(v - h)) - (du(v + 2 * h) - du(v - 2 * h))) / (12 * h)


def gaussian_curvature(metric, point, h=CURVATURE_STEP):
    """Gaussian curvature at ``point`` by the Brioschi formula."""
    u, v = (float(x) for x in point)

    def E(a, b):
        return metric.A(a, b)

    def F(a, b):
        return 0.5 * np.asarray(metric.B(a, b), float)

    def G(a, b):
        return metric.C(a, b)

    e, f, g = float(E(u, v)), float(F(u, v)), float(G(u, v))
    det = e * g - f * f
    if not det > 0:
        raise ValueError(f"degenerate metric at {point}")
    E_u, E_v = _d1(E, u, v, h, 0), _d1(E, u, v, h, 1)
    F_u, F_v = _d1(F, u, v, h, 0), _d1(F, u, v, h, 1)
    G_u, G_v = _d1(G, u, v, h, 0), _d1(G, u, v, h, 1)
    E_vv = _d2(E, u, v, h, 1)
    G_uu = _d2(G, u, v, h, 0)
    F_uv = _dmixed(F, u, v, h)
    m1 = np.array([
        [-0.5 * E_vv + F_uv - 0.5 * G_uu, 0.5 * E_u, F_u - 0.5 * E_v],
        [F_v - 0.5 * G_u, e, f],
        [0.5 * G_v, f, g],
    ], dtype=float)
    m2 = np.array([
        [0.0, 0.5 * E_v, 0.5 * G_u],
        [0.5 * E_v, e, f],
        [0.5 * G_u, f, g],
    ], dtype=float)
    return float((_det3(m1) - _det3(m2)) / det**2)


def _det3(m):
    # cofactor expansion along the first row, so a zero row gives exactly 0
    return (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
            - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))


def exterior_derivative(form, point, h=1e-3):
    """Coefficient ω_uv = ∂_u θ_v - ∂_v θ_u of dθ at a point."""
    u, v = (float(x) for x in point)
    return float(_d1(form.theta_v, u, v, h, 0) - _d1(form.theta_u, u, v, h, 1))


# ---------------------------------------------------------------------------
# pushforward


def pushforward(chart, x):
    """Express a symbol, one-form or metric in the coordinates of ``chart``."""
    chart = get_chart(chart)
    if isinstance(x, MetricTensor):
        def comp(u, v):
            J = chart.inverse_jacobian(u, v)
            p, q = chart.inverse(u, v)
            g = x.matrix(p, q)
            gt = np.swapaxes(J, -1, -2) @ g @ J
            return gt[..., 0, 0], 2 * gt[..., 0, 1], gt[..., 1, 1]

        return MetricTensor(
            lambda u, v: comp(u, v)[0],
            lambda u, v: comp(u, v)[1],
            lambda u, v: comp(u, v)[2],
            chart.name,
        )
    if isinstance(x, OneForm):
        def comp1(u, v):
            J = chart.inverse_jacobian(u, v)
            p, q = chart.inverse(u, v)
            tp, tq = x(p, q)
            return J[..., 0, 0] * tp + J[..., 1, 0] * tq, J[..., 0, 1] * tp + J[..., 1, 1] * tq

        return OneForm(lambda u, v: comp1(u, v)[0], lambda u, v: comp1(u, v)[1], chart.name)
    if callable(x):
        growth = ("poly", x.degree) if isinstance(x, PolySymbol) else getattr(x, "growth", None)
        return FunctionSymbol(lambda u, v: x(*chart.inverse(u, v)), growth=growth, variables=("u", "v"))
    raise TypeError(f"cannot push forward {type(x).__name__}")


# ---------------------------------------------------------------------------
# loop integrals


def _grad(f, u, v, step):
    gu = (f(u + step, v) - f(u - step, v)) / (2 * step)
    gv = (f(u, v + step) - f(u, v - step)) / (2 * step)
    return gu, gv


def _project(f, E, u, v, scale, iters=6):
    step = 1e-6 * scale
    for _ in range(iters):
        r = f(u, v) - E
        gu, gv = _grad(f, u, v, step)
        n2 = gu * gu + gv * gv
        n2 = np.where(n2 > 0, n2, 1.0)
        u = u - r * gu / n2
        v = v - r * gv / n2
    return u, v


def _line_integral(u, v, closed):
    """∫ u dv along the ordered vertex list, via a cubic spline in chord length."""
    if closed:
        if np.hypot(u[0] - u[-1], v[0] - v[-1]) == 0:
            u, v = u[:-1], v[:-1]
        u = np.append(u, u[0])
        v = np.append(v, v[0])
    seg = np.hypot(np.diff(u), np.diff(v))
    keep = np.concatenate([[True], seg > 1e-14])
    u, v = u[keep], v[keep]
    s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(u), np.diff(v)))])
    bc = "periodic" if closed else "not-a-knot"
    su = CubicSpline(s, u, bc_type=bc)
    sv = CubicSpline(s, v, bc_type=bc)
    x, w = np.polynomial.legendre.leggauss(6)
    a, b = s[:-1, None], s[1:, None]
    t = (0.5 * (b - a) * (x + 1) + a).ravel()
    wt = (0.5 * (b - a) * w).ravel()
    return float(np.sum(wt * su(t) * sv(t, 1)))


def _chart_symbol(h, chart, h_in_chart):
    if chart.name == "cartesian" or h_in_chart:
        return h
    return pushforward(chart, h)


def loop_action(h, E, chart="cartesian", h_in_chart=False, grid=LOOP_GRID):
    """∮ u dv around the level set h = E, i.e. the enclosed symplectic area.

    The contour is located by marching squares, its vertices are pulled
    onto the exact level set by Newton steps, and the integral is taken on a
    cubic spline through them.  Several closed components are summed.
    """
    chart = get_chart(chart)
    f = _chart_symbol(h, chart, h_in_chart)

    def fv(u, v):
        return np.real(np.asarray(f(u, v)))

    if chart.periodic_v is not None:
        lo_u = chart.u_min
        hi_u = 1.0
        vs = np.linspace(-np.pi, np.pi, grid)
        while np.min(fv(np.full_like(vs, hi_u), vs)) <= E:
            hi_u *= 2
            if hi_u > 1e8:
                raise OpenLevelSet(f"level set h={E} is unbounded in {chart.name}")
        us = np.linspace(lo_u, hi_u * 1.05, grid)
        U, Vv = np.meshgrid(us, vs, indexing="ij")
    else:
        R = 1.0
        while True:
            # odd count keeps the axes on the probe
            t = np.linspace(-R, R, 4 * grid + 1)
            edge_u = np.concatenate([t, t, np.full_like(t, -R), np.full_like(t, R)])
            edge_v = np.concatenate([np.full_like(t, -R), np.full_like(t, R), t, t])
            if np.min(fv(edge_u, edge_v)) > E:
                break
            R *= 2
            if R > 1e6:
                raise OpenLevelSet(f"level set h={E} is not closed in {chart.name}")
        t = np.linspace(-R, R, grid)
        U, Vv = np.meshgrid(t, t, indexing="ij")
        inside = fv(U, Vv) <= E
        if not inside.any():
            return 0.0
        # tighten the box around the sublevel set to gain resolution
        du = t[1] - t[0]
        ulo, uhi = U[inside].min() - 2 * du, U[inside].max() + 2 * du
        vlo, vhi = Vv[inside].min() - 2 * du, Vv[inside].max() + 2 * du
        us = np.linspace(ulo, uhi, grid)
        vs = np.linspace(vlo, vhi, grid)
        U, Vv = np.meshgrid(us, vs, indexing="ij")

    values = fv(U, Vv)
    if not np.any(values < E):
        return 0.0
    scale = max(us[-1] - us[0], vs[-1] - vs[0])
    total = 0.0
    for c in find_contours(values, E):
        cu = np.interp(c[:, 0], np.arange(us.size), us)
        cv = np.interp(c[:, 1], np.arange(vs.size), vs)
        closed = np.allclose(c[0], c[-1])
        if len(cu) < 4:
            continue
        cu, cv = _project(fv, E, cu, cv, scale)
        if closed:
            total += abs(_line_integral(cu, cv, True))
        elif chart.periodic_v is not None:
            span = abs(cv[-1] - cv[0])
            if not np.isclose(span, chart.periodic_v, atol=4 * (vs[1] - vs[0])):
                raise OpenLevelSet("level set leaves the chart domain")
            # pin the ends to the period boundary so the integral spans it exactly
            total += abs(_line_integral(cu, cv, False))
        else:
            raise OpenLevelSet("level set touches the sampling box")
    return total


def _minimum(f, chart, h_in_chart):
    g = _chart_symbol(f, chart, h_in_chart)

    def fv(x):
        return float(np.real(g(x[0], x[1])))

    if chart.periodic_v is not None:
        us = np.linspace(chart.u_min, 50.0, 400)
        vs = np.linspace(-np.pi, np.pi, 64)
    else:
        us = vs = np.linspace(-10, 10, 401)
    U, V = np.meshgrid(us, vs, indexing="ij")
    vals = np.real(g(U, V))
    k = np.unravel_index(np.argmin(vals), vals.shape)
    bounds = [(chart.u_min, None), (None, None)] if chart.periodic_v is not None else None
    res = minimize(fv, [U[k], V[k]], method="Nelder-Mead", bounds=bounds,
                   options={"xatol": 1e-12, "fatol": 1e-14})
    return min(float(res.fun), float(vals[k]))


def bohr_sommerfeld(h, n_max, hbar=1.0, chart="cartesian", h_in_chart=False, grid=LOOP_GRID):
    """Energies with ∮ p dq = (n + ½) 2πħ for n = 0..n_max."""
    chart = get_chart(chart)
    e_min = _minimum(h, chart, h_in_chart)
    energies = []
    lo = e_min
    for n in range(n_max + 1):
        target = (n + 0.5) * 2 * np.pi * hbar

        def gap(E):
            return loop_action(h, E, chart, h_in_chart, grid) - target

        hi = max(lo, e_min) + 1.0
        while gap(hi) < 0:
            hi = lo + 2 * (hi - lo)
            if hi - lo > 1e8:
                raise ValueError(f"could not bracket level {n}")
        E = brentq(gap, lo, hi, xtol=1e-12, rtol=1e-13)
        energies.append(E)
        lo = E
    return energies
