"""Phase-space symbols and Toeplitz quantization.

Polynomial symbols are exact coefficient tables, so the Gaussian smoothing
that relates lower symbol, Weyl symbol and upper symbol acts on them as a
finite differential series.  For the oscillator-ground fiducial at frequency
Ω the fiducial's Wigner function has variances ħΩ/2 (p) and ħ/2Ω (q), and

    Weyl(Toeplitz h) = exp(½ Σ·∇²) h,   upper = exp(½ Σ·∇²) Weyl,

which inverts order by order when the input is polynomial.
"""
import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .charts import get_chart
from .coherent import (
    SquareQuadrature,
    coherent_states,
    default_quadrature,
    projector_integral,
)
from .hilbert import canonical_ops, is_hermitian


class SymbolSyntaxError(ValueError):
    def __init__(self, message, column):
        super().__init__(f"{message} at column {column}")
        self.column = column


class QuadratureError(RuntimeError):
    pass


class InadmissibleSymbol(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PolySymbol:
    """Finite sum of c * x^a * y^b over two named variables."""

    coeffs: dict
    variables: tuple = ("p", "q")

    def __post_init__(self):
        clean = {}
        for (a, b), c in self.coeffs.items():
            if int(a) != a or int(b) != b or a < 0 or b < 0:
                raise ValueError(f"bad exponent pair {(a, b)}")
            if c != 0:
                clean[(int(a), int(b))] = clean.get((int(a), int(b)), 0) + c
        object.__setattr__(self, "coeffs", {k: v for k, v in clean.items() if v != 0})

    @classmethod
    def constant(cls, c, variables=("p", "q")):
        return cls({(0, 0): c}, variables)

    @classmethod
    def monomial(cls, a, b, c=1.0, variables=("p", "q")):
        return cls({(a, b): c}, variables)

    def __call__(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        out = np.zeros(np.broadcast(x, y).shape, dtype=complex if self.is_complex else float)
        for (a, b), c in self.coeffs.items():
            out = out + c * x**a * y**b
        return out

    @property
    def is_complex(self):
        return any(isinstance(c, complex) and c.imag != 0 for c in self.coeffs.values())

    @property
    def degree(self):
        return max((a + b for a, b in self.coeffs), default=0)

    def degree_in(self, var):
        i = self.variables.index(var)
        return max((k[i] for k in self.coeffs), default=0)

    def _like(self, coeffs):
        return PolySymbol(coeffs, self.variables)

    def __add__(self, other):
        if not isinstance(other, PolySymbol):
            other = self._like({(0, 0): other})
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0) + c
        return self._like(out)

    __radd__ = __add__

    def __neg__(self):
        return self._like({k: -c for k, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, PolySymbol):
            return self._like({k: c * other for k, c in self.coeffs.items()})
        out = {}
        for (a, b), c in self.coeffs.items():
            for (d, e), f in other.coeffs.items():
                out[(a + d, b + e)] = out.get((a + d, b + e), 0) + c * f
        return self._like(out)

    __rmul__ = __mul__

    def diff(self, var, k=1):
        i = self.variables.index(var) if isinstance(var, str) else var
        out = {}
        for (a, b), c in self.coeffs.items():
            e = (a, b)[i]
            if e < k:
                continue
            f = math.perm(e, k)
            key = (a - k, b) if i == 0 else (a, b - k)
            out[key] = out.get(key, 0) + c * f
        return self._like(out)

    def close_to(self, other, tol=1e-12):
        d = self - other
        return all(abs(c) <= tol for c in d.coeffs.values())

    def real(self):
        return self._like({k: complex(c).real for k, c in self.coeffs.items()})

    def __repr__(self):
        if self.is_complex:
            return f"PolySymbol({self.coeffs!r}, {self.variables!r})"
        return f"PolySymbol({format_symbol(self)!r})"

    def __str__(self):
        return format_symbol(self) if not self.is_complex else repr(self)


@dataclass(frozen=True)
class FunctionSymbol:
    """Closure-backed symbol with an optional declared growth bound.

    ``growth`` is ``("poly", k)`` for |h| <= C(1 + r^k) or ``("gauss", c)``
    for |h| <= C exp(c r²).
    """

    func: Callable
    growth: Optional[tuple] = None
    variables: tuple = ("p", "q")

    def __call__(self, x, y):
        return self.func(np.asarray(x), np.asarray(y))


class GridSymbol:
    """Symbol tabulated on a rectangular grid, linearly interpolated."""

    variables = ("p", "q")
    growth = None

    def __init__(self, p_axis, q_axis, values):
        self.p_axis = np.asarray(p_axis, float)
        self.q_axis = np.asarray(q_axis, float)
        self.values = np.asarray(values)
        if self.values.shape != (self.p_axis.size, self.q_axis.size):
            raise ValueError("grid values must have shape (len(p_axis), len(q_axis))")
        self._interp = RegularGridInterpolator((self.p_axis, self.q_axis), self.values)

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return self._interp(np.stack([x, y], -1))


# ---------------------------------------------------------------------------
# text format:  term (± term)*,  term = coeff [* var^a]...  e.g. 0.5*p^2 + q^4

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")


def _tokens(text):
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace remains
            break
        if m.group(0).strip() == "":
            break
        col = m.start(0) + len(m.group(0)) - len(m.group(0).lstrip()) + 1
        if m.group(1):
            yield "num", m.group(1), col
        elif m.group(2):
            yield "name", m.group(2), col
        else:
            yield "op", m.group(3), col
        pos = m.end()
    yield "end", "", len(text) + 1


def parse_symbol(text, variables=("p", "q")):
    """Parse the polynomial text format into a PolySymbol."""
    toks = list(_tokens(text))
    i = 0

    def peek():
        return toks[i]

    def take():
        nonlocal i
        t = toks[i]
        i += 1
        return t

    coeffs = {}
    first = True
    while True:
        kind, val, col = peek()
        sign = 1.0
        if kind == "op" and val in "+-":
            take()
            sign = -1.0 if val == "-" else 1.0
        elif not first:
            raise SymbolSyntaxError(f"expected '+' or '-', got {val!r}", col)
        elif kind == "end":
            raise SymbolSyntaxError("empty expression", col)
        first = False

        coeff = 1.0
        powers = [0, 0]
        need_factor = True
        while need_factor:
            kind, val, col = take()
            if kind == "num":
                coeff *= float(val)
            elif kind == "name":
                if val not in variables:
                    raise SymbolSyntaxError(f"unknown variable {val!r}", col)
                e = 1
                if peek()[0] == "op" and peek()[1] == "^":
                    take()
                    k2, v2, c2 = take()
                    if k2 != "num" or not v2.isdigit():
                        raise SymbolSyntaxError("exponent must be a non-negative integer", c2)
                    e = int(v2)
                powers[variables.index(val)] += e
            else:
                raise SymbolSyntaxError(f"expected number or variable, got {val or 'end of input'!r}", col)
            need_factor = peek()[0] == "op" and peek()[1] == "*"
            if need_factor:
                take()
        key = tuple(powers)
        coeffs[key] = coeffs.get(key, 0.0) + sign * coeff
        if peek()[0] == "end":
            break
    return PolySymbol(coeffs, tuple(variables))


def format_symbol(h):
    """Inverse of :func:`parse_symbol`; coefficients printed with repr."""
    if not h.coeffs:
        return "0"
    x, y = h.variables
    parts = []
    for (a, b) in sorted(h.coeffs, key=lambda k: (k[0] + k[1], -k[0])):
        c = h.coeffs[(a, b)]
        if isinstance(c, complex):
            if c.imag:
                raise ValueError("complex coefficients have no text form")
            c = c.real
        c = float(c)
        factors = [repr(abs(c))]
        if a:
            factors.append(x if a == 1 else f"{x}^{a}")
        if b:
            factors.append(y if b == 1 else f"{y}^{b}")
        term = "*".join(factors)
        if not parts:
            parts.append(("-" if c < 0 else "") + term)
        else:
            parts.append(("- " if c < 0 else "+ ") + term)
    return " ".join(parts)


# ---------------------------------------------------------------------------
# ordered operator polynomials and the Weyl/Gaussian calculus


@dataclass(frozen=True)
class OrderedPoly:
    """Explicitly ordered polynomial in P and Q: sum of coeff * word.

    A word is a string over "P" and "Q" read left to right as an operator
    product, e.g. ``[(0.5, "PP"), (0.5, "QQ")]``.
    """

    terms: tuple

    @classmethod
    def from_text(cls, text):
        """Parse e.g. ``"0.5*P*P + 0.5*Q*Q + 0.5"`` (order is kept)."""
        terms = []
        for tok in re.split(r"(?=[+-])", text.replace(" ", "")):
            if not tok:
                continue
            sign = -1.0 if tok[0] == "-" else 1.0
            tok = tok.lstrip("+-")
            coeff = 1.0
            word = ""
            for f in tok.split("*"):
                m = re.fullmatch(r"([PQ])(?:\^(\d+))?", f)
                if m:
                    word += m.group(1) * int(m.group(2) or 1)
                else:
                    coeff *= float(f)
            terms.append((sign * coeff, word))
        return cls(tuple(terms))

    def matrix(self, cfg):
        P, Q = canonical_ops(cfg)
        ops = {"P": P, "Q": Q}
        out = np.zeros((cfg.dim, cfg.dim), dtype=complex)
        for c, word in self.terms:
            m = np.eye(cfg.dim, dtype=complex)
            for ch in word:
                m = m @ ops[ch]
            out += c * m
        return out

    def weyl_symbol(self, hbar):
        p = PolySymbol.monomial(1, 0)
        q = PolySymbol.monomial(0, 1)
        total = PolySymbol({})
        for c, word in self.terms:
            acc = PolySymbol.constant(1.0)
            for ch in word:
                acc = star(acc, p if ch == "P" else q, hbar)
            total = total + c * acc
        return total


def star(f, g, hbar):
    """Moyal product of polynomial symbols in (p, q), with q⋆p - p⋆q = iħ."""
    out = PolySymbol({})
    k = 0
    while True:
        term = PolySymbol({})
        for j in range(k + 1):
            df = f.diff("q", k - j).diff("p", j)
            dg = g.diff("p", k - j).diff("q", j)
            if df.coeffs and dg.coeffs:
                term = term + math.comb(k, j) * (-1) ** j * (df * dg)
        if not term.coeffs and k > f.degree + g.degree:
            break
        out = out + (1j * hbar / 2) ** k / math.factorial(k) * term
        k += 1
    return out


def gaussian_smooth(h, var_p, var_q):
    """exp(½ var_p ∂p² + ½ var_q ∂q²) h for a polynomial h (finite series).

    Negative variances deconvolve; for polynomials the series terminates.
    """
    out = PolySymbol({}, h.variables)
    j = 0
    while True:
        dj = h.diff(0, 2 * j)
        if not dj.coeffs:
            break
        k = 0
        while True:
            dk = dj.diff(1, 2 * k)
            if not dk.coeffs:
                break
            c = (0.5 * var_p) ** j / math.factorial(j) * (0.5 * var_q) ** k / math.factorial(k)
            out = out + c * dk
            k += 1
        j += 1
    return out


def wigner_variances(cfg):
    return cfg.hbar * cfg.omega / 2, cfg.hbar / (2 * cfg.omega)


def _simplify(h):
    if not h.is_complex:
        return h.real()
    return h


def lower_symbol_poly(target, cfg):
    """Lower symbol of a polynomial target, Gaussian fiducial at cfg.omega.

    ``target`` is an :class:`OrderedPoly` (operator) or a :class:`PolySymbol`
    read as an upper symbol.
    """
    vp, vq = wigner_variances(cfg)
    if isinstance(target, OrderedPoly):
        w = target.weyl_symbol(cfg.hbar)
        return _simplify(gaussian_smooth(w, -vp, -vq))
    if isinstance(target, PolySymbol):
        return _simplify(gaussian_smooth(target, -2 * vp, -2 * vq))
    raise TypeError("lower_symbol_poly needs a polynomial target (OrderedPoly or PolySymbol)")


def upper_from_lower_poly(h, cfg):
    """Analytic upper symbol of Toeplitz(h) for the Gaussian fiducial."""
    vp, vq = wigner_variances(cfg)
    return _simplify(gaussian_smooth(h, 2 * vp, 2 * vq))


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class ConditionsReport:
    cond1: bool
    cond2: bool
    growth_rate: float  # c in |h| <= C exp(c r²); 0 for polynomial growth

    def cond1_at(self, A):
        """∫h² exp(-A r²) finite for this particular A."""
        return A > 2 * self.growth_rate or (self.growth_rate == 0 and A > 0)

    def cond2_at(self, B):
        return B > 4 * self.growth_rate or (self.growth_rate == 0 and B > 0)


def conditions_check(h):
    """Integrability conditions on a lower symbol h.

    (1) ∫h² e^{-A r²} < ∞ for every A > 0, (2) ∫h⁴ e^{-B r²} < ∞ for some
    B < ½.  Polynomials pass both; other symbols need a declared growth.
    """
    if isinstance(h, PolySymbol):
        return ConditionsReport(True, True, 0.0)
    growth = getattr(h, "growth", None)
    if growth is None:
        raise InadmissibleSymbol("non-polynomial symbol needs a declared growth bound")
    kind, rate = growth
    if kind == "poly":
        return ConditionsReport(True, True, 0.0)
    if kind != "gauss":
        raise ValueError(f"unknown growth kind {kind!r}")
    rate = float(rate)
    return ConditionsReport(rate <= 0, 4 * rate < 0.5, max(rate, 0.0))


def is_semibounded(h, radii=(1e2, 1e3, 1e4), n_angles=4096):
    """Numerical test that a real polynomial is bounded below on the plane.

    The ring minimum must not keep falling as the radius grows; this catches
    odd leading terms and indefinite leading forms.
    """
    if not isinstance(h, PolySymbol) or h.is_complex:
        return False
    t = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    mins = []
    for r in radii:
        mins.append(float(np.min(h(r * np.cos(t), r * np.sin(t)))))
    return not (mins[-1] < mins[-2] < mins[-3] and mins[-1] < 0)


def admissible(h, allow_unbounded=False):
    """Whitelist gate: hermitian (real) semibounded polynomials in p, q."""
    rep = conditions_check(h)
    if not (rep.cond1 and rep.cond2):
        raise InadmissibleSymbol(f"symbol violates integrability conditions: {rep}")
    if allow_unbounded:
        return rep
    if not is_semibounded(h):
        raise InadmissibleSymbol(
            "only real, semibounded polynomials are accepted without allow_unbounded=True"
        )
    return rep


# ---------------------------------------------------------------------------
# quantization and symbols of operators


def upper_symbol(H, fid, p_axis, q_axis, cfg, gauge=None):
    """Tabulate <p,q|H|p,q> on the grid spanned by the two axes."""
    p_axis = np.atleast_1d(np.asarray(p_axis, float))
    q_axis = np.atleast_1d(np.asarray(q_axis, float))
    P, Q = np.meshgrid(p_axis, q_axis, indexing="ij")
    V = coherent_states(P, Q, fid, cfg, gauge=gauge)
    vals = np.einsum("ni,ij,nj->n", V.conj(), H, V).reshape(P.shape)
    if is_hermitian(H, tol=1e-10):
        if np.max(np.abs(vals.imag), initial=0.0) > 1e-10:
            raise RuntimeError("hermitian operator produced a complex upper symbol")
        vals = vals.real
    if p_axis.size < 2 or q_axis.size < 2:
        return vals
    return GridSymbol(p_axis, q_axis, vals)


def _degree(h):
    return h.degree if isinstance(h, PolySymbol) else 4


def chart_quadrature(chart, cfg, fid=None, nodes_u=160, nodes_v=160):
    """Gauss-Legendre in the action, trapezoid in the angle; chart points + weights."""
    chart = get_chart(chart)
    if chart.periodic_v is None:
        raise ValueError("chart quadrature only implemented for periodic charts")
    sq = default_quadrature(cfg, fid)
    u_max = 0.5 * sq.radius**2
    x, w = np.polynomial.legendre.leggauss(nodes_u)
    # map to [0, u_max]; the singular point carries no weight
    u = 0.5 * u_max * (x + 1)
    wu = 0.5 * u_max * w
    v = np.linspace(-np.pi, np.pi, nodes_v, endpoint=False)
    wv = np.full(nodes_v, chart.periodic_v / nodes_v)
    U, Vv = np.meshgrid(u, v, indexing="ij")
    return U.ravel(), Vv.ravel(), np.outer(wu, wv).ravel()


def toeplitz_quantize(h, fid, cfg, quad=None, gauge=None, verify=True, tol=1e-6, chart=None):
    """∫ h(p,q) |p,q><p,q| dp dq / 2πħ.

    With ``chart`` set, ``h`` is a function of the chart coordinates and the
    integral runs over chart points with the (unit-Jacobian) measure.
    """
    conditions = conditions_check(h)
    if not (conditions.cond1 and conditions.cond2):
        raise InadmissibleSymbol(f"symbol violates integrability conditions: {conditions}")
    if chart is not None:
        chart = get_chart(chart)
        U, Vv, W = chart_quadrature(chart, cfg, fid)
        p, q = chart.inverse(U, Vv)
        w = W * np.asarray(h(U, Vv)) / (2 * np.pi * cfg.hbar)
        out = np.zeros((cfg.dim, cfg.dim), dtype=complex)
        for s in range(0, p.size, 8192):
            V = coherent_states(p[s:s + 8192], q[s:s + 8192], fid, cfg, gauge=gauge, check=False)
            out += (V.T * w[s:s + 8192]) @ V.conj()
        return out

    if quad is None:
        quad = default_quadrature(cfg, fid, degree=_degree(h))
    H = projector_integral(fid, cfg, quad, weight=h, gauge=gauge)
    if verify:
        finer = SquareQuadrature(quad.radius * 1.1, int(quad.nodes * 1.25))
        H2 = projector_integral(fid, cfg, finer, weight=h, gauge=gauge)
        m = cfg.leading
        dev = np.max(np.abs(H[:m, :m] - H2[:m, :m]))
        scale = max(1.0, np.max(np.abs(H2[:m, :m])))
        if dev > tol * scale:
            raise QuadratureError(f"Toeplitz quadrature not converged: refinement moved {dev:.3e}")
    return H


def fit_polynomial(p_axis, q_axis, values, degree):
    """Least-squares PolySymbol of total degree <= ``degree`` through grid values."""
    P, Q = np.meshgrid(np.asarray(p_axis, float), np.asarray(q_axis, float), indexing="ij")
    keys = [(a, d - a) for d in range(degree + 1) for a in range(d + 1)]
    A = np.stack([P.ravel() ** a * Q.ravel() ** b for a, b in keys], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.real(np.asarray(values)).ravel(), rcond=None)
    return PolySymbol(dict(zip(keys, coef.tolist())))


def symbol_sandwich(h, cfg, fid=None, extent=1.5, points=15):
    """Fitted polynomial upper(Toeplitz(h)) - h from the numerical pipeline."""
    from .coherent import Fiducial

    fid = fid or Fiducial.ground(cfg)
    axis = np.linspace(-extent, extent, points)
    H = toeplitz_quantize(h, fid, cfg)
    up = upper_symbol(H, fid, axis, axis, cfg)
    P, Q = np.meshgrid(axis, axis, indexing="ij")
    return fit_polynomial(axis, axis, up.values - np.real(h(P, Q)), _degree(h))


def leading_term(h, tol=1e-8):
    """(exponents, coefficient) of the highest-degree term above ``tol``."""
    live = {k: c for k, c in h.coeffs.items() if abs(c) > tol}
    if not live:
        return None, 0.0
    k = max(live, key=lambda k: (k[0] + k[1], abs(live[k])))
    return k, live[k]
