"""Coherent states |p,q> built from a fiducial vector and a gauge.

    |p,q> = exp(-iG(p,q)/ħ) exp(-iqP/ħ) exp(ipQ/ħ) |η>

The split product equals exp(-ipq/2ħ) D(α) with α = (Ωq + ip)/sqrt(2ħΩ), and
D(α)|n> = (a† - α*)^n |α> / sqrt(n!).  Applying a† never reads components
beyond the truncation, so every retained amplitude is exact; only the
discarded tail is lost, and the trusted label radius keeps it negligible.
"""
from dataclasses import dataclass

import numpy as np

from .hilbert import TruncationError, canonical_ops, expect, fiducial_ground

SUPPORT_TOL = 1e-14


@dataclass(frozen=True)
class Fiducial:
    vec: np.ndarray
    gaussian: bool = False

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=complex)
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or abs(norm - 1) > 1e-10:
            raise ValueError(f"fiducial must have unit norm, got {norm}")
        object.__setattr__(self, "vec", v)

    @classmethod
    def ground(cls, cfg):
        return cls(fiducial_ground(cfg), gaussian=True)

    def means(self, cfg):
        P, Q = canonical_ops(cfg)
        return expect(P, self.vec).real, expect(Q, self.vec).real

    def centered(self, cfg, tol=1e-10):
        mp, mq = self.means(cfg)
        return abs(mp) <= tol and abs(mq) <= tol

    def mean_number(self):
        n = np.arange(self.vec.size)
        return float(np.sum(n * np.abs(self.vec) ** 2))

    @property
    def support(self):
        nz = np.nonzero(np.abs(self.vec) > SUPPORT_TOL)[0]
        return int(nz[-1]) + 1 if nz.size else 1


def alpha_of(p, q, cfg):
    return (cfg.omega * np.asarray(q) + 1j * np.asarray(p)) / np.sqrt(2 * cfg.hbar * cfg.omega)


def occupation(p, q, cfg):
    """Mean number |α|² of the Gaussian coherent state at (p, q)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return p**2 / (2 * cfg.hbar * cfg.omega) + cfg.omega * q**2 / (2 * cfg.hbar)


def trusted(p, q, cfg, fid=None):
    """True where the label sits inside the trusted radius |α|² <= dim/8."""
    extra = 0.0 if fid is None else fid.mean_number()
    return occupation(p, q, cfg) + extra <= cfg.dim / 8


def coherent_states(p, q, fid, cfg, gauge=None, check=True):
    """Batch of coherent states, one row per label.

    ``p`` and ``q`` broadcast together; the result has shape ``(n, dim)``.
    With ``check=False`` labels outside the trusted radius are allowed: the
    rows are still exact projections onto the retained basis, which is what
    phase-space quadrature over the leading block needs.
    """
    p, q = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(q, dtype=float))
    p = p.ravel()
    q = q.ravel()
    if check and not np.all(trusted(p, q, cfg, fid)):
        bad = np.argmin(trusted(p, q, cfg, fid))
        raise TruncationError(
            f"label (p={p[bad]}, q={q[bad]}) outside trusted radius for dim={cfg.dim}"
        )
    D = cfg.dim
    alpha = alpha_of(p, q, cfg)
    # |α> by the normalized recursion c_n = c_{n-1} α / sqrt(n)
    base = np.empty((p.size, D), dtype=complex)
    base[:, 0] = np.exp(-0.5 * np.abs(alpha) ** 2)
    for n in range(1, D):
        base[:, n] = base[:, n - 1] * alpha / np.sqrt(n)

    eta = fid.vec
    out = eta[0] * base
    cur = base
    sq = np.sqrt(np.arange(D))
    for n in range(1, fid.support):
        raised = np.zeros_like(cur)
        raised[:, 1:] = cur[:, :-1] * sq[1:]
        cur = (raised - np.conj(alpha)[:, None] * cur) / np.sqrt(n)
        if eta[n] != 0:
            out = out + eta[n] * cur

    phase = -p * q / (2 * cfg.hbar)
    if gauge is not None:
        phase = phase - np.asarray(gauge(p, q), dtype=float) / cfg.hbar
    return out * np.exp(1j * phase)[:, None]


def coherent_state(p, q, fid, cfg, gauge=None):
    return coherent_states(p, q, fid, cfg, gauge=gauge)[0]


def overlap_analytic(l2, l1, cfg):
    """<p',q'|p,q> for the Gaussian fiducial with G = 0."""
    (p2, q2), (p1, q1) = l2, l1
    hb, om = cfg.hbar, cfg.omega
    p2, q2, p1, q1 = (np.asarray(x, dtype=float) for x in (p2, q2, p1, q1))
    return np.exp(
        1j / (2 * hb) * (p2 + p1) * (q2 - q1)
        - ((p2 - p1) ** 2 / om + om * (q2 - q1) ** 2) / (4 * hb)
    )


@dataclass(frozen=True)
class SquareQuadrature:
    """Tensor Gauss-Legendre rule on [-radius, radius]² (p and q)."""

    radius: float
    nodes: int

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0) or self.nodes < 2:
            raise ValueError(f"invalid quadrature {self}")

    def points(self):
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        x = x * self.radius
        w = w * self.radius
        P, Q = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        return P.ravel(), Q.ravel(), W.ravel()


def default_quadrature(cfg, fid=None, degree=0):
    """Quadrature wide enough for the whole retained block.

    The radius follows the Gamma tail of the heaviest basis state, and the
    node count keeps well above the polynomial content of the integrand.
    """
    from scipy.stats import gamma

    support = 1 if fid is None else fid.support
    shape = cfg.dim + support + degree / 2 + 1
    r2 = gamma.isf(1e-16, shape)  # in units of |α|²
    scale = np.sqrt(2 * cfg.hbar * max(cfg.omega, 1 / cfg.omega))
    radius = float(np.sqrt(r2) * scale)
    nodes = int(max(120, 2.5 * np.sqrt(r2) * 4 + degree))
    return SquareQuadrature(radius, nodes)


def projector_integral(fid, cfg, quad, weight=None, gauge=None, chunk=8192):
    """∫ weight(p,q) |p,q><p,q| dp dq / 2πħ by the given quadrature."""
    P, Q, W = quad.points()
    w = W / (2 * np.pi * cfg.hbar)
    if weight is not None:
        w = w * np.asarray(weight(P, Q))
    out = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    for s in range(0, P.size, chunk):
        V = coherent_states(P[s:s + chunk], Q[s:s + chunk], fid, cfg, gauge=gauge, check=False)
        out += (V.T * w[s:s + chunk]) @ V.conj()
    return out


def resolution_check(fid, cfg, quad=None, gauge=None):
    """Max deviation of ∫|p,q><p,q| dμ from the identity on the leading block."""
    if quad is None:
        quad = default_quadrature(cfg, fid)
    m = cfg.leading
    R = projector_integral(fid, cfg, quad, gauge=gauge)
    return float(np.max(np.abs(R[:m, :m] - np.eye(m))))


def reproducing_kernel_check(pairs, cfg, quad=None):
    """Max |K(a;b) - ∫K(a;x)K(x;b)dμ(x)| over label pairs (Gaussian fiducial)."""
    if quad is None:
        quad = SquareQuadrature(12.0 * np.sqrt(cfg.hbar * max(cfg.omega, 1 / cfg.omega)), 160)
    P, Q, W = quad.points()
    w = W / (2 * np.pi * cfg.hbar)
    worst = 0.0
    for a, b in pairs:
        direct = overlap_analytic(a, b, cfg)
        via = np.sum(w * overlap_analytic(a, (P, Q), cfg) * overlap_analytic((P, Q), b, cfg))
        worst = max(worst, abs(direct - via))
    return worst
