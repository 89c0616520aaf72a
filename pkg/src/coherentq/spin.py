"""SU(2) coherent states on the sphere and their Toeplitz quantization.

Basis order is m = s, s-1, ..., -s, so the highest-weight vector is the
first basis vector.  Coherent states are e^{-iφS3/ħ} e^{-iθS2/ħ}|s,s>, and
the label measure is (2s+1)/4π sinθ dθ dφ.
"""
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.linalg import expm

from .hilbert import is_hermitian


@dataclass(frozen=True)
class SpinConfig:
    s: float
    hbar: float = 1.0

    def __post_init__(self):
        if not float(2 * self.s).is_integer() or self.s <= 0:
            raise ValueError(f"s must be a positive half-integer, got {self.s}")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")

    @property
    def dim(self):
        return int(round(2 * self.s)) + 1

    @property
    def m(self):
        return self.s - np.arange(self.dim)


def spin_ops(cfg):
    """(S1, S2, S3) in the standard irreducible representation."""
    m = cfg.m
    s = cfg.s
    up = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))  # <m+1|S+|m>
    Sp = cfg.hbar * np.diag(up, 1).astype(complex)
    Sm = Sp.conj().T
    S1 = 0.5 * (Sp + Sm)
    S2 = -0.5j * (Sp - Sm)
    S3 = cfg.hbar * np.diag(m).astype(complex)
    return S1, S2, S3


def casimir(cfg):
    S = spin_ops(cfg)
    return sum(X @ X for X in S)


def spin_coherent_states(theta, phi, cfg):
    """Rows are |θ,φ> for each label; closed form of the rotated highest weight."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    theta = theta.ravel()
    phi = phi.ravel()
    n = cfg.dim - 1
    k = np.arange(cfg.dim)  # k = s - m
    binom = np.sqrt(np.array([comb(n, int(j)) for j in k], dtype=float))
    c = np.cos(theta / 2)[:, None] ** (n - k) * np.sin(theta / 2)[:, None] ** k
    return binom * c * np.exp(-1j * np.outer(phi, cfg.m))


def spin_coherent(theta, phi, cfg):
    if not (0 <= theta <= np.pi):
        raise ValueError("theta must lie in [0, π]")
    return spin_coherent_states(theta, phi, cfg)[0]


def sphere_quadrature(n_theta, n_phi):
    """Gauss-Legendre in cosθ times the periodic trapezoid in φ.

    Returns (theta, phi, weight) with the weights summing to 4π.
    """
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    T, F = np.meshgrid(np.arccos(x), phi, indexing="ij")
    W = np.outer(wx, np.full(n_phi, 2 * np.pi / n_phi))
    return T.ravel(), F.ravel(), W.ravel()


def _default_nodes(cfg, extra=0):
    n = max(64, cfg.dim + 32 + extra)
    return n, n


def spin_frame_operator(cfg, weight=None, nodes=None):
    """(2s+1)/4π ∫ weight |θ,φ><θ,φ| dΩ by product quadrature."""
    nt, nph = nodes or _default_nodes(cfg)
    T, F, W = sphere_quadrature(nt, nph)
    w = W * cfg.dim / (4 * np.pi)
    if weight is not None:
        w = w * np.asarray(weight(T, F))
    V = spin_coherent_states(T, F, cfg)
    return (V.T * w) @ V.conj()


def spin_resolution_check(cfg, nodes=None):
    """Max-entry deviation of the sphere frame operator from the identity."""
    R = spin_frame_operator(cfg, nodes=nodes)
    return float(np.max(np.abs(R - np.eye(cfg.dim))))


def spin_toeplitz(h, cfg, nodes=None, verify=True, tol=1e-8):
    """Operator ∫ h(θ,φ) |θ,φ><θ,φ| (2s+1)/4π dΩ.

    With ``verify`` the result is recomputed on a finer grid and the two
    must agree within ``tol``.
    """
    nodes = nodes or _default_nodes(cfg)
    op = spin_frame_operator(cfg, h, nodes)
    if verify:
        fine = spin_frame_operator(cfg, h, (int(nodes[0] * 1.5), int(nodes[1] * 1.5)))
        gap = float(np.max(np.abs(fine - op)))
        if gap > tol * max(1.0, float(np.max(np.abs(fine)))):
            raise RuntimeError(f"sphere quadrature not converged (refinement changed result by {gap:.1e})")
        op = fine
    return op


def cartesian(theta, phi):
    """Unit vector (x, y, z) of the label."""
    st = np.sin(theta)
    return st * np.cos(phi), st * np.sin(phi), np.cos(theta)


def rotation_matrix(axis, angle):
    """SO(3) matrix of a right-handed rotation by ``angle`` about ``axis``."""
    n = np.asarray(axis, float)
    n = n / np.linalg.norm(n)
    K = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def rotation_operator(axis, angle, cfg):
    """exp(-i angle n·S/ħ), which carries |n> to |R n> up to phase."""
    n = np.asarray(axis, float)
    n = n / np.linalg.norm(n)
    S = spin_ops(cfg)
    return expm(-1j * angle * sum(c * X for c, X in zip(n, S)) / cfg.hbar)


def rotate_symbol(h, axis, angle):
    """h∘R⁻¹ as a function of (θ, φ)."""
    Rinv = rotation_matrix(axis, angle).T

    def rotated(theta, phi):
        x, y, z = cartesian(theta, phi)
        v = np.tensordot(Rinv, np.stack([x, y, z]), axes=1)
        th = np.arccos(np.clip(v[2], -1.0, 1.0))
        ph = np.arctan2(v[1], v[0])
        return h(th, ph)

    return rotated


def parse_sphere_symbol(text):
    """Vectorized callable of (θ, φ) from an expression in theta, phi, x, y, z."""
    import sympy
    from sympy.parsing.sympy_parser import convert_xor, standard_transformations

    th, ph = sympy.symbols("theta phi", real=True)
    names = {
        "theta": th,
        "phi": ph,
        "x": sympy.sin(th) * sympy.cos(ph),
        "y": sympy.sin(th) * sympy.sin(ph),
        "z": sympy.cos(th),
    }
    expr = sympy.parsing.sympy_parser.parse_expr(
        text, local_dict=names, transformations=standard_transformations + (convert_xor,), evaluate=True
    )
    extra = expr.free_symbols - {th, ph}
    if extra:
        raise ValueError(f"unknown names in sphere symbol: {sorted(map(str, extra))}")
    f = sympy.lambdify((th, ph), expr, "numpy")

    def h(theta, phi):
        return np.broadcast_to(f(theta, phi), np.broadcast(theta, phi).shape)

    return h


def is_multiple_of(A, B, tol=1e-10):
    """Return c with A = c B if it exists within ``tol``, else None."""
    k = np.argmax(np.abs(B))
    c = A.flat[k] / B.flat[k]
    return c if np.max(np.abs(A - c * B)) <= tol else None


def check_hermitian(op):
    return is_hermitian(op, tol=1e-10)
