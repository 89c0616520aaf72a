"""Truncated Fock-space kernel.

Operators are dense ``(dim, dim)`` complex arrays in the number basis of an
oscillator of frequency ``omega``; states are 1-D complex arrays.  Every
identity involving the top of the basis is only trusted on a leading block,
since truncation corrupts the last rows and columns.
"""
from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-12


class TruncationError(ValueError):
    """A request would need basis states beyond the truncation."""


@dataclass(frozen=True)
class SpaceConfig:
    dim: int = 64
    hbar: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"dim must be an integer >= 2, got {self.dim}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")

    @property
    def leading(self):
        """Size of the block on which spectral/propagator claims are made."""
        return self.dim // 2


def lowering(dim):
    n = np.arange(1, dim)
    return np.diag(np.sqrt(n), 1).astype(complex)


def canonical_ops(cfg):
    """Return ``(P, Q)`` with a = (ΩQ + iP)/sqrt(2ħΩ) in the truncated basis."""
    a = lowering(cfg.dim)
    ad = a.conj().T
    Q = np.sqrt(cfg.hbar / (2 * cfg.omega)) * (a + ad)
    P = 1j * np.sqrt(cfg.hbar * cfg.omega / 2) * (ad - a)
    return P, Q


def number_state(cfg, n=0):
    if not 0 <= n < cfg.dim:
        raise TruncationError(f"number state {n} outside dim={cfg.dim}")
    v = np.zeros(cfg.dim, dtype=complex)
    v[n] = 1.0
    return v


def fiducial_ground(cfg):
    """Ground state annihilated by ΩQ + iP; the first basis vector."""
    return number_state(cfg, 0)


def is_hermitian(M, tol=HERMITIAN_TOL):
    M = np.asarray(M)
    return M.ndim == 2 and M.shape[0] == M.shape[1] and np.max(np.abs(M - M.conj().T), initial=0.0) <= tol


def _require_hermitian(H):
    H = np.asarray(H, dtype=complex)
    if not is_hermitian(H, tol=HERMITIAN_TOL * max(1.0, np.max(np.abs(H), initial=0.0))):
        raise ValueError("operator is not hermitian")
    return H


def eigh(H):
    H = _require_hermitian(H)
    w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    return w, V


def spectrum(H):
    """Ascending real eigenvalues of a hermitian matrix."""
    return eigh(H)[0]


def evolve(H, T, cfg=None):
    """Unitary e^{-iHT/ħ} via hermitian eigendecomposition."""
    hbar = 1.0 if cfg is None else cfg.hbar
    w, V = eigh(H)
    return (V * np.exp(-1j * w * T / hbar)) @ V.conj().T


def expect(op, psi):
    psi = np.asarray(psi)
    return np.vdot(psi, op @ psi) / np.vdot(psi, psi)


def variances(psi, cfg):
    """Return (Var Q, <ΔQΔP + ΔPΔQ>, Var P) for the state ``psi``."""
    P, Q = canonical_ops(cfg)
    mq = expect(Q, psi).real
    mp = expect(P, psi).real
    dQ = Q - mq * np.eye(cfg.dim)
    dP = P - mp * np.eye(cfg.dim)
    vq = expect(dQ @ dQ, psi).real
    vp = expect(dP @ dP, psi).real
    cov = expect(dQ @ dP + dP @ dQ, psi).real
    return vq, cov, vp


def squeezed_ground(cfg, freq):
    """Ground state of ½(P² + freq²Q²) expressed in the cfg basis.

    The phase is fixed so the vacuum component is real and positive.
    """
    P, Q = canonical_ops(cfg)
    w, V = eigh(0.5 * (P @ P + freq**2 * Q @ Q))
    v = V[:, 0]
    v[np.abs(v) < 1e-14] = 0.0
    v = v / np.linalg.norm(v)
    k = np.argmax(np.abs(v) > 1e-12)
    return v * (abs(v[k]) / v[k])


def translate(psi, p, q, cfg):
    """Apply e^{-iqP/ħ} e^{ipQ/ħ} to ``psi`` through exact matrix exponentials."""
    P, Q = canonical_ops(cfg)
    wq, Vq = eigh(Q)
    wp, Vp = eigh(P)
    out = Vq @ (np.exp(1j * p * wq / cfg.hbar) * (Vq.conj().T @ psi))
    return Vp @ (np.exp(-1j * q * wp / cfg.hbar) * (Vp.conj().T @ out))
