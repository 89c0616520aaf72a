"""Phase-space path integrals: lattice (Weyl rule) and Wiener-regularized.

The Wiener-regularized propagator is

    K = lim_{ν→∞} 2πħ e^{νT/2ħ} ∫ exp{(i/ħ)∫[p∘dq + dG - h dt]} dμ_W^ν,

with μ_W^ν the pinned two-dimensional Brownian measure of diffusion ν.  Two
estimators are offered.  ``method="bridge"`` samples whole bridges and
averages e^{iS/ħ}; its weights have modulus e^{νT/2ħ}·mass, so its relative
error grows exponentially in νT and it is only useful for small νT.
``method="slice"`` cuts [0,T] into N slices, does the Brownian motion inside
each slice exactly (the Wiener integral of e^{(i/ħ)∫p∘dq} between fixed
points is the Landau-level heat kernel), integrates the p slice values in
closed form, and samples only the q slice values from a real Gaussian.
"""
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.linalg import cholesky, eigvalsh, solve_triangular

from .coherent import Fiducial, coherent_states
from .hilbert import SpaceConfig, evolve
from .symbols import PolySymbol, admissible

DEFAULT_SLICES = 128
DEFAULT_BRIDGE_STEPS = 2**12
TASK_PAIRS = 2**14  # antithetic pairs per RNG task; fixed so results do not depend on workers
TAIL_TOL = 1e-10


class GridTailError(RuntimeError):
    pass


class UnsupportedHamiltonian(ValueError):
    pass


def fresnel_toy(nu):
    """∫ exp(iy²/2 - y²/2ν) dy = sqrt(2π / (1/ν - i)), principal branch."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    return complex(np.sqrt(2 * np.pi / (1 / nu - 1j)))


def fresnel_quadrature(nu):
    """Same integral by adaptive quadrature (cross-check)."""
    def re(y):
        return np.exp(-y * y / (2 * nu)) * np.cos(y * y / 2)

    def im(y):
        return np.exp(-y * y / (2 * nu)) * np.sin(y * y / 2)

    L = np.sqrt(2 * nu * 40)
    kw = dict(limit=4000, epsabs=1e-13, epsrel=1e-13)
    return 2 * complex(quad(re, 0, L, **kw)[0], quad(im, 0, L, **kw)[0])


# ---------------------------------------------------------------------------
# lattice


@dataclass(frozen=True)
class LatticeConfig:
    """N intermediate q slices between q_start at t=0 and q_end at t=T.

    Intermediate positions are integrated on q = q_classical(t) + e^{iπ/4}s,
    s in [-half_width, half_width] with ``nodes`` trapezoid points.
    """

    N: int
    T: float
    q_start: complex
    q_end: complex
    half_width: float = 6.0
    nodes: int = 601

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.nodes < 3 or not self.half_width > 0:
            raise ValueError("grid must have >= 3 nodes and positive width")

    @property
    def epsilon(self):
        return self.T / (self.N + 1)


def _split_kinetic(h):
    """h = p²/2m + V(q) -> (m, V as coefficient dict in q)."""
    if not isinstance(h, PolySymbol):
        raise UnsupportedHamiltonian("lattice propagator needs a polynomial symbol")
    kin = 0.0
    V = {}
    for (a, b), c in h.coeffs.items():
        if a == 0:
            V[b] = V.get(b, 0.0) + c
        elif (a, b) == (2, 0):
            kin = c
        else:
            raise UnsupportedHamiltonian("only p²/2m + V(q) is supported")
    if not np.isreal(kin) or not kin > 0:
        raise UnsupportedHamiltonian("kinetic coefficient must be positive")
    if any(np.iscomplexobj(c) and np.imag(c) != 0 for c in V.values()):
        raise UnsupportedHamiltonian("potential must be real")
    deg = max(V, default=0)
    if deg > 2 and (deg % 2 or deg > 8 or V[deg] <= 0):
        raise UnsupportedHamiltonian(
            "potential must have even degree <= 8 and positive leading coefficient"
        )
    return 1 / (2 * float(np.real(kin))), {k: float(np.real(c)) for k, c in V.items()}


def _poly_eval(coeffs, x):
    out = np.zeros_like(x, dtype=complex)
    for k, c in coeffs.items():
        out = out + c * x**k
    return out


def lattice_propagator(h, lat, cfg=None):
    """<q_end| e^{-iHT/ħ} |q_start> from the midpoint-rule lattice integral.

    The p integrals are done in closed form, leaving the kernel
    sqrt(m/2πiħε) exp{(i/ħ)[m(Δq)²/2ε - εV(q̄)]} per slice, which is then
    convolved over the rotated q contour.
    """
    hbar = 1.0 if cfg is None else cfg.hbar
    m, V = _split_kinetic(h)
    N, eps = lat.N, lat.epsilon
    rot = np.exp(1j * np.pi / 4)
    s = np.linspace(-lat.half_width, lat.half_width, lat.nodes)
    w = np.full(s.size, s[1] - s[0]) * rot
    w[0] *= 0.5
    w[-1] *= 0.5
    qa, qb = complex(lat.q_start), complex(lat.q_end)
    line = qa + (qb - qa) * np.arange(N + 2) / (N + 1)
    pref = np.sqrt(m / (2j * np.pi * hbar * eps))

    def kernel(q1, q0):
        d = q1 - q0
        return pref * np.exp(1j / hbar * (m * d * d / (2 * eps) - eps * _poly_eval(V, 0.5 * (q1 + q0))))

    # forward from q_start and backward from q_end, contracted at a middle slice
    mid = (N + 1) // 2
    fwd = kernel(line[1] + rot * s, qa)
    for l in range(1, mid):
        fwd = kernel((line[l + 1] + rot * s)[:, None], (line[l] + rot * s)[None, :]) @ (fwd * w)
    bwd = kernel(qb, line[N] + rot * s)
    for l in range(N - 1, mid - 1, -1):
        bwd = (bwd * w) @ kernel((line[l + 1] + rot * s)[:, None], (line[l] + rot * s)[None, :])
    integrand = fwd * bwd
    _check_tail(integrand, TAIL_TOL)
    return complex(np.sum(integrand * w))


def _check_tail(vec, tol):
    mag = np.abs(vec)
    top = mag.max()
    if top > 0 and max(mag[0], mag[-1]) > tol * top:
        raise GridTailError(
            f"integrand at the grid edge is {max(mag[0], mag[-1]) / top:.1e} of its peak; widen the grid"
        )


def free_kernel(T, q_start, q_end, mass=1.0, hbar=1.0):
    return complex(np.sqrt(mass / (2j * np.pi * hbar * T)) * np.exp(1j * mass * (q_end - q_start) ** 2 / (2 * hbar * T)))


def mehler_kernel(T, q_start, q_end, omega=1.0, mass=1.0, hbar=1.0):
    """Exact kernel of p²/2m + mω²q²/2 (0 < ωT < π)."""
    s = np.sin(omega * T)
    return complex(
        np.sqrt(mass * omega / (2j * np.pi * hbar * s))
        * np.exp(1j * mass * omega / (2 * hbar * s) * ((q_start**2 + q_end**2) * np.cos(omega * T) - 2 * q_start * q_end))
    )


# ---------------------------------------------------------------------------
# Brownian bridges and Stratonovich integrals


@dataclass(frozen=True)
class BridgePath:
    times: np.ndarray
    p: np.ndarray
    q: np.ndarray
    nu: float


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_bridges(n, nu, T, endpoints, steps, seed=None):
    """``n`` independent pinned bridges; returns (times, p, q) with p, q of shape (n, steps+1)."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    (pa, qa), (pb, qb) = endpoints
    rng = _rng(seed)
    t = np.linspace(0.0, T, steps + 1)
    dt = T / steps
    out = []
    for start, end in ((pa, pb), (qa, qb)):
        inc = rng.standard_normal((n, steps)) * np.sqrt(nu * dt)
        W = np.concatenate([np.zeros((n, 1)), np.cumsum(inc, axis=1)], axis=1)
        B = start + (end - start) * t / T + W - W[:, -1:] * t / T
        B[:, 0] = start
        B[:, -1] = end
        out.append(B)
    return t, out[0], out[1]


def sample_bridge(nu, T, endpoints, steps, seed=None):
    t, p, q = sample_bridges(1, nu, T, endpoints, steps, seed)
    return BridgePath(t, p[0], q[0], float(nu))


def refine_bridge(path, seed=None):
    """Halve the step by inserting conditioned midpoints (same underlying path)."""
    rng = _rng(seed)
    dt = path.times[1] - path.times[0]
    t = np.linspace(path.times[0], path.times[-1], 2 * (path.times.size - 1) + 1)

    def fill(x):
        mid = 0.5 * (x[:-1] + x[1:]) + rng.standard_normal(x.size - 1) * np.sqrt(path.nu * dt / 4)
        y = np.empty(t.size)
        y[0::2] = x
        y[1::2] = mid
        return y

    return BridgePath(t, fill(path.p), fill(path.q), path.nu)


def stratonovich_integral(p, q):
    """Σ ½(p_{l+1}+p_l)(q_{l+1}-q_l) along the last axis."""
    p = np.asarray(p)
    q = np.asarray(q)
    return np.sum(0.5 * (p[..., 1:] + p[..., :-1]) * np.diff(q, axis=-1), axis=-1)


def trapezoid_time(values, times):
    dt = np.diff(times)
    return np.sum(0.5 * (values[..., 1:] + values[..., :-1]) * dt, axis=-1)


def stratonovich_action(path, h=None, hbar=1.0, gauge=None):
    """Exponent (i/ħ)[∫p∘dq + G(end) - G(start) - ∫h dt] for one or many paths.

    ``path`` is a BridgePath or a (times, p, q) triple with p, q of shape
    (..., steps+1).
    """
    times, p, q = (path.times, path.p, path.q) if isinstance(path, BridgePath) else path
    S = stratonovich_integral(p, q).astype(complex)
    if gauge is not None:
        S = S + gauge(p[..., -1], q[..., -1]) - gauge(p[..., 0], q[..., 0])
    if h is not None:
        S = S - trapezoid_time(np.asarray(h(p, q)), times)
    return 1j * S / hbar


# ---------------------------------------------------------------------------
# Monte Carlo plumbing


@dataclass(frozen=True)
class MCEstimate:
    mean: complex
    stderr: float
    n_samples: int
    seed: Optional[int]
    meta: dict = field(default_factory=dict, compare=False)


def _tree_sum(parts):
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _run_tasks(fn, model, n_pairs, seed, workers):
    """Split ``n_pairs`` into fixed tasks, each with its own spawned stream."""
    sizes = [TASK_PAIRS] * (n_pairs // TASK_PAIRS)
    if n_pairs % TASK_PAIRS:
        sizes.append(n_pairs % TASK_PAIRS)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(model, k, s) for k, s in zip(sizes, streams)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(fn, jobs))
    else:
        results = [fn(j) for j in jobs]
    total = _tree_sum([np.array([r[0], r[1]]) for r in results])
    count = sum(r[2] for r in results)
    return total[0], total[1].real, count


def _finish(s1, s2, count, n_paths, seed, meta):
    mean = s1 / count
    var = max((s2 - count * abs(mean) ** 2) / (count - 1), 0.0) if count > 1 else float("inf")
    return MCEstimate(complex(mean), float(np.sqrt(var / count)), int(n_paths), seed, meta)


# ---------------------------------------------------------------------------
# slice model


def _scaled_hamiltonian(h, cfg):
    """Rewrite h in coordinates p/√Ω, q√Ω where the Wiener metric is Euclidean."""
    if h is None or (isinstance(h, (int, float)) and h == 0):
        return PolySymbol({})
    if not isinstance(h, PolySymbol):
        raise UnsupportedHamiltonian("slice method needs a polynomial symbol")
    r = np.sqrt(cfg.omega)
    return PolySymbol({(a, b): c * r**a / r**b for (a, b), c in h.coeffs.items()})


def _split_dk(h):
    """h = α p² + β p + V(q) -> (α, β, V coefficients by power)."""
    alpha = beta = 0.0
    V = {}
    for (a, b), c in h.coeffs.items():
        if np.iscomplexobj(c) and np.imag(c) != 0:
            raise UnsupportedHamiltonian("symbol must be real")
        c = float(np.real(c))
        if a == 0:
            V[b] = V.get(b, 0.0) + c
        elif (a, b) == (1, 0):
            beta = c
        elif (a, b) == (2, 0):
            alpha = c
        else:
            raise UnsupportedHamiltonian("slice method supports α p² + β p + V(q) only")
    return alpha, beta, V


@dataclass(frozen=True)
class _SliceModel:
    log_pref: complex  # log of weight normalisation after sampling
    mu: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of Re(P)
    im_P: np.ndarray
    im_k: np.ndarray
    rest: dict  # V terms of degree > 2, weighted by -bε at every interior point
    b_eps: float
    exact: Optional[complex]


def _slice_model(h, nu, T, start, end, N, hbar):
    alpha, beta, V = _split_dk(h)
    c0, c1, c2 = V.get(0, 0.0), V.get(1, 0.0), V.get(2, 0.0)
    rest = {k: c for k, c in V.items() if k > 2}
    b = 1 / hbar
    eps = T / N
    (pa, qa), (pb, qb) = start, end
    x = b * nu * eps / 2
    a = (b / 4) / np.tanh(x)
    logc = np.log(b / (4 * np.pi)) - (x + np.log1p(-np.exp(-2 * x)) - np.log(2))  # log(b / 4π sinh x)
    n = N - 1
    if n < 1:
        raise ValueError("slice method needs N >= 2")
    L = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    gam = 2 * b * eps * alpha
    M = 2 * a * L + 1j * gam * np.eye(n)
    lam = 2 - 2 * np.cos(np.arange(1, N) * np.pi / N)
    logdetM = np.sum(np.log(2 * a * lam + 1j * gam))
    r = np.zeros(n, complex)
    r[0] += 2 * a * pa
    r[-1] += 2 * a * pb
    r -= 1j * b * eps * beta
    S = (b / 2) * (np.eye(n, k=1) - np.eye(n, k=-1))
    s0 = np.zeros(n)
    s0[0] = -(b / 2) * qa
    s0[-1] = (b / 2) * qb
    Mi_S = np.linalg.solve(M, S)
    Mi_s0 = np.linalg.solve(M, s0)
    Mi_r = np.linalg.solve(M, r)
    P = 2 * a * L + S.T @ Mi_S + 2j * b * eps * c2 * np.eye(n)
    P = 0.5 * (P + P.T)
    k = -S.T @ Mi_s0 + 1j * S.T @ Mi_r
    k[0] += 2 * a * qa + 1j * (b / 2) * pa
    k[-1] += 2 * a * qb - 1j * (b / 2) * pb
    k = k - 1j * b * eps * c1

    def hval(p, q):
        return alpha * p * p + beta * p + sum(c * q**j for j, c in V.items())

    const = (
        0.5 * r @ Mi_r + 1j * r @ Mi_s0 - 0.5 * s0 @ Mi_s0
        - a * (pa**2 + pb**2 + qa**2 + qb**2)
        - 1j * b * eps * 0.5 * (hval(pa, qa) + hval(pb, qb))
        - 1j * b * eps * c0 * n
        + 0.5j * b * (pb * qb - pa * qa)
    )
    logC = np.log(2 * np.pi * hbar) + nu * T / (2 * hbar) + N * logc + 0.5 * n * np.log(2 * np.pi) - 0.5 * logdetM + const

    R = P.real
    try:
        Lc = cholesky(R, lower=True)
    except np.linalg.LinAlgError:
        raise UnsupportedHamiltonian("q-sampling density is not normalisable; increase nu or N") from None
    mu = solve_triangular(Lc.T, solve_triangular(Lc, k.real, lower=True), lower=False)
    logdetR = 2 * np.sum(np.log(np.diag(Lc)))
    log_pref = logC + 0.5 * n * np.log(2 * np.pi) - 0.5 * logdetR + 0.5 * mu @ R @ mu

    exact = None
    if not rest:
        Li = solve_triangular(Lc, np.eye(n), lower=True)
        X = Li @ P.imag @ Li.T
        xi = eigvalsh(0.5 * (X + X.T))
        logdet = logdetR + np.sum(np.log(1 + 1j * xi))
        exact = complex(np.exp(logC + 0.5 * n * np.log(2 * np.pi) - 0.5 * logdet + 0.5 * k @ np.linalg.solve(P, k)))
    return _SliceModel(complex(log_pref), mu, Lc, P.imag, k.imag, rest, b * eps, exact)


def _slice_task(job):
    model, pairs, stream = job
    rng = np.random.default_rng(stream)
    z = rng.standard_normal((model.mu.size, pairs))
    y = solve_triangular(model.chol, z, lower=True, trans="T").T

    def phase(qs):
        th = -0.5 * np.einsum("si,si->s", qs @ model.im_P, qs) + qs @ model.im_k
        for j, c in model.rest.items():
            th = th - model.b_eps * c * np.sum(qs**j, axis=1)
        return th

    w = 0.5 * np.exp(model.log_pref) * (np.exp(1j * phase(model.mu + y)) + np.exp(1j * phase(model.mu - y)))
    return w.sum(), np.sum(np.abs(w) ** 2), w.size


# ---------------------------------------------------------------------------
# bridge model


@dataclass(frozen=True)
class _BridgeModel:
    nu: float
    T: float
    start: tuple
    end: tuple
    steps: int
    h: object
    hbar: float
    gauge: object
    log_pref: float


def _bridge_task(job):
    model, pairs, stream = job
    rng = np.random.default_rng(stream)
    t, p, q = sample_bridges(pairs, model.nu, model.T, (model.start, model.end), model.steps, rng)
    (pa, qa), (pb, qb) = model.start, model.end
    lp = pa + (pb - pa) * t / model.T
    lq = qa + (qb - qa) * t / model.T
    e1 = stratonovich_action((t, p, q), model.h, model.hbar, model.gauge)
    e2 = stratonovich_action((t, 2 * lp - p, 2 * lq - q), model.h, model.hbar, model.gauge)
    w = 0.5 * (np.exp(model.log_pref + e1) + np.exp(model.log_pref + e2))
    return w.sum(), np.sum(np.abs(w) ** 2), w.size


def dk_propagator(h, nu, T, start, end, n_samples=10**6, steps=None, seed=0, gauge=None,
                  cfg=None, method="slice", workers=1, target_rel_stderr=None):
    """Monte Carlo estimate of the Wiener-regularized propagator at diffusion ν.

    ``n_samples`` counts paths; they are drawn as n_samples/2 antithetic
    pairs and the reported stderr is over the pair averages.
    """
    cfg = cfg or SpaceConfig()
    if isinstance(h, PolySymbol):
        admissible(h)
    if n_samples < 4:
        raise ValueError("need at least 4 samples")
    pairs = n_samples // 2
    hbar = cfg.hbar
    r = np.sqrt(cfg.omega)
    s_start = (start[0] / r, start[1] * r)
    s_end = (end[0] / r, end[1] * r)
    if method == "slice":
        if gauge is not None and not callable(gauge):
            raise TypeError("gauge must be callable")
        model = _slice_model(_scaled_hamiltonian(h, cfg), nu, T, s_start, s_end, steps or DEFAULT_SLICES, hbar)
        s1, s2, count = _run_tasks(_slice_task, model, pairs, seed, workers)
    elif method == "bridge":
        hs = None if h is None else (lambda p, q: np.real(h(p * r, q / r)))
        dp = s_end[0] - s_start[0]
        dq = s_end[1] - s_start[1]
        log_pref = (np.log(2 * np.pi * hbar) + nu * T / (2 * hbar)
                    - (dp * dp + dq * dq) / (2 * nu * T) - np.log(2 * np.pi * nu * T))
        model = _BridgeModel(nu, T, s_start, s_end, steps or DEFAULT_BRIDGE_STEPS, hs, hbar, None, log_pref)
        s1, s2, count = _run_tasks(_bridge_task, model, pairs, seed, workers)
    else:
        raise ValueError(f"unknown method {method!r}")
    est = _finish(s1, s2, count, 2 * count, seed, {"nu": nu, "T": T, "method": method})
    if gauge is not None:
        g = np.exp(1j * (gauge(*end) - gauge(*start)) / hbar)
        est = MCEstimate(est.mean * g, est.stderr, est.n_samples, est.seed, est.meta)
    if target_rel_stderr is not None and est.stderr > target_rel_stderr * abs(est.mean):
        warnings.warn(
            f"stderr {est.stderr:.2e} exceeds {target_rel_stderr:g} of |mean|; increase n_samples",
            RuntimeWarning,
            stacklevel=2,
        )
    return est


def dk_expectation(h, nu, T, start, end, steps=DEFAULT_SLICES, cfg=None, gauge=None):
    """Exact mean of the slice estimator (no sampling noise); V of degree <= 2 only."""
    cfg = cfg or SpaceConfig()
    r = np.sqrt(cfg.omega)
    model = _slice_model(_scaled_hamiltonian(h, cfg), nu, T, (start[0] / r, start[1] * r),
                         (end[0] / r, end[1] * r), steps, cfg.hbar)
    if model.exact is None:
        raise UnsupportedHamiltonian("closed form needs a potential of degree <= 2")
    val = model.exact
    if gauge is not None:
        val *= np.exp(1j * (gauge(*end) - gauge(*start)) / cfg.hbar)
    return complex(val)


def dk_limit(h, nu, T, start, end, **kw):
    """Richardson step 2K(2ν) - K(ν), removing the O(1/ν) bias."""
    seed = kw.pop("seed", 0)
    lo = dk_propagator(h, nu, T, start, end, seed=seed, **kw)
    hi = dk_propagator(h, 2 * nu, T, start, end, seed=None if seed is None else seed + 1, **kw)
    return MCEstimate(
        2 * hi.mean - lo.mean,
        float(math.hypot(2 * hi.stderr, lo.stderr)),
        lo.n_samples + hi.n_samples,
        seed,
        {"nu": (nu, 2 * nu), "T": T, "parts": (lo, hi)},
    )


def matrix_propagator(H, T, start, end, fid=None, cfg=None, gauge=None):
    """<end| e^{-iHT/ħ} |start> between coherent states, by eigendecomposition."""
    cfg = cfg or SpaceConfig()
    fid = fid or Fiducial.ground(cfg)
    V = coherent_states([start[0], end[0]], [start[1], end[1]], fid, cfg, gauge=gauge)
    return complex(np.vdot(V[1], evolve(H, T, cfg) @ V[0]))
