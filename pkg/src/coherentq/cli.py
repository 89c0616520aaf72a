"""Batch experiment runner.

An experiment is a JSON object ``{"command": ..., "params": {...}, "seed": n}``.
Each run writes ``<command>.csv``, an optional ``<command>.svg`` and a
``manifest.json`` into the output directory.
"""
import argparse
import csv
import json
import platform
import sys
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from . import plotting
from .charts import get_chart
from .coherent import Fiducial, resolution_check, trusted
from .geometry import (
    bohr_sommerfeld,
    fubini_study_metric,
    gaussian_curvature,
    loop_action,
    pushforward,
    variance_metric,
)
from .hilbert import SpaceConfig, spectrum, squeezed_ground
from .pathint import (
    LatticeConfig,
    dk_propagator,
    free_kernel,
    lattice_propagator,
    matrix_propagator,
    mehler_kernel,
)
from .spin import SpinConfig, casimir, parse_sphere_symbol, spin_resolution_check, spin_toeplitz
from .symbols import SymbolSyntaxError, parse_symbol, toeplitz_quantize, upper_symbol

SPACE_DEFAULTS = {"dim": 64, "hbar": 1.0, "omega": 1.0}
SEED_MAX = 2**64 - 1


class SpecError(ValueError):
    """Invalid experiment descriptor."""


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    params: dict
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"command", "params", "seed"}
        if extra:
            raise SpecError(f"unknown top-level keys {sorted(extra)}")
        if d.get("command") not in COMMANDS:
            raise SpecError(f"command must be one of {sorted(COMMANDS)}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed <= SEED_MAX:
            raise SpecError("seed must be an unsigned 64-bit integer")
        params = d.get("params", {})
        if not isinstance(params, dict):
            raise SpecError("params must be an object")
        return cls(d["command"], params, seed)


# ---------------------------------------------------------------------------
# parameter helpers


def _params(spec, defaults):
    unknown = set(spec.params) - set(defaults)
    if unknown:
        raise SpecError(f"unknown params for {spec.command}: {sorted(unknown)}")
    out = dict(defaults)
    out.update(spec.params)
    return out


def _space(p):
    try:
        return SpaceConfig(int(p["dim"]), float(p["hbar"]), float(p["omega"]))
    except (TypeError, ValueError) as e:
        raise SpecError(str(e)) from None


def _symbol(text):
    try:
        return parse_symbol(str(text))
    except SymbolSyntaxError as e:
        raise SpecError(f"symbol: {e}") from None


def _fiducial(text, cfg):
    """'ground', 'number:<n>' or 'squeezed:<frequency ratio>'."""
    kind, _, arg = str(text).partition(":")
    if kind == "ground":
        return Fiducial.ground(cfg)
    if kind == "number":
        v = np.zeros(cfg.dim, complex)
        v[int(arg)] = 1.0
        return Fiducial(v)
    if kind == "squeezed":
        return Fiducial(squeezed_ground(cfg, float(arg)))
    raise SpecError(f"unknown fiducial {text!r}")


def _pair(x, name):
    if not (isinstance(x, (list, tuple)) and len(x) == 2):
        raise SpecError(f"{name} must be a [p, q] pair")
    return float(x[0]), float(x[1])


def _space_columns(cfg):
    return {"hbar": cfg.hbar, "omega": cfg.omega, "dim": cfg.dim}


# ---------------------------------------------------------------------------
# commands; each returns (rows, plot callback or None)


def cmd_quantize(spec, ctx):
    p = _params(spec, {**SPACE_DEFAULTS, "symbol": "0.5*p^2+0.5*q^2", "fiducial": "ground", "block": None})
    cfg = _space(p)
    H = toeplitz_quantize(_symbol(p["symbol"]), _fiducial(p["fiducial"], cfg), cfg)
    m = int(p["block"] or cfg.leading)
    extra = _space_columns(cfg)
    rows = [
        {"row": i, "col": j, "re": H[i, j].real, "im": H[i, j].imag, **extra}
        for i in range(m) for j in range(m)
    ]
    return rows, lambda path: plotting.matrix(path, H[:m, :m], f"Toeplitz({p['symbol']})")


def cmd_spectrum(spec, ctx):
    p = _params(spec, {**SPACE_DEFAULTS, "symbol": "0.5*p^2+0.5*q^2", "fiducial": "ground", "count": None})
    cfg = _space(p)
    H = toeplitz_quantize(_symbol(p["symbol"]), _fiducial(p["fiducial"], cfg), cfg)
    m = cfg.leading
    ev = spectrum(H[:m, :m])[: int(p["count"] or m // 2)]
    rows = [{"n": n, "energy": e, **_space_columns(cfg)} for n, e in enumerate(ev)]
    return rows, lambda path: plotting.levels(path, ev, "spectrum")


def cmd_symbols(spec, ctx):
    p = _params(spec, {**SPACE_DEFAULTS, "symbol": "0.5*p^2+0.5*q^2", "extent": 2.0, "points": 21})
    cfg = _space(p)
    h = _symbol(p["symbol"])
    fid = Fiducial.ground(cfg)
    axis = np.linspace(-p["extent"], p["extent"], int(p["points"]))
    if not np.all(trusted(axis, axis, cfg, fid)):
        raise SpecError("grid extends beyond the trusted radius; lower extent or raise dim")
    H = toeplitz_quantize(h, fid, cfg)
    up = upper_symbol(H, fid, axis, axis, cfg).values
    P, Q = np.meshgrid(axis, axis, indexing="ij")
    lower = np.real(h(P, Q))
    rows = [
        {"p": P.flat[k], "q": Q.flat[k], "lower": lower.flat[k], "upper": float(np.real(up.flat[k])),
         "difference": float(np.real(up.flat[k]) - lower.flat[k]), **_space_columns(cfg)}
        for k in range(P.size)
    ]
    return rows, lambda path: plotting.contour(path, axis, axis, np.real(up) - lower, "upper - lower")


def cmd_metric(spec, ctx):
    p = _params(spec, {**SPACE_DEFAULTS, "fiducial": "ground", "points": [[0.0, 0.0], [0.5, -0.3], [1.0, 1.0]],
                       "chart": "cartesian"})
    cfg = _space(p)
    fid = _fiducial(p["fiducial"], cfg)
    chart = get_chart(p["chart"])
    g = fubini_study_metric(fid, cfg)
    gv = variance_metric(fid, cfg)
    if chart.name != "cartesian":
        g = pushforward(chart, g)
        gv = pushforward(chart, gv)
    rows = []
    for pt in p["points"]:
        u, v = _pair(pt, "point")
        A, B, C = (float(x) for x in g(u, v))
        Av, Bv, Cv = (float(x) for x in gv(u, v))
        rows.append({"u": u, "v": v, "A": A, "B": B, "C": C, "A_var": Av, "B_var": Bv, "C_var": Cv,
                     "curvature": gaussian_curvature(g, (u, v)), "chart": chart.name, **_space_columns(cfg)})
    comps = {k: [r[k] for r in rows] for k in ("A", "B", "C")}
    return rows, lambda path: plotting.metric_components(path, range(len(rows)), comps, f"metric ({chart.name})")


def cmd_chart(spec, ctx):
    p = _params(spec, {"chart": "action-angle", "symbol": "0.5*p^2+0.5*q^2",
                       "points": [[1.0, 0.0], [0.3, 1.2], [-0.7, 0.4]]})
    chart = get_chart(p["chart"])
    h = _symbol(p["symbol"])
    ht = pushforward(chart, h)
    rows = []
    for pt in p["points"]:
        pp, qq = _pair(pt, "point")
        u, v = (float(x) for x in chart.forward(pp, qq))
        rows.append({"p": pp, "q": qq, "u": u, "v": v, "h": float(np.real(h(pp, qq))),
                     "h_chart": float(np.real(ht(u, v))), "jacobian_det": float(chart.determinant(pp, qq)),
                     "chart": chart.name})
    return rows, None


def cmd_bohr(spec, ctx):
    p = _params(spec, {"symbol": "0.5*p^2+0.5*q^2", "n_max": 5, "hbar": 1.0, "chart": "cartesian"})
    h = _symbol(p["symbol"])
    E = bohr_sommerfeld(h, int(p["n_max"]), float(p["hbar"]), p["chart"])
    rows = [{"n": n, "energy": e, "action": loop_action(h, e, p["chart"]), "hbar": float(p["hbar"]),
             "chart": get_chart(p["chart"]).name} for n, e in enumerate(E)]
    return rows, lambda path: plotting.levels(path, E, "Bohr-Sommerfeld levels")


def cmd_lattice(spec, ctx):
    p = _params(spec, {"symbol": "0.5*p^2+0.5*q^2", "T": 1.0, "q_start": 0.0, "q_end": 1.0,
                       "N": [16, 32, 64, 128], "hbar": 1.0, "nodes": 601, "half_width": 6.0})
    h = _symbol(p["symbol"])
    T, qa, qb, hbar = float(p["T"]), float(p["q_start"]), float(p["q_end"]), float(p["hbar"])
    cfg = SpaceConfig(2, hbar, 1.0)
    exact = None
    if h.close_to(_symbol("0.5*p^2")):
        exact = free_kernel(T, qa, qb, hbar=hbar)
    elif h.close_to(_symbol("0.5*p^2+0.5*q^2")):
        exact = mehler_kernel(T, qa, qb, hbar=hbar)
    rows = []
    for N in p["N"]:
        lat = LatticeConfig(int(N), T, qa, qb, float(p["half_width"]), int(p["nodes"]))
        K = lattice_propagator(h, lat, cfg)
        row = {"N": int(N), "T": T, "re": K.real, "im": K.imag}
        if exact is not None:
            row.update(exact_re=exact.real, exact_im=exact.imag, abs_error=abs(K - exact))
        rows.append(row | {"hbar": hbar})
    if exact is None:
        return rows, None
    return rows, lambda path: plotting.convergence(
        path, [r["N"] for r in rows], [r["abs_error"] for r in rows], "lattice error", "N")


def cmd_dk(spec, ctx):
    p = _params(spec, {**SPACE_DEFAULTS, "symbol": "0", "nu": [10, 20, 40], "T": 1.0, "start": [0.0, 0.0],
                       "end": [1.0, 0.0], "n_samples": 10**5, "steps": None, "method": "slice"})
    cfg = _space(p)
    h = _symbol(p["symbol"])
    start, end = _pair(p["start"], "start"), _pair(p["end"], "end")
    T = float(p["T"])
    fid = Fiducial.ground(cfg)
    oracle = matrix_propagator(toeplitz_quantize(h, fid, cfg) if h.coeffs else np.zeros((cfg.dim, cfg.dim)),
                               T, start, end, fid, cfg)
    rows = []
    # per-ν seeds derived from the run seed so the ν list order does not matter
    seeds = np.random.SeedSequence(ctx["seed"]).generate_state(len(p["nu"]), dtype=np.uint64)
    for nu, sd in zip(p["nu"], seeds):
        est = dk_propagator(h, float(nu), T, start, end, int(p["n_samples"]), p["steps"], int(sd),
                            cfg=cfg, method=p["method"], workers=ctx["workers"])
        rows.append({"nu": float(nu), "T": T, "re": est.mean.real, "im": est.mean.imag, "stderr": est.stderr,
                     "nSamples": est.n_samples, "oracle_re": oracle.real, "oracle_im": oracle.imag,
                     **_space_columns(cfg)})
    return rows, lambda path: plotting.estimates(
        path, [r["nu"] for r in rows], [complex(r["re"], r["im"]) for r in rows],
        [r["stderr"] for r in rows], oracle, "Wiener-regularized propagator")


def cmd_spin(spec, ctx):
    p = _params(spec, {"s": 0.5, "hbar": 1.0, "symbol": "cos(theta)"})
    cfg = SpinConfig(float(p["s"]), float(p["hbar"]))
    try:
        h = parse_sphere_symbol(str(p["symbol"]))
    except Exception as e:  # sympy raises several unrelated types
        raise SpecError(f"sphere symbol: {e}") from None
    T = spin_toeplitz(h, cfg)
    cas = float(np.max(np.abs(casimir(cfg) - cfg.s * (cfg.s + 1) * cfg.hbar**2 * np.eye(cfg.dim))))
    res = spin_resolution_check(cfg)
    rows = [{"row": i, "col": j, "re": T[i, j].real, "im": T[i, j].imag, "s": cfg.s, "hbar": cfg.hbar,
             "casimir_deviation": cas, "resolution_deviation": res}
            for i in range(cfg.dim) for j in range(cfg.dim)]
    return rows, lambda path: plotting.matrix(path, T, f"sphere Toeplitz({p['symbol']})")


def cmd_resolution(spec, ctx):
    p = _params(spec, {**SPACE_DEFAULTS, "fiducials": ["ground", "number:1"]})
    cfg = _space(p)
    rows = [{"fiducial": f, "deviation": resolution_check(_fiducial(f, cfg), cfg), **_space_columns(cfg)}
            for f in p["fiducials"]]
    return rows, None


COMMANDS = {
    "quantize": cmd_quantize,
    "spectrum": cmd_spectrum,
    "symbols": cmd_symbols,
    "metric": cmd_metric,
    "chart": cmd_chart,
    "bohr": cmd_bohr,
    "lattice": cmd_lattice,
    "dk": cmd_dk,
    "spin": cmd_spin,
    "resolution": cmd_resolution,
}


# ---------------------------------------------------------------------------


def write_csv(path, rows):
    header = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "matplotlib", "scikit-image", "sympy", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def run(spec, out_dir, workers=1, svg=False):
    """Execute one experiment; returns the CSV path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows, plot = COMMANDS[spec.command](spec, {"seed": spec.seed, "workers": workers})
    csv_path = out / f"{spec.command}.csv"
    write_csv(csv_path, rows)
    artifacts = [csv_path.name]
    if svg and plot is not None:
        svg_path = out / f"{spec.command}.svg"
        plot(svg_path)
        artifacts.append(svg_path.name)
    manifest = {
        "spec": {"command": spec.command, "params": spec.params, "seed": spec.seed},
        "workers": workers,
        "artifacts": artifacts,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return csv_path


def main(argv=None):
    ap = argparse.ArgumentParser(prog="coherentq", description="Run a coherent-state quantization experiment.")
    ap.add_argument("--spec", required=True, help="JSON experiment descriptor")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the descriptor seed (u64)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--svg", action="store_true", help="also write an SVG figure")
    args = ap.parse_args(argv)
    try:
        raw = json.loads(Path(args.spec).read_text())
        if not isinstance(raw, dict):
            raise SpecError("descriptor must be a JSON object")
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.workers < 1:
            raise SpecError("workers must be >= 1")
        spec = ExperimentSpec.from_dict(raw)
        path = run(spec, args.out, args.workers, args.svg)
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 2
    except (SpecError, ValueError, TypeError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}".replace("\n", " "), file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
