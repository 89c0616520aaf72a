"""Static, byte-reproducible SVG figures for the CLI."""
from contextlib import contextmanager

import matplotlib
import numpy as np
from matplotlib.figure import Figure

STYLE = {
    "svg.hashsalt": "coherentq",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.5, 3.2),
}


@contextmanager
def style():
    with matplotlib.rc_context(STYLE):
        yield


def save(fig, path, description=""):
    # Date=None drops the timestamp so reruns are byte-identical
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": description})


def _figure():
    fig = Figure(layout="constrained")
    return fig, fig.add_subplot()


def levels(path, values, title, ylabel="energy"):
    with style():
        fig, ax = _figure()
        n = np.arange(len(values))
        ax.plot(n, values, "o")
        ax.set_xlabel("n")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        save(fig, path, f"{title}: " + " ".join(f"{v:.6g}" for v in values))


def matrix(path, M, title):
    with style():
        fig, ax = _figure()
        im = ax.imshow(np.abs(M), cmap="viridis", origin="upper")
        ax.grid(False)
        fig.colorbar(im, ax=ax, label="|entry|")
        ax.set_title(title)
        save(fig, path, f"{title}: shape {M.shape}")


def contour(path, x, y, Z, title, xlabel="p", ylabel="q"):
    with style():
        fig, ax = _figure()
        cs = ax.contour(x, y, Z.T, levels=12, cmap="viridis")
        ax.clabel(cs, fontsize=6)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_aspect("equal")
        ax.set_title(title)
        save(fig, path, f"{title}: grid {Z.shape}")


def convergence(path, x, err, title, xlabel):
    with style():
        fig, ax = _figure()
        ax.loglog(x, err, "o-")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("|error|")
        ax.set_title(title)
        save(fig, path, f"{title}: " + " ".join(f"{a}:{b:.3e}" for a, b in zip(x, err)))


def estimates(path, nu, mean, stderr, oracle, title):
    with style():
        fig, ax = _figure()
        mean = np.asarray(mean)
        ax.errorbar(nu, mean.real, yerr=stderr, fmt="o", label="Re estimate")
        ax.errorbar(nu, mean.imag, yerr=stderr, fmt="s", label="Im estimate")
        if oracle is not None:
            ax.axhline(oracle.real, ls="--", c="C0", lw=0.8)
            ax.axhline(oracle.imag, ls="--", c="C1", lw=0.8)
        ax.set_xscale("log")
        ax.set_xlabel("ν")
        ax.legend(frameon=False)
        ax.set_title(title)
        save(fig, path, f"{title}: " + " ".join(f"{n}:{m:.6g}" for n, m in zip(nu, mean)))


def metric_components(path, x, comps, title):
    with style():
        fig, ax = _figure()
        for name, vals in comps.items():
            ax.plot(x, vals, "o-", label=name)
        ax.set_xlabel("sample")
        ax.legend(frameon=False)
        ax.set_title(title)
        save(fig, path, title)
