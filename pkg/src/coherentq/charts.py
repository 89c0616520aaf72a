"""Named coordinate charts on the phase plane.

A chart maps Cartesian (p, q) to chart coordinates (u, v).  Jacobians are
given in closed form so canonicity can be checked independently of the
maps themselves.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

# disk excluded around the polar singularity, in units of the action
ACTION_ANGLE_CUTOFF = 1e-3


@dataclass(frozen=True)
class CoordinateMap:
    name: str
    forward: Callable
    inverse: Callable
    jacobian: Callable  # d(u,v)/d(p,q) at Cartesian points, shape (..., 2, 2)
    generating: Optional[Callable] = None  # F(p,q) with u dv = p dq + dF
    periodic_v: Optional[float] = None  # period of the second coordinate, if any
    u_min: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def inverse_jacobian(self, u, v):
        """d(p,q)/d(u,v) evaluated at chart points."""
        p, q = self.inverse(u, v)
        return np.linalg.inv(self.jacobian(p, q))

    def determinant(self, p, q):
        return np.linalg.det(self.jacobian(p, q))

    def is_canonical(self, p, q, tol=1e-8):
        return bool(np.all(np.abs(self.determinant(p, q) - 1) <= tol))


def _stack(a, b, c, d):
    a, b, c, d = np.broadcast_arrays(a, b, c, d)
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


def _identity():
    return CoordinateMap(
        name="cartesian",
        forward=lambda p, q: (np.asarray(p, float), np.asarray(q, float)),
        inverse=lambda u, v: (np.asarray(u, float), np.asarray(v, float)),
        jacobian=lambda p, q: _stack(np.ones_like(np.asarray(p, float)), 0.0, 0.0, 1.0),
        generating=lambda p, q: np.zeros_like(np.asarray(p, float)),
    )


def _rotation45():
    r = np.sqrt(0.5)
    return CoordinateMap(
        name="rotation-45",
        forward=lambda p, q: (r * (p + q), r * (q - p)),
        inverse=lambda u, v: (r * (u - v), r * (u + v)),
        jacobian=lambda p, q: _stack(r + 0 * np.asarray(p, float), r, -r, r),
        generating=lambda p, q: (q * q - p * p - 2 * p * q) / 4,
    )


def _action_angle():
    def forward(p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        return 0.5 * (p * p + q * q), np.arctan2(q, p)

    def inverse(u, v):
        r = np.sqrt(2 * np.asarray(u, float))
        return r * np.cos(v), r * np.sin(v)

    def jacobian(p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        r2 = p * p + q * q
        return _stack(p, q, -q / r2, p / r2)

    return CoordinateMap(
        name="action-angle",
        forward=forward,
        inverse=inverse,
        jacobian=jacobian,
        generating=lambda p, q: -0.5 * np.asarray(p, float) * np.asarray(q, float),
        periodic_v=2 * np.pi,
        u_min=ACTION_ANGLE_CUTOFF,
    )


CHARTS = {c.name: c for c in (_identity(), _rotation45(), _action_angle())}


def register_chart(chart):
    """Add a user chart to the registry; names must be unique."""
    if chart.name in CHARTS:
        raise ValueError(f"chart {chart.name!r} already registered")
    CHARTS[chart.name] = chart
    return chart


def get_chart(name):
    if isinstance(name, CoordinateMap):
        return name
    try:
        return CHARTS[name]
    except KeyError:
        raise ValueError(f"unknown chart {name!r}; known: {sorted(CHARTS)}") from None
