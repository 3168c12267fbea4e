"""Smooth transition profiles shared by every cutoff in the package.

All cutoffs (dyadic shell profiles, frequency sectors, spatial windows,
coefficient low-passes) are built from one C-infinity bridge: the
normalized integral of the bump ``t -> exp(-1/(1-t**2))``.  The bridge is
evaluated by fixed-order Gauss-Legendre quadrature, which converges to
machine precision because the integrand is smooth on the closed interval
(all derivatives vanish at the endpoints).
"""

from __future__ import annotations

import numpy as np

__all__ = ["smoothstep", "bump_integral_total"]

_GL_ORDER = 96
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)


def _bump(t: np.ndarray) -> np.ndarray:
    """exp(-1/(1-t^2)) on (-1, 1), zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


def _bump_tail_integral(s: np.ndarray) -> np.ndarray:
    """Integral of the bump over [s, 1] for s in [-1, 1], vectorized."""
    s = np.asarray(s, dtype=float)
    # Affine map of the fixed nodes onto each [s, 1].
    half = 0.5 * (1.0 - s)
    mid = 0.5 * (1.0 + s)
    nodes = mid[..., None] + half[..., None] * _GL_NODES
    vals = _bump(nodes)
    return half * (vals @ _GL_WEIGHTS)


bump_integral_total = float(_bump_tail_integral(np.array(-1.0)))


def smoothstep(u) -> np.ndarray:
    """Monotone C-infinity step: 1 for u <= 0, 0 for u >= 1.

    The transition on (0, 1) is the normalized tail integral of the
    bump, so every derivative vanishes at both endpoints and the plateau
    values are exact floating-point 0.0 and 1.0.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.empty_like(u)
    lo = u <= 0.0
    hi = u >= 1.0
    mid = ~(lo | hi)
    out[lo] = 1.0
    out[hi] = 0.0
    if np.any(mid):
        s = 2.0 * u[mid] - 1.0
        out[mid] = _bump_tail_integral(s) / bump_integral_total
    return float(out[0]) if scalar else out
