"""Anisotropic weight vectors, quasi-homogeneous norms and conic sectors.

A weight vector ``(m_1, ..., m_n)`` of positive integers with
``min(m_j) == 1`` induces the norm ``|xi| = (sum xi_j**(2 m_j))**0.5``
and the dilation ``t**(1/M) xi = (t**(1/m_1) xi_1, ...)``, under which
the norm scales exactly linearly in ``t``.  Frequency-space sectors are
taken to be balls on the unit sphere of this norm, swept out by the
dilations; membership is then dilation invariant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "WeightVector",
    "ConicSector",
    "m_norm",
    "m_bracket",
    "dilate",
    "sphere_project",
    "sphere_distance",
    "sector_contains",
]


@dataclass(frozen=True)
class WeightVector:
    """Integer anisotropy exponents, one per axis, normalized to min 1."""

    m: tuple[int, ...]

    def __post_init__(self):
        if len(self.m) == 0:
            raise ValueError("weight vector must have at least one component")
        if any((not isinstance(v, (int, np.integer))) or isinstance(v, bool) for v in self.m):
            raise ValueError(f"weight components must be integers, got {self.m}")
        if any(v < 1 for v in self.m):
            raise ValueError(f"weight components must be >= 1, got {self.m}")
        if min(self.m) != 1:
            raise ValueError(f"smallest weight component must be 1, got {self.m}")
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def m_star(self) -> int:
        return max(self.m)

    @property
    def inv(self) -> tuple[float, ...]:
        return tuple(1.0 / v for v in self.m)

    def alpha_order(self, alpha) -> float:
        """Anisotropic order ``sum(alpha_j / m_j)`` of a multi-index."""
        alpha = tuple(alpha)
        if len(alpha) != self.n:
            raise ValueError(f"multi-index length {len(alpha)} != dimension {self.n}")
        return float(sum(a / m for a, m in zip(alpha, self.m)))

    def to_json(self) -> dict:
        return {"m": list(self.m)}

    @staticmethod
    def from_json(obj) -> "WeightVector":
        if not isinstance(obj, dict) or "m" not in obj:
            raise ValueError(f"weight JSON must be {{'m': [...]}}, got {obj!r}")
        return WeightVector(tuple(obj["m"]))


def _components(w: WeightVector, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (w.n,):
        raise ValueError(f"frequency vector last axis {xi.shape} incompatible with dimension {w.n}")
    return xi


def m_norm(w: WeightVector, xi) -> np.ndarray | float:
    """Quasi-homogeneous norm ``(sum xi_j**(2 m_j))**0.5``.

    ``xi`` may carry leading batch axes; the last axis is the component
    axis and must match the dimension of ``w``.
    """
    xi = _components(w, xi)
    acc = np.zeros(xi.shape[:-1], dtype=float)
    for j, mj in enumerate(w.m):
        acc += xi[..., j] ** (2 * mj)
    out = np.sqrt(acc)
    return float(out) if out.ndim == 0 else out


def m_bracket(w: WeightVector, xi) -> np.ndarray | float:
    """Japanese-bracket version ``sqrt(1 + m_norm(xi)**2)``, always >= 1."""
    xi = _components(w, xi)
    acc = np.ones(xi.shape[:-1], dtype=float)
    for j, mj in enumerate(w.m):
        acc += xi[..., j] ** (2 * mj)
    out = np.sqrt(acc)
    return float(out) if out.ndim == 0 else out


def dilate(w: WeightVector, t, xi) -> np.ndarray:
    """Anisotropic dilation ``(t**(1/m_1) xi_1, ..., t**(1/m_n) xi_n)``.

    Satisfies ``m_norm(dilate(w, t, xi)) == t * m_norm(xi)`` exactly.
    ``t`` may be scalar or broadcast against the batch axes of ``xi``.
    """
    xi = _components(w, xi)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("dilation parameter must be positive")
    out = np.empty(np.broadcast_shapes(t.shape + (1,), xi.shape), dtype=float)
    for j, mj in enumerate(w.m):
        out[..., j] = t ** (1.0 / mj) * xi[..., j]
    return out


def sphere_project(w: WeightVector, xi) -> np.ndarray:
    """Canonical unit-norm representative of the dilation ray through xi."""
    xi = _components(w, xi)
    r = m_norm(w, xi)
    if np.any(np.asarray(r) == 0.0):
        raise ValueError("cannot project the zero frequency onto the unit sphere")
    return dilate(w, 1.0 / np.asarray(r), xi)


def sphere_distance(w: WeightVector, p, q) -> np.ndarray | float:
    """Euclidean distance between the sphere projections of p and q.

    Dilation invariant in both arguments; this is the metric used for
    sector membership.
    """
    pp = sphere_project(w, p)
    qq = sphere_project(w, q)
    out = np.sqrt(np.sum((pp - qq) ** 2, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ConicSector:
    """Dilation-invariant frequency sector with a low-frequency cut.

    ``center`` lies on the unit sphere of the weighted norm,
    ``angular_radius`` is a distance on that sphere (see
    :func:`sphere_distance`), and frequencies with weighted norm at or
    below ``low_cut`` are excluded.
    """

    center: tuple[float, ...]
    angular_radius: float
    low_cut: float = 4.0

    def __post_init__(self):
        if self.angular_radius < 0.0:
            raise ValueError("angular radius must be nonnegative")
        if self.low_cut <= 0.0:
            raise ValueError("low-frequency cut must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def validate(self, w: WeightVector) -> None:
        r = m_norm(w, np.asarray(self.center))
        if abs(r - 1.0) > 1e-9:
            raise ValueError(f"sector center must lie on the unit sphere, |center| = {r}")

    @staticmethod
    def around(w: WeightVector, direction, angular_radius: float, low_cut: float = 4.0) -> "ConicSector":
        """Sector centred on the ray through ``direction`` (any nonzero point)."""
        c = sphere_project(w, np.asarray(direction, dtype=float))
        return ConicSector(tuple(c.tolist()), float(angular_radius), float(low_cut))


def sector_contains(sector: ConicSector, w: WeightVector, xi) -> np.ndarray | bool:
    """Membership test; zero frequencies and the low ball report False."""
    xi = _components(w, xi)
    r = np.asarray(m_norm(w, xi))
    ok = r > sector.low_cut
    out = np.zeros(r.shape, dtype=bool)
    if np.any(ok):
        proj = dilate(w, 1.0 / np.where(ok, r, 1.0), xi)
        d = np.sqrt(np.sum((proj - np.asarray(sector.center)) ** 2, axis=-1))
        out = ok & (d <= sector.angular_radius)
    return bool(out) if out.ndim == 0 else out
