"""Deterministic model fields with known regularity.

Every generator is seeded and grid-parametrized so reports and tests can
reproduce fields bit-for-bit.  The singular models are built from 1-D
profiles with a prescribed Hoelder exponent placed along one axis (or
along a curved frequency ray), which pins their anisotropic regularity
index analytically:

* ``square_wave``: jump in x1, index 0 for any weight.
* ``cusp``: profile |t - t0|^sigma along one axis; under weights
  (m_1, ..., m_n) the index is sigma / m_axis.
* ``gaussian_bump``: smooth, index beyond any resolvable scale.
* ``parabola_wave`` (weights (1, 2)): spectrum on the integer points
  (k^2, k) of a curved dilation ray, index sigma/2 in the direction of
  that ray; it is annihilated by D1 - D2^2.
"""

from __future__ import annotations

import numpy as np

from .field import Field, grid_points
from .weight import WeightVector

__all__ = [
    "square_wave",
    "cusp",
    "gaussian_bump",
    "parabola_wave",
    "axis_lacunary",
    "random_band_limited",
    "smooth_mix",
    "make_sample",
]


def square_wave(shape, w: WeightVector, axis: int = 0) -> Field:
    """Sign function of sin(x_axis): jumps on the lines x_axis in {0, pi}."""
    x = grid_points(shape)[axis]
    vals = np.where(np.sin(x) >= 0.0, 1.0, -1.0) * np.ones(shape)
    return Field(vals.astype(np.complex128), w)


def cusp(shape, w: WeightVector, sigma: float, axis: int = 1,
         center: float = np.pi, amplitude: float = 1.0) -> Field:
    """Hoelder-sigma cusp ``|2 sin((x_axis - center)/2)|^sigma``.

    Behaves like |x - center|^sigma at the center and is analytic
    everywhere else on the torus, so the profile carries exactly one
    singular line per period (the half-angle sine vanishes only there).
    """
    x = grid_points(shape)[axis]
    vals = amplitude * np.abs(2.0 * np.sin(0.5 * (x - center))) ** sigma * np.ones(shape)
    return Field(vals.astype(np.complex128), w)


def gaussian_bump(shape, w: WeightVector, width: float = 0.35,
                  center=None) -> Field:
    """Gaussian-like bump, analytic on the torus.

    Built from ``exp((cos(x - c) - 1)/width^2)`` per axis, which matches
    a Gaussian of the given width near the center and is periodic with
    exponentially decaying spectrum (no wrap-around kink).
    """
    pts = grid_points(shape)
    if center is None:
        center = tuple(np.pi for _ in shape)
    acc = np.zeros(shape)
    for x, c in zip(pts, center):
        acc = acc + (np.cos(x - c) - 1.0)
    vals = np.exp(acc / width ** 2)
    return Field(vals.astype(np.complex128), w)


def parabola_wave(shape, w: WeightVector, sigma: float = 1.0,
                  k_max: int | None = None) -> Field:
    """Weierstrass-type sum ``sum_k k^-sigma exp(i(k^2 x1 + k x2))``.

    Requires weight (1, 2); the spectrum sits on the dilation ray
    through (1, 1), which is exactly where xi1 - xi2^2 vanishes.
    """
    if w.m != (1, 2):
        raise ValueError("parabola_wave is defined for weight (1, 2)")
    N1, N2 = shape
    largest = int(np.floor(np.sqrt(N1 // 2 - 1)))
    largest = min(largest, N2 // 2 - 1)
    k_max = largest if k_max is None else min(k_max, largest)
    if k_max < 1:
        raise ValueError(f"grid {shape} too small to carry the parabola ray")
    spec = np.zeros(shape, dtype=np.complex128)
    for k in range(1, k_max + 1):
        spec[k * k, k] = k ** (-sigma)
    return Field.from_spectrum_array(spec, w)


def axis_lacunary(shape, w: WeightVector, index: float, axis: int = 1,
                  k_top: int | None = None, phase_seed: int | None = None,
                  amplitude: float = 1.0) -> Field:
    """Real lacunary wave along one axis with prescribed regularity index.

    Places modes ``k e_axis`` at half-octave spacing in the weighted norm
    (``|k e_axis| = k**m_axis``) with amplitudes ``|k e_axis|**(-index)``,
    so shell sup-norms decay like ``2**(-index h)`` by construction.  The
    spectrum is a finite trigonometric polynomial: compositions of low
    polynomial degree stay alias-free if ``k_top`` leaves headroom.
    """
    N = shape[axis]
    if k_top is None:
        k_top = N // 8
    k_top = min(k_top, N // 2 - 1)
    mj = w.m[axis]
    ks: list[int] = []
    k = 1.0
    while round(k) <= k_top:
        kk = int(round(k))
        if not ks or kk > ks[-1]:
            ks.append(kk)
        k *= 2.0 ** (0.5 / mj)
    rng = np.random.default_rng(phase_seed) if phase_seed is not None else None
    spec = np.zeros(shape, dtype=np.complex128)
    for kk in ks:
        a = amplitude * float(kk) ** (-index * mj)
        phase = np.exp(2j * np.pi * rng.random()) if rng is not None else 1.0
        idx_pos = [0] * len(shape)
        idx_neg = [0] * len(shape)
        idx_pos[axis] = kk
        idx_neg[axis] = -kk % N
        spec[tuple(idx_pos)] = 0.5 * a * phase
        spec[tuple(idx_neg)] = 0.5 * a * np.conj(phase)
    return Field.from_spectrum_array(spec, w)


def random_band_limited(shape, w: WeightVector, radius: float, seed: int,
                        real: bool = False) -> Field:
    """iid complex Gaussian coefficients on the weighted ball of ``radius``."""
    from .field import m_norm_grid

    rng = np.random.default_rng(seed)
    mask = m_norm_grid(w, shape) <= radius
    spec = np.zeros(shape, dtype=np.complex128)
    draws = rng.standard_normal(int(mask.sum())) + 1j * rng.standard_normal(int(mask.sum()))
    spec[mask] = draws
    if real:
        sym = np.zeros_like(spec)
        for idx in np.argwhere(mask):
            mirror = tuple((-i) % N for i, N in zip(idx, shape))
            sym[tuple(idx)] = spec[tuple(idx)] + np.conj(spec[mirror])
        spec = 0.5 * sym
    return Field.from_spectrum_array(spec, w)


def smooth_mix(shape, w: WeightVector, seed: int, band: float = 4.0,
               amplitude: float = 1.0) -> Field:
    """Real smooth field from a handful of low modes, reproducible."""
    u = random_band_limited(shape, w, band, seed, real=True)
    scale = np.max(np.abs(u.values))
    if scale == 0.0:
        return u
    return Field(u.values * (amplitude / scale), w)


_SAMPLES = {
    "square-wave": lambda shape, w: square_wave(shape, w, axis=0),
    "x1-cusp": lambda shape, w: cusp(shape, w, sigma=1.0, axis=0),
    "x2-cusp": lambda shape, w: cusp(shape, w, sigma=1.0, axis=1),
    "gaussian": lambda shape, w: gaussian_bump(shape, w),
    "parabola-wave": lambda shape, w: parabola_wave(shape, w),
}


def make_sample(name: str, shape, w: WeightVector) -> Field:
    """Shipped named samples used by the CLI and the test batteries."""
    try:
        maker = _SAMPLES[name]
    except KeyError:
        raise KeyError(f"unknown sample {name!r}; available: {sorted(_SAMPLES)}") from None
    return maker(tuple(shape), w)
