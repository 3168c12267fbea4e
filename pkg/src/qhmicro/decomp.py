"""Anisotropic dyadic (Littlewood-Paley) machinery.

The shell profiles are radial in the weighted norm: with a scalar cutoff
``phi`` equal to 1 on [0, 1/(2K)] and 0 on [K, inf), the shell h
multiplier at a frequency of weighted norm r is

    shell(-1) = phi(r),    shell(h) = phi(2**(-h-1) r) - phi(2**(-h) r).

Summing over h telescopes to ``phi(2**(-H-1) r)``, so storing the step
table once and differencing makes the partition of unity exact in
floating point on the whole grid.  Shell h is supported in the crown
``2**(h-1)/K <= r <= K 2**(h+1)``.

Block sup-norm sequences drive the regularity-index estimator: the decay
exponent of ``sup|u_h|`` against h is fitted by least squares over a
trusted shell range, with sentinel reporting when the data cannot
support an index (all shells empty, too few usable shells, or decay too
steep to resolve on the grid).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bump import smoothstep
from .field import Field, apply_multiplier, m_norm_grid, partial_derivative, sup_norm
from .weight import WeightVector

__all__ = [
    "CutoffProfile",
    "DyadicSystem",
    "BlockSequence",
    "BesovEstimate",
    "FitResult",
    "ZeroBlockError",
    "SupportError",
    "make_cutoff",
    "build_system",
    "dyadic_blocks",
    "block_sups",
    "bernstein_ratio",
    "block_derivative_equivalence",
    "derivative_equivalence_bounds",
    "fit_index",
    "besov_estimate",
    "synthesize_from_blocks",
    "meyer_apply",
    "compose_smooth",
    "multi_indices_exact",
    "multi_indices_up_to",
]

ZERO_SHELL_REL = 1e-13
INDEX_CAP = 6.0
CLIP_MARGIN = 0.85
CLIP_RATIO = 0.2


class ZeroBlockError(ValueError):
    """Requested a normalized statistic of an identically zero block."""


class SupportError(ValueError):
    """Spectral support constraint violated."""


@dataclass(frozen=True)
class CutoffProfile:
    """Scalar C-infinity cutoff: 1 on [0, 1/(2K)], 0 on [K, inf)."""

    K: float

    def __post_init__(self):
        if not self.K > 1.0:
            raise ValueError(f"cutoff parameter K must exceed 1, got {self.K}")

    @property
    def plateau_end(self) -> float:
        return 1.0 / (2.0 * self.K)

    def __call__(self, t) -> np.ndarray | float:
        a = self.plateau_end
        return smoothstep((np.asarray(t, dtype=float) - a) / (self.K - a))


def make_cutoff(K: float) -> CutoffProfile:
    return CutoffProfile(float(K))


def multi_indices_exact(w: WeightVector, k: float, tol: float = 1e-9) -> list[tuple[int, ...]]:
    """All multi-indices with anisotropic order exactly k, canonical order."""
    return [a for a in multi_indices_up_to(w, k, tol) if abs(w.alpha_order(a) - k) <= tol]


def multi_indices_up_to(w: WeightVector, order: float, tol: float = 1e-9) -> list[tuple[int, ...]]:
    """Downward-closed set {alpha : alpha.(1/M) <= order}, canonical order.

    Canonical order: graded by |alpha|, lexicographically descending
    within a grade, so in 2-D with weights (1, 2) and order 1 the list is
    (0,0), (1,0), (0,1), (0,2).
    """
    bounds = [int(math.floor(order * mj + tol)) for mj in w.m]
    found = []

    def rec(prefix, j):
        if j == w.n:
            if w.alpha_order(prefix) <= order + tol:
                found.append(tuple(prefix))
            return
        for a in range(bounds[j] + 1):
            rec(prefix + [a], j + 1)

    rec([], 0)
    found.sort(key=lambda a: (sum(a), tuple(-v for v in a)))
    return found


@dataclass(frozen=True)
class DyadicSystem:
    """Sampled shell multipliers for one (cutoff, weight, grid) triple.

    ``h_cover`` is the last shell needed to make the partition sum equal
    1 at every representable frequency; ``h_max`` is the last shell whose
    crown is considered trustworthy for regularity fitting (one below the
    grid-coverage shell).  Multipliers are stored for h = -1 .. h_cover.
    """

    profile: CutoffProfile
    weight: WeightVector
    shape: tuple[int, ...]
    h_max: int
    h_cover: int
    multipliers: tuple[np.ndarray, ...]
    norm_grid: np.ndarray

    @property
    def K(self) -> float:
        return self.profile.K

    @property
    def shells(self) -> range:
        return range(-1, self.h_cover + 1)

    @property
    def n_shells(self) -> int:
        return self.h_cover + 2

    def multiplier(self, h: int) -> np.ndarray:
        if not -1 <= h <= self.h_cover:
            raise ValueError(f"shell index {h} outside [-1, {self.h_cover}]")
        return self.multipliers[h + 1]

    def crown_bounds(self, h: int) -> tuple[float, float]:
        if h == -1:
            return 0.0, self.K
        return 2.0 ** (h - 1) / self.K, self.K * 2.0 ** (h + 1)

    def default_fit_range(self) -> tuple[int, int]:
        return (2, self.h_max - 1)

    def near_boundary_mask(self, margin: float = CLIP_MARGIN) -> np.ndarray:
        """Frequencies within the outer Nyquist margin of any axis."""
        from .field import freq_grids

        grids = freq_grids(self.shape)
        mask = np.zeros(self.shape, dtype=bool)
        for g, N in zip(grids, self.shape):
            mask |= np.abs(g) >= margin * (N // 2)
        return mask

    def crown_inside_box(self, h: int, margin: float = CLIP_MARGIN) -> bool:
        """True when shell h cannot reach the Nyquist margin on any axis."""
        _, hi = self.crown_bounds(h)
        return all(hi ** (1.0 / mj) <= margin * (N // 2)
                   for mj, N in zip(self.weight.m, self.shape))


_SYSTEM_CACHE: dict[tuple, DyadicSystem] = {}


def build_system(profile: CutoffProfile, w: WeightVector, shape: tuple[int, ...],
                 use_cache: bool = True) -> DyadicSystem:
    """Sample the shell multipliers of ``profile`` on a grid.

    Raises if the grid is too small to carry at least shells up to index
    2 below the coverage shell.
    """
    shape = tuple(int(N) for N in shape)
    key = (profile.K, w.m, shape)
    if use_cache and key in _SYSTEM_CACHE:
        return _SYSTEM_CACHE[key]

    r = m_norm_grid(w, shape)
    r_cover = float(np.max(r))
    K = profile.K
    h_max = int(math.floor(math.log2(r_cover / K))) - 1
    if h_max < 2:
        raise ValueError(
            f"grid {shape} too small for weight {w.m}: largest trusted shell is {h_max} < 2"
        )
    h_cover = int(math.ceil(math.log2(K * r_cover)))
    while 2.0 ** h_cover < K * r_cover:
        h_cover += 1

    # Step table s_h = phi(2**(-h) r); differencing adjacent rows keeps
    # the partition sum a single telescoped cutoff value, exact in fp.
    steps = [np.asarray(profile(r * 2.0 ** (-h)), dtype=float) for h in range(0, h_cover + 2)]
    mults = [np.asarray(profile(r), dtype=float)]
    for h in range(0, h_cover + 1):
        mults.append(steps[h + 1] - steps[h])
    for m in mults:
        m.setflags(write=False)
    r.setflags(write=False)

    sys = DyadicSystem(profile, w, shape, h_max, h_cover, tuple(mults), r)
    if use_cache:
        _SYSTEM_CACHE[key] = sys
    return sys


@dataclass(frozen=True)
class BlockSequence:
    """Shell-filtered copies of one field, index i holding shell h = i - 1."""

    blocks: tuple[Field, ...]
    system: DyadicSystem
    provenance: dict

    @property
    def shells(self) -> range:
        return self.system.shells

    def block(self, h: int) -> Field:
        return self.blocks[h + 1]

    def sups(self) -> np.ndarray:
        return np.array([sup_norm(b) for b in self.blocks])


def dyadic_blocks(u: Field, sys: DyadicSystem) -> BlockSequence:
    if u.shape != sys.shape:
        raise ValueError(f"field grid {u.shape} != system grid {sys.shape}")
    if u.weight != sys.weight:
        raise ValueError(f"field weight {u.weight.m} != system weight {sys.weight.m}")
    spec = u.spectrum
    blocks = tuple(Field.from_spectrum_array(spec * sys.multiplier(h), u.weight)
                   for h in sys.shells)
    prov = {
        "source_crc32": _field_tag(u),
        "K": sys.K,
        "weight": list(sys.weight.m),
        "shape": list(sys.shape),
    }
    return BlockSequence(blocks, sys, prov)


def _field_tag(u: Field) -> str:
    import zlib

    return format(zlib.crc32(np.ascontiguousarray(u.values).tobytes()) & 0xFFFFFFFF, "08x")


def block_sups(u: Field, sys: DyadicSystem) -> np.ndarray:
    """Shell sup norms without keeping the block fields."""
    spec = u.spectrum
    out = np.empty(sys.n_shells)
    for h in sys.shells:
        out[h + 1] = np.max(np.abs(np.fft.ifftn(spec * sys.multiplier(h)))) * u.size
    return out


def bernstein_ratio(u: Field, alpha, R: float, support_tol: float = 1e-9) -> float:
    """``sup|d^alpha u| / (R**(alpha.(1/M)) sup|u|)`` for ball-supported u.

    The spectrum of ``u`` must vanish (relatively to its peak) outside
    the weighted ball of radius R.
    """
    w = u.weight
    r = m_norm_grid(w, u.shape)
    spec = np.abs(u.spectrum)
    peak = float(spec.max())
    if peak == 0.0:
        raise ZeroBlockError("zero field")
    outside = float(spec[r > R].max(initial=0.0))
    if outside > support_tol * peak:
        raise SupportError(f"spectrum leaks outside the radius-{R} ball: {outside / peak:.2e}")
    du = partial_derivative(u, alpha)
    return sup_norm(du) / (R ** w.alpha_order(alpha) * sup_norm(u))


def block_derivative_equivalence(bs: BlockSequence, h: int, k: int) -> float:
    """Ratio ``sum_{alpha.(1/M)=k} sup|d^alpha u_h| / (2**(hk) sup|u_h|)``."""
    w = bs.system.weight
    alphas = multi_indices_exact(w, float(k))
    alphas = [a for a in alphas if sum(a) > 0 or k == 0]
    if not alphas:
        raise ValueError(f"no multi-index has anisotropic order {k} for weight {w.m}")
    u_h = bs.block(h)
    denom = sup_norm(u_h)
    if denom == 0.0:
        raise ZeroBlockError(f"zero block at shell {h}")
    total = sum(sup_norm(partial_derivative(u_h, a)) for a in alphas)
    return total / (2.0 ** (h * k) * denom)


def derivative_equivalence_bounds(bs: BlockSequence, k: int, h_range) -> tuple[float, float]:
    """(min, max) of the shell derivative ratios over ``h_range``."""
    ratios = [block_derivative_equivalence(bs, h, k) for h in h_range]
    return min(ratios), max(ratios)


@dataclass(frozen=True)
class FitResult:
    index: float
    quality: float
    h_used: tuple[int, ...]
    sentinel_reason: str | None
    raw_slope_index: float | None = None

    @property
    def resolvable(self) -> bool:
        return self.sentinel_reason is None


def fit_index(sups: np.ndarray, fit_range: tuple[int, int], *,
              zero_rel: float = ZERO_SHELL_REL, cap: float = INDEX_CAP,
              clip_from: int | None = None) -> FitResult:
    """Least-squares decay exponent of ``log2(sups)`` against shell index.

    ``sups[i]`` holds shell h = i - 1.  Empty shells at the edges of the
    requested range are trimmed (the grid simply carries no content
    there), and shells from ``clip_from`` on are dropped as
    Nyquist-contaminated.  Two or more consecutive empty shells in the
    interior, fewer than three usable shells, or a fitted index at or
    beyond ``cap`` all yield a sentinel ("beyond resolvable scale")
    instead of a number.
    """
    sups = np.asarray(sups, dtype=float)
    scale = float(sups.max(initial=0.0))
    if scale == 0.0:
        return FitResult(math.inf, math.nan, (), "all shells empty")
    lo, hi = fit_range
    lo = max(lo, -1)
    hi = min(hi, len(sups) - 2)
    if clip_from is not None:
        hi = min(hi, clip_from - 1)
    if hi < lo:
        return FitResult(math.inf, math.nan, (), "empty fit range")
    h = np.arange(lo, hi + 1)
    y = sups[lo + 1: hi + 2]
    nz = y > zero_rel * scale
    if not nz.any():
        return FitResult(math.inf, math.nan, (), "all shells in range empty")
    first, last = np.argmax(nz), len(nz) - 1 - np.argmax(nz[::-1])
    h, y, nz = h[first:last + 1], y[first:last + 1], nz[first:last + 1]
    interior_gaps = np.flatnonzero(~nz)
    if interior_gaps.size and np.any(np.diff(interior_gaps) == 1):
        return FitResult(math.inf, math.nan, (), "consecutive empty shells in range")
    h, y = h[nz], y[nz]
    if len(h) < 3:
        return FitResult(math.inf, math.nan, tuple(int(v) for v in h),
                         "fewer than 3 usable shells")
    logs = np.log2(y)
    A = np.vstack([h, np.ones_like(h)]).T.astype(float)
    coef, *_ = np.linalg.lstsq(A, logs, rcond=None)
    slope = float(coef[0])
    resid = logs - A @ coef
    quality = float(np.sqrt(np.mean(resid ** 2)))
    idx = -slope
    used = tuple(int(v) for v in h)
    # Smooth fields produce steeply convex log-block curves rather than
    # lines; catch them by local 2-shell slopes and by curved steep fits.
    span2 = (logs[:-2] - logs[2:]) / (h[2:] - h[:-2]) if len(h) >= 3 else np.array([])
    if idx >= cap:
        return FitResult(math.inf, quality, used,
                         "index beyond resolvable scale", raw_slope_index=idx)
    if span2.size and float(span2.max()) >= cap - 1.0:
        return FitResult(math.inf, quality, used,
                         "decay too steep to resolve", raw_slope_index=idx)
    if quality >= 1.0 and idx >= 2.0:
        return FitResult(math.inf, quality, used,
                         "decay curvature beyond resolvable scale", raw_slope_index=idx)
    return FitResult(idx, quality, used, None, raw_slope_index=idx)


@dataclass(frozen=True)
class BesovEstimate:
    """Block sup sequence with the fitted regularity index.

    ``index`` is ``math.inf`` when the estimator reports the sentinel;
    ``sentinel_reason`` then says why.  ``norm_at`` evaluates the exact
    sup-type norm ``sup_h 2**(s h) sup|u_h|`` over every stored shell.
    """

    sups: np.ndarray
    index: float
    fit_range: tuple[int, int]
    fit_quality: float
    h_used: tuple[int, ...]
    sentinel_reason: str | None
    weight: WeightVector
    K: float

    @property
    def resolvable(self) -> bool:
        return self.sentinel_reason is None

    def norm_at(self, s: float) -> float:
        h = np.arange(len(self.sups)) - 1
        return float(np.max(2.0 ** (s * h) * self.sups))

    def to_json(self) -> dict:
        return {
            "sups": [float(v) for v in self.sups],
            "index": None if not self.resolvable else float(self.index),
            "sentinel": not self.resolvable,
            "sentinel_reason": self.sentinel_reason,
            "fit_range": list(self.fit_range),
            "fit_quality": None if math.isnan(self.fit_quality) else float(self.fit_quality),
            "shells_used": list(self.h_used),
            "weight": self.weight.to_json(),
            "K": self.K,
        }


def first_clipped_shell(bs: BlockSequence, *, margin: float = CLIP_MARGIN,
                        ratio: float = CLIP_RATIO) -> int | None:
    """Smallest shell whose block content leans on the Nyquist boundary.

    A shell whose crown stays inside the margin box is never clipped.
    Otherwise the block spectrum is compared between the outer margin
    and its overall peak; a ratio above ``ratio`` marks the shell (and
    implicitly everything above it) as truncation-contaminated.
    """
    sys = bs.system
    boundary = sys.near_boundary_mask(margin)
    for h in range(0, sys.h_cover + 1):
        if sys.crown_inside_box(h, margin):
            continue
        spec = np.abs(bs.block(h).spectrum)
        peak = float(spec.max())
        if peak == 0.0:
            continue
        near = float(spec[boundary].max(initial=0.0))
        if near >= ratio * peak:
            return h
    return None


def besov_estimate(bs: BlockSequence, fit_range: tuple[int, int] | None = None) -> BesovEstimate:
    sys = bs.system
    if fit_range is None:
        fit_range = sys.default_fit_range()
    lo, hi = fit_range
    if hi - lo + 1 < 3:
        raise ValueError(f"fit range {fit_range} spans fewer than 3 shells")
    sups = bs.sups()
    fit = fit_index(sups, (lo, hi), clip_from=first_clipped_shell(bs))
    return BesovEstimate(sups, fit.index, (lo, hi), fit.quality, fit.h_used,
                         fit.sentinel_reason, sys.weight, sys.K)


def estimate_field(u: Field, sys: DyadicSystem,
                   fit_range: tuple[int, int] | None = None) -> BesovEstimate:
    """Convenience: blocks + index estimate in one call."""
    return besov_estimate(dyadic_blocks(u, sys), fit_range)


def synthesize_from_blocks(blocks, r: float, sys: DyadicSystem,
                           support_tol: float = 1e-12):
    """Sum shell-supported blocks and certify the resulting norm.

    ``blocks[i]`` holds shell h = i - 1 (None for missing shells).  Each
    block must be spectrally supported in its crown; blocks supported
    only in the shell ball ``|xi| <= K 2**(h+1)`` are accepted when
    r > 0.  Returns ``(field, certificate)`` where the certificate
    compares ``norm_at(r)`` of the sum against the calibrated multiple
    of ``sup_h 2**(r h) sup|block_h|``.
    """
    from .calibration import SYNTHESIS_NORM_CONSTANT

    w = sys.weight
    spec_sum = np.zeros(sys.shape, dtype=np.complex128)
    bound = 0.0
    ball_only = False
    for i, b in enumerate(blocks):
        if b is None:
            continue
        h = i - 1
        if h > sys.h_cover:
            raise ValueError(f"shell {h} beyond system coverage {sys.h_cover}")
        spec = b.spectrum
        peak = float(np.abs(spec).max())
        if peak == 0.0:
            continue
        lo_r, hi_r = sys.crown_bounds(h)
        out_ball = np.abs(spec)[sys.norm_grid > hi_r].max(initial=0.0)
        if out_ball > support_tol * peak:
            raise SupportError(f"block at shell {h} leaks outside its ball")
        if h >= 0:
            out_crown = np.abs(spec)[sys.norm_grid < lo_r].max(initial=0.0)
            if out_crown > support_tol * peak:
                ball_only = True
        bound = max(bound, 2.0 ** (r * h) * sup_norm(b))
        spec_sum += spec
    if ball_only and r <= 0.0:
        raise SupportError("r > 0 required for ball-supported blocks")
    u = Field.from_spectrum_array(spec_sum, w)
    est = estimate_field(u, sys)
    constant = SYNTHESIS_NORM_CONSTANT
    lhs = est.norm_at(r)
    cert = {
        "r": float(r),
        "norm_at_r": lhs,
        "block_bound": bound,
        "constant": constant,
        "ok": bool(lhs <= constant * bound),
        "ball_supported": ball_only,
    }
    return u, cert


def meyer_apply(mult, u: Field, sys: DyadicSystem) -> Field:
    """Apply ``sum_h m_h(x) * u_h(x)`` for one multiplier per shell.

    ``mult`` entries may be Fields, arrays or scalars; the count must
    match the number of shells in the system.
    """
    if len(mult) != sys.n_shells:
        raise ValueError(f"need {sys.n_shells} shell multipliers, got {len(mult)}")
    bs = dyadic_blocks(u, sys)
    acc = np.zeros(sys.shape, dtype=np.complex128)
    for i, m in enumerate(mult):
        vals = m.values if isinstance(m, Field) else m
        acc += np.asarray(vals) * bs.blocks[i].values
    return Field(acc, u.weight)


def compose_smooth(F, u: Field, subtract_constant: bool = False) -> Field:
    """Pointwise composition ``F(u)`` on the samples.

    With ``subtract_constant`` the value F(0) is removed, reducing maps
    with F(0) != 0 to the normalized case.
    """
    vals = np.asarray(F(u.values), dtype=np.complex128)
    if subtract_constant:
        f0 = np.asarray(F(np.zeros(1, dtype=np.complex128)), dtype=np.complex128)
        vals = vals - f0.reshape(-1)[0]
    return Field(vals, u.weight)
