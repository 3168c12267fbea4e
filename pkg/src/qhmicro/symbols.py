"""Symbols a(x, xi), their quantization and class diagnostics.

A symbol is a tree of nodes: bracket powers ``<xi>**s``, differential
polynomials ``sum_alpha c_alpha(x) xi**alpha`` with constant or
grid-field coefficients, sums, products, dense sample tensors
(``GridSymbol``), and shell-smoothed symbols produced by the sharp/flat
split.  Every node except ``GridSymbol`` normalizes into a list of
separable terms ``c(x) * xi**alpha * <xi>**p [* shell(h)]``, which is
what makes quantization a handful of FFTs and keeps derivative and
ellipticity sampling analytic.

Quantization follows the coefficient-left convention: a term
``c(x) xi**alpha`` acts as ``c(x) * (D**alpha u)(x)``, and pure
frequency symbols act exactly as spectral multipliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache

import numpy as np

from .decomp import DyadicSystem, dyadic_blocks, besov_estimate, estimate_field
from .field import (Field, apply_multiplier, freq_grids, grid_points,
                    m_bracket_grid, m_norm_grid, sup_norm)
from .weight import ConicSector, WeightVector, m_bracket, sector_contains, sphere_project

__all__ = [
    "WeightPower",
    "DiffPoly",
    "SymbolSum",
    "SymbolProduct",
    "GridSymbol",
    "ShellSymbol",
    "XiFactor",
    "EllipticityReport",
    "EllipticityError",
    "SpatialWindow",
    "symbol_eval",
    "quasi_order",
    "quantize",
    "to_grid_symbol",
    "seminorm_estimate",
    "coefficient_besov",
    "split_sharp_natural",
    "split_lowpass_gain",
    "elliptic_min",
    "char_directions",
    "sphere_directions",
    "boundedness_probe",
    "symbol_to_json",
    "symbol_from_json",
]

DIRECT_GRID_LIMIT = 64 * 64


class EllipticityError(ValueError):
    """Symbol fails the requested lower bound on a probe region."""


# ---------------------------------------------------------------------------
# Symbol nodes


@dataclass(frozen=True)
class XiFactor:
    """Frequency factor ``xi**alpha * <xi>**power``; closed under products."""

    alpha: tuple[int, ...]
    power: float = 0.0

    def __mul__(self, other: "XiFactor") -> "XiFactor":
        a = tuple(i + j for i, j in zip(self.alpha, other.alpha))
        return XiFactor(a, self.power + other.power)

    def order(self, w: WeightVector) -> float:
        return w.alpha_order(self.alpha) + self.power

    def sample(self, w: WeightVector, shape) -> np.ndarray:
        out = np.ones(shape, dtype=float)
        grids = freq_grids(shape)
        for g, a in zip(grids, self.alpha):
            if a:
                out = out * g ** int(a)
        if self.power:
            out = out * m_bracket_grid(w, shape) ** self.power
        return out

    def eval_at(self, w: WeightVector, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        out = np.ones(xi.shape[:-1], dtype=float)
        for j, a in enumerate(self.alpha):
            if a:
                out = out * xi[..., j] ** int(a)
        if self.power:
            out = out * np.asarray(m_bracket(w, xi)) ** self.power
        return out


@dataclass(frozen=True)
class WeightPower:
    """Pure weight symbol ``<xi>**order`` for the attached weight vector."""

    weight: WeightVector
    order: float


@dataclass(frozen=True)
class DiffPoly:
    """``sum_alpha c_alpha(x) xi**alpha`` with constant or Field coefficients."""

    weight: WeightVector
    terms: tuple[tuple[object, tuple[int, ...]], ...]
    declared_delta: float = 0.0

    def __post_init__(self):
        norm = []
        for coeff, alpha in self.terms:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.weight.n:
                raise ValueError(f"multi-index {alpha} has wrong length for n={self.weight.n}")
            if isinstance(coeff, Field):
                if coeff.weight != self.weight:
                    raise ValueError("coefficient field weight differs from symbol weight")
            else:
                coeff = complex(coeff)
            norm.append((coeff, alpha))
        object.__setattr__(self, "terms", tuple(norm))

    @property
    def field_terms(self):
        return [(c, a) for c, a in self.terms if isinstance(c, Field)]


@dataclass(frozen=True)
class SymbolSum:
    parts: tuple


@dataclass(frozen=True)
class SymbolProduct:
    parts: tuple


@dataclass(frozen=True)
class GridSymbol:
    """Dense samples a(x_k, xi_l) on the product grid, FFT frequency layout."""

    weight: WeightVector
    samples: np.ndarray
    declared_order: float = 0.0
    declared_delta: float = 0.0

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if s.ndim != 2 * self.weight.n:
            raise ValueError(
                f"grid symbol needs {2 * self.weight.n} axes (x then xi), got {s.ndim}"
            )
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def x_shape(self):
        return self.samples.shape[: self.weight.n]

    @property
    def xi_shape(self):
        return self.samples.shape[self.weight.n:]


@dataclass(frozen=True)
class ShellSymbol:
    """Shell-resolved separable symbol ``sum_t sum_h c_th(x) q_t(xi) shell_h(xi)``.

    Produced by the sharp/flat coefficient smoothing; ``coeffs_per_shell``
    holds one constant or complex array per shell (index h + 1).
    """

    system: DyadicSystem
    terms: tuple[tuple[tuple, XiFactor], ...]
    declared_order: float = 0.0
    declared_delta: float = 0.0

    @property
    def weight(self) -> WeightVector:
        return self.system.weight


# ---------------------------------------------------------------------------
# Separable-term normalization


class NotSeparable(ValueError):
    pass


def _coeff_values(coeff, shape):
    if coeff is None or isinstance(coeff, complex):
        return coeff
    if isinstance(coeff, Field):
        if coeff.shape != tuple(shape):
            raise ValueError(f"coefficient grid {coeff.shape} != target grid {tuple(shape)}")
        return coeff.values
    return np.asarray(coeff, dtype=np.complex128)


def separable_terms(spec, shape) -> list[tuple[object, XiFactor, int | None]]:
    """Flatten into ``(coeff, xi_factor, shell)`` triples.

    ``coeff`` is None (constant 1), a complex scalar, or a value array on
    ``shape``; ``shell`` is None except for shell-resolved symbols.
    Raises :class:`NotSeparable` for dense grid symbols.
    """
    if isinstance(spec, WeightPower):
        return [(None, XiFactor((0,) * spec.weight.n, spec.order), None)]
    if isinstance(spec, DiffPoly):
        out = []
        for coeff, alpha in spec.terms:
            c = _coeff_values(coeff, shape)
            if isinstance(c, complex) and c == 1.0:
                c = None
            out.append((c, XiFactor(alpha), None))
        return out
    if isinstance(spec, SymbolSum):
        out = []
        for p in spec.parts:
            out.extend(separable_terms(p, shape))
        return out
    if isinstance(spec, SymbolProduct):
        lists = [separable_terms(p, shape) for p in spec.parts]
        out = lists[0]
        for other in lists[1:]:
            combined = []
            for c1, q1, s1 in out:
                for c2, q2, s2 in other:
                    if s1 is not None and s2 is not None:
                        raise NotSeparable("product of two shell-resolved symbols")
                    c = _mul_coeff(c1, c2)
                    combined.append((c, q1 * q2, s1 if s1 is not None else s2))
            out = combined
        return out
    if isinstance(spec, ShellSymbol):
        out = []
        for coeffs, q in spec.terms:
            if isinstance(coeffs, complex):
                # Shell-independent constant: the shell profiles sum to 1.
                out.append((None if coeffs == 1.0 else coeffs, q, None))
                continue
            for i, c in enumerate(coeffs):
                if c is None or (isinstance(c, complex) and c == 0.0):
                    continue
                cc = _coeff_values(c, shape) if not isinstance(c, complex) else c
                out.append((cc, q, i - 1))
        return out
    raise NotSeparable(f"symbol node {type(spec).__name__} has no separable form")


def _mul_coeff(c1, c2):
    if c1 is None:
        return c2
    if c2 is None:
        return c1
    return c1 * c2


# ---------------------------------------------------------------------------
# Evaluation


def _x_indices(x, shape, tol=1e-9):
    x = np.asarray(x, dtype=float)
    idx = []
    for j, N in enumerate(shape):
        step = 2.0 * np.pi / N
        k = np.rint(x[..., j] / step)
        if np.any(np.abs(x[..., j] - k * step) > tol):
            raise ValueError("evaluation points must lie on the sample grid")
        idx.append((k.astype(int)) % N)
    return tuple(idx)


def symbol_eval(spec, x, xi) -> np.ndarray:
    """Evaluate a(x, xi); ``x`` must be on-grid when field coefficients occur.

    ``x`` and ``xi`` are coordinate arrays with the component axis last,
    broadcast against each other.
    """
    if isinstance(spec, GridSymbol):
        xid = _x_indices(x, spec.x_shape)
        xi = np.asarray(xi)
        fidx = []
        for j, N in enumerate(spec.xi_shape):
            k = np.rint(xi[..., j]).astype(int)
            if np.any(np.abs(xi[..., j] - k) > 1e-9):
                raise ValueError("grid symbols evaluate at integer frequencies only")
            fidx.append(k % N)
        return spec.samples[tuple(np.broadcast_arrays(*xid, *fidx))]
    w = _spec_weight(spec)
    xi = np.asarray(xi, dtype=float)
    shape = _spec_shape_hint(spec)
    acc = None
    for coeff, q, shell in separable_terms(spec, shape):
        qv = q.eval_at(w, xi).astype(np.complex128)
        if shell is not None:
            qv = qv * _shell_profile_at(spec.system, shell, xi)
        if coeff is None:
            term = qv
        elif isinstance(coeff, complex):
            term = coeff * qv
        else:
            xid = _x_indices(x, coeff.shape)
            term = coeff[xid] * qv
        acc = term if acc is None else acc + term
    return acc


def _shell_profile_at(sys: DyadicSystem, h: int, xi: np.ndarray) -> np.ndarray:
    from .weight import m_norm

    r = np.asarray(m_norm(sys.weight, xi))
    prof = sys.profile
    if h == -1:
        return np.asarray(prof(r))
    return np.asarray(prof(r * 2.0 ** (-h - 1))) - np.asarray(prof(r * 2.0 ** (-h)))


def _spec_weight(spec) -> WeightVector:
    if isinstance(spec, (WeightPower, DiffPoly, GridSymbol)):
        return spec.weight
    if isinstance(spec, ShellSymbol):
        return spec.system.weight
    if isinstance(spec, (SymbolSum, SymbolProduct)):
        return _spec_weight(spec.parts[0])
    raise TypeError(f"not a symbol node: {type(spec).__name__}")


def _spec_shape_hint(spec) -> tuple[int, ...] | None:
    """Grid shape implied by field coefficients, if any."""
    if isinstance(spec, DiffPoly):
        for c, _ in spec.terms:
            if isinstance(c, Field):
                return c.shape
        return None
    if isinstance(spec, (SymbolSum, SymbolProduct)):
        for p in spec.parts:
            s = _spec_shape_hint(p)
            if s is not None:
                return s
        return None
    if isinstance(spec, ShellSymbol):
        return spec.system.shape
    if isinstance(spec, GridSymbol):
        return spec.x_shape
    return None


def quasi_order(spec) -> float:
    """Anisotropic order: polynomials by max term order, products add."""
    if isinstance(spec, WeightPower):
        return float(spec.order)
    if isinstance(spec, DiffPoly):
        orders = [spec.weight.alpha_order(a) for c, a in spec.terms
                  if isinstance(c, Field) or c != 0.0]
        if not orders:
            raise ValueError("empty differential polynomial has no order")
        return max(orders)
    if isinstance(spec, SymbolSum):
        return max(quasi_order(p) for p in spec.parts)
    if isinstance(spec, SymbolProduct):
        return sum(quasi_order(p) for p in spec.parts)
    if isinstance(spec, (GridSymbol, ShellSymbol)):
        return float(spec.declared_order)
    raise TypeError(f"not a symbol node: {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Quantization


def quantize(spec, u: Field, allow_large_direct: bool = False) -> Field:
    """Apply the operator with symbol ``spec`` to ``u``.

    Separable symbols run as coefficient-weighted spectral multipliers,
    exact on pure modes.  Dense grid symbols use the direct double sum,
    cost-guarded to grids of at most 64x64 unless overridden.
    """
    if isinstance(spec, GridSymbol):
        return _quantize_direct(spec, u, allow_large_direct)
    w = _spec_weight(spec)
    if w != u.weight:
        raise ValueError("symbol and field weight vectors differ")
    hint = _spec_shape_hint(spec)
    if hint is not None and tuple(hint) != u.shape:
        raise ValueError(f"symbol grid {hint} != field grid {u.shape}")
    spec_u = u.spectrum
    out = np.zeros(u.shape, dtype=np.complex128)
    for coeff, q, shell in separable_terms(spec, u.shape):
        mult = q.sample(w, u.shape)
        if shell is not None:
            mult = mult * _shell_multiplier(spec, shell)
        part = np.fft.ifftn(mult * spec_u) * u.size
        if coeff is None:
            out += part
        elif isinstance(coeff, complex):
            out += coeff * part
        else:
            out += coeff * part
    return Field(out, u.weight)


def _shell_multiplier(spec: ShellSymbol, h: int) -> np.ndarray:
    return spec.system.multiplier(h)


def _quantize_direct(spec: GridSymbol, u: Field, allow_large: bool) -> Field:
    if spec.x_shape != u.shape or spec.xi_shape != u.shape:
        raise ValueError("grid symbol shape does not match the field grid")
    if u.size > DIRECT_GRID_LIMIT and not allow_large:
        raise ValueError(
            f"direct quantization on {u.shape} exceeds the cost guard; "
            "pass allow_large_direct=True to override"
        )
    n = u.weight.n
    spec_u = u.spectrum
    grids = freq_grids(u.shape)
    pts = grid_points(u.shape)
    phases = []
    for j in range(n):
        xj = pts[j].reshape(-1)
        kj = grids[j].reshape(-1)
        phases.append(np.exp(1j * np.outer(xj, kj)))
    if n == 1:
        out = np.einsum("ab,ab,b->a", spec.samples, phases[0], spec_u)
    elif n == 2:
        out = np.einsum("xycd,xc,yd,cd->xy", spec.samples, phases[0], phases[1], spec_u,
                        optimize=True)
    else:
        raise NotImplementedError("direct quantization implemented for n <= 2")
    return Field(out, u.weight)


def to_grid_symbol(spec, shape, declared_order: float | None = None,
                   declared_delta: float = 0.0) -> GridSymbol:
    """Sample a separable symbol into a dense tensor (small grids only)."""
    w = _spec_weight(spec)
    n = w.n
    shape = tuple(shape)
    samples = np.zeros(shape + shape, dtype=np.complex128)
    grids = freq_grids(shape)
    xi = np.stack(np.broadcast_arrays(*grids), axis=-1)
    for coeff, q, shell in separable_terms(spec, shape):
        qv = q.eval_at(w, xi).astype(np.complex128)
        if shell is not None:
            qv = qv * _shell_multiplier(spec, shell)
        if coeff is None:
            cv = np.ones(shape, dtype=np.complex128)
        elif isinstance(coeff, complex):
            cv = np.full(shape, coeff, dtype=np.complex128)
        else:
            cv = coeff
        samples += cv.reshape(shape + (1,) * n) * qv.reshape((1,) * n + shape)
    m = quasi_order(spec) if declared_order is None else declared_order
    return GridSymbol(w, samples, m, declared_delta)


# ---------------------------------------------------------------------------
# Sharp/flat coefficient smoothing


def split_lowpass_gain(sys: DyadicSystem, h: int, delta: float,
                       eta_norm: np.ndarray | float) -> np.ndarray | float:
    """Low-pass gain applied to x-frequencies eta at shell h.

    The gain is 1 where the scaled bracket ``<2**(-h delta / M) eta>``
    stays at 1 (notably eta = 0, so constants pass untouched) and 0 once
    it exceeds 2.
    """
    from .bump import smoothstep

    r2 = np.asarray(eta_norm, dtype=float) ** 2
    t = np.sqrt(1.0 + 4.0 ** (-h * delta) * r2)
    return smoothstep(t - 1.0)


def _smooth_coefficient(values: np.ndarray, sys: DyadicSystem, h: int,
                        delta: float) -> np.ndarray:
    spec = np.fft.fftn(values) / values.size
    gain = split_lowpass_gain(sys, h, delta, sys.norm_grid)
    return np.fft.ifftn(spec * gain) * values.size


def split_sharp_natural(spec, delta: float, sys: DyadicSystem):
    """Split ``a = sharp + flat`` by shellwise coefficient low-passing.

    The sharp part carries, on shell h, the x-dependence low-passed at
    scale ``2**(h delta)``; the flat remainder is the exact pointwise
    complement, so the two add back to ``a`` identically.  Separable
    symbols return shell-resolved symbols; dense grid symbols return
    dense grid symbols.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"smoothing exponent delta must lie in (0, 1], got {delta}")
    if isinstance(spec, GridSymbol):
        return _split_grid(spec, delta, sys)
    if isinstance(spec, ShellSymbol):
        raise ValueError("cannot split an already shell-resolved symbol")
    m = quasi_order(spec)
    sharp_terms = []
    nat_terms = []
    for coeff, q, shell in separable_terms(spec, sys.shape):
        if shell is not None:
            raise ValueError("cannot split an already shell-resolved symbol")
        if coeff is None or isinstance(coeff, complex):
            sharp_terms.append((coeff if coeff is not None else complex(1.0), q))
            continue
        sharp_coeffs = []
        nat_coeffs = []
        for h in sys.shells:
            sm = _smooth_coefficient(coeff, sys, h, delta)
            sharp_coeffs.append(sm)
            nat_coeffs.append(coeff - sm)
        sharp_terms.append((tuple(sharp_coeffs), q))
        nat_terms.append((tuple(nat_coeffs), q))
    sharp = ShellSymbol(sys, tuple(sharp_terms), declared_order=m, declared_delta=delta)
    natural = ShellSymbol(sys, tuple(nat_terms), declared_order=m, declared_delta=delta)
    return sharp, natural


def _split_grid(spec: GridSymbol, delta: float, sys: DyadicSystem):
    nx = spec.weight.n
    if spec.xi_shape != sys.shape or spec.x_shape != sys.shape:
        raise ValueError("grid symbol and dyadic system grids differ")
    x_axes = tuple(range(nx))
    size_x = int(np.prod(spec.x_shape))
    ahat = np.fft.fftn(spec.samples, axes=x_axes) / size_x
    sharp = np.zeros_like(spec.samples)
    xi_ones = (1,) * nx
    for h in sys.shells:
        gain = np.asarray(split_lowpass_gain(sys, h, delta, sys.norm_grid))
        gain = gain.reshape(spec.x_shape + xi_ones)
        low = np.fft.ifftn(ahat * gain, axes=x_axes) * size_x
        sharp += low * sys.multiplier(h).reshape(xi_ones + sys.shape)
    natural = spec.samples - sharp
    return (GridSymbol(spec.weight, sharp, spec.declared_order, delta),
            GridSymbol(spec.weight, natural, spec.declared_order, delta))


# ---------------------------------------------------------------------------
# Derivatives and seminorm diagnostics


@lru_cache(maxsize=256)
def _xifactor_derivative_fn(w_m: tuple[int, ...], alpha: tuple[int, ...],
                            power: float, d_alpha: tuple[int, ...]):
    """Exact lambdified ``d^d_alpha_xi [xi**alpha <xi>**power]``."""
    import sympy as sp

    xs = sp.symbols(f"k0:{len(w_m)}", real=True)
    expr = sp.Integer(1)
    for x, a in zip(xs, alpha):
        if a:
            expr *= x ** int(a)
    if power:
        expr *= (1 + sum(x ** (2 * int(m)) for x, m in zip(xs, w_m))) ** (sp.Float(power) / 2)
    for x, d in zip(xs, d_alpha):
        for _ in range(int(d)):
            expr = sp.diff(expr, x)
    return sp.lambdify(xs, expr, "numpy")


def _xifactor_derivative(w: WeightVector, q: XiFactor, d_alpha, xi_pts: np.ndarray) -> np.ndarray:
    fn = _xifactor_derivative_fn(w.m, q.alpha, float(q.power), tuple(int(d) for d in d_alpha))
    cols = [xi_pts[..., j] for j in range(w.n)]
    out = fn(*cols)
    return np.broadcast_to(np.asarray(out, dtype=np.complex128), xi_pts.shape[:-1]).copy()


def _multi_range(beta):
    """All multi-indices b with b <= beta componentwise."""
    if not beta:
        return [()]
    rest = _multi_range(beta[1:])
    return [(i,) + r for i in range(beta[0] + 1) for r in rest]


def _binom_multi(a, b) -> float:
    return float(np.prod([math.comb(int(ai), int(bi)) for ai, bi in zip(a, b)]))


def derivative_evaluator(spec, d_xi, d_x):
    """Callable ``(x_pts, xi_pts) -> d^d_xi_xi d^d_x_x a`` at paired points.

    Analytic for bracket powers and polynomials (coefficients
    differentiated spectrally), Leibniz over sums and products, central
    differences for dense grid symbols (step one grid cell in x, one
    frequency unit in xi) and for the shell profiles of shell-resolved
    symbols.
    """
    d_xi = tuple(int(v) for v in d_xi)
    d_x = tuple(int(v) for v in d_x)
    if isinstance(spec, WeightPower):
        w = spec.weight
        if any(d_x):
            return lambda x, xi: np.zeros(np.asarray(xi).shape[:-1], dtype=np.complex128)
        q = XiFactor((0,) * w.n, spec.order)
        return lambda x, xi: _xifactor_derivative(w, q, d_xi, np.asarray(xi, dtype=float))
    if isinstance(spec, DiffPoly):
        w = spec.weight
        prepared = []
        for coeff, alpha in spec.terms:
            if isinstance(coeff, Field):
                from .field import partial_derivative

                cval = partial_derivative(coeff, d_x).values if any(d_x) else coeff.values
            else:
                if any(d_x):
                    continue
                cval = coeff
            prepared.append((cval, XiFactor(alpha)))

        def ev(x, xi, prepared=prepared, w=w):
            xi = np.asarray(xi, dtype=float)
            out = np.zeros(xi.shape[:-1], dtype=np.complex128)
            for cval, q in prepared:
                term = _xifactor_derivative(w, q, d_xi, xi)
                if isinstance(cval, np.ndarray):
                    idx = _x_indices(np.asarray(x), cval.shape)
                    term = cval[idx] * term
                else:
                    term = cval * term
                out += term
            return out

        return ev
    if isinstance(spec, SymbolSum):
        evs = [derivative_evaluator(p, d_xi, d_x) for p in spec.parts]
        return lambda x, xi: sum(e(x, xi) for e in evs)
    if isinstance(spec, SymbolProduct):
        if len(spec.parts) > 2:
            head, rest = spec.parts[0], SymbolProduct(spec.parts[1:])
        else:
            head, rest = spec.parts
        pieces = []
        for ba in _multi_range(d_xi):
            for bb in _multi_range(d_x):
                ca = tuple(t - s for t, s in zip(d_xi, ba))
                cb = tuple(t - s for t, s in zip(d_x, bb))
                coef = _binom_multi(d_xi, ba) * _binom_multi(d_x, bb)
                pieces.append((coef,
                               derivative_evaluator(head, ba, bb),
                               derivative_evaluator(rest, ca, cb)))
        return lambda x, xi: sum(c * e1(x, xi) * e2(x, xi) for c, e1, e2 in pieces)
    if isinstance(spec, ShellSymbol):
        return _shell_derivative_evaluator(spec, d_xi, d_x)
    if isinstance(spec, GridSymbol):
        return _grid_derivative_evaluator(spec, d_xi, d_x)
    raise TypeError(f"not a symbol node: {type(spec).__name__}")


def _fd_offsets(order: int, step: float):
    """Offsets/weights of the iterated central first difference."""
    offs = {0.0: 1.0}
    for _ in range(order):
        new: dict[float, float] = {}
        for o, cw in offs.items():
            new[o + step] = new.get(o + step, 0.0) + cw / (2 * step)
            new[o - step] = new.get(o - step, 0.0) - cw / (2 * step)
        offs = new
    return list(offs.items())


def _shell_derivative_evaluator(spec: ShellSymbol, d_xi, d_x):
    sys = spec.system
    w = sys.weight
    from .field import partial_derivative as pdiff

    prepared = []
    for coeffs, q in spec.terms:
        if isinstance(coeffs, complex):
            if any(d_x):
                continue
            prepared.append((coeffs, q))
        else:
            dcs = []
            for c in coeffs:
                if any(d_x):
                    dcs.append(pdiff(Field(np.asarray(c), w), d_x).values)
                else:
                    dcs.append(np.asarray(c))
            prepared.append((tuple(dcs), q))

    def shell_prof(h, xi):
        return _shell_profile_at(sys, h, xi).astype(np.complex128)

    def ev(x, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1], dtype=np.complex128)
        for coeffs, q in prepared:
            if isinstance(coeffs, complex):
                out += coeffs * _xifactor_derivative(w, q, d_xi, xi)
                continue
            for h in sys.shells:
                cval = coeffs[h + 1]
                idx = _x_indices(np.asarray(x), cval.shape)
                cpts = cval[idx]
                if not np.any(cpts):
                    continue
                # Leibniz between the analytic factor and the shell
                # profile; the profile is differenced off-grid (step 1/2).
                acc = np.zeros(xi.shape[:-1], dtype=np.complex128)
                for ba in _multi_range(d_xi):
                    ca = tuple(t - s for t, s in zip(d_xi, ba))
                    coef = _binom_multi(d_xi, ba)
                    qpart = _xifactor_derivative(w, q, ba, xi)
                    ppart = np.ones(xi.shape[:-1], dtype=np.complex128)
                    if any(ca):
                        ppart = _fd_profile(sys, h, xi, ca)
                    else:
                        ppart = shell_prof(h, xi)
                    acc += coef * qpart * ppart
                out += cpts * acc
        return out

    return ev


def _fd_profile(sys: DyadicSystem, h: int, xi: np.ndarray, order, step: float = 0.5):
    out = np.zeros(xi.shape[:-1], dtype=np.complex128)
    combos = [(np.zeros(len(order)), 1.0)]
    for j, oj in enumerate(order):
        new = []
        for off, cw in combos:
            for o2, w2 in _fd_offsets(int(oj), step):
                off2 = off.copy()
                off2[j] += o2
                new.append((off2, cw * w2))
        combos = new
    for off, cw in combos:
        out += cw * _shell_profile_at(sys, h, xi + off)
    return out


def _grid_derivative_evaluator(spec: GridSymbol, d_xi, d_x):
    n = spec.weight.n
    samples = spec.samples
    x_steps = [2.0 * np.pi / N for N in spec.x_shape]

    def ev(x, xi):
        xid = _x_indices(np.asarray(x), spec.x_shape)
        xi = np.asarray(xi)
        fidx = []
        for j, N in enumerate(spec.xi_shape):
            k = np.rint(xi[..., j]).astype(int)
            fidx.append(k)
        out = np.zeros(np.broadcast_shapes(*(a.shape for a in xid)), dtype=np.complex128)
        combos = [((0,) * (2 * n), 1.0)]
        for j in range(n):
            if d_x[j]:
                combos = _extend_combos(combos, j, int(d_x[j]), 1.0, 2 * n)
        for j in range(n):
            if d_xi[j]:
                combos = _extend_combos(combos, n + j, int(d_xi[j]), 1.0, 2 * n)
        for off, cw in combos:
            idx = []
            for j in range(n):
                idx.append((xid[j] + int(off[j])) % spec.x_shape[j])
            for j in range(n):
                idx.append((fidx[j] + int(off[n + j])) % spec.xi_shape[j])
            out += cw * samples[tuple(np.broadcast_arrays(*idx))]
        # Undo unit-step scaling: x cells have width 2 pi / N.
        factor = 1.0
        for j in range(n):
            factor /= x_steps[j] ** int(d_x[j])
        return out * factor

    return ev


def _extend_combos(combos, axis, order, step, width):
    out = []
    for off, cw in combos:
        for o2, w2 in _fd_offsets(order, step):
            off2 = list(off)
            off2[axis] += o2
            out.append((tuple(off2), cw * w2))
    return out


def seminorm_estimate(spec, alpha, beta, delta: float, budget: int = 2048,
                      seed: int = 0, rho_range: tuple[float, float] | None = None) -> float:
    """Sampled symbol-class constant for one derivative pair.

    Estimates ``sup |d_x^beta d_xi^alpha a| / <xi>**(m - alpha.1/M +
    delta beta.1/M)`` over random (x, xi) with the weighted norm of xi
    log-spaced between the low cut and the grid reach.  Stability of the
    estimate under budget or grid refinement is the class diagnostic.
    """
    alpha = tuple(int(a) for a in alpha)
    beta = tuple(int(b) for b in beta)
    if sum(alpha) + sum(beta) > 4:
        raise ValueError("derivative probes support total order <= 4 only")
    w = _spec_weight(spec)
    m = quasi_order(spec)
    shape = _spec_shape_hint(spec)
    rng = np.random.default_rng(seed)
    if rho_range is None:
        if shape is not None:
            top = 0.75 * min((N // 2) ** mj for N, mj in zip(shape, w.m))
        else:
            top = 1024.0
        rho_range = (4.0, max(top, 8.0))
    lo, hi = rho_range
    radii = np.exp(rng.uniform(np.log(lo), np.log(hi), budget))
    dirs = rng.standard_normal((budget, w.n))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    from .weight import dilate as wdilate

    xi = wdilate(w, radii, sphere_project(w, dirs))
    grid_like = isinstance(spec, (GridSymbol, ShellSymbol))
    if grid_like:
        xi = np.rint(xi)
        keep = np.asarray(np.abs(xi)).max(axis=-1) > 0
        box = shape if shape is not None else None
        if box is not None:
            for j, N in enumerate(box):
                keep &= np.abs(xi[..., j]) <= N // 2 - 1 - max(sum(alpha), 1)
        xi = xi[keep]
        if xi.shape[0] == 0:
            raise ValueError("no usable frequency samples inside the grid")
    if shape is not None:
        idx = [rng.integers(0, N, xi.shape[0]) for N in shape]
        x = np.stack([2.0 * np.pi * i / N for i, N in zip(idx, shape)], axis=-1)
    else:
        x = np.zeros(xi.shape)
    ev = derivative_evaluator(spec, alpha, beta)
    vals = np.abs(ev(x, xi))
    power = m - w.alpha_order(alpha) + delta * w.alpha_order(beta)
    denom = np.asarray(m_bracket(w, xi)) ** power
    return float(np.max(vals / denom))


# ---------------------------------------------------------------------------
# Coefficient regularity, windows, ellipticity


@dataclass(frozen=True)
class CoefficientBesovReport:
    """Per-coefficient regularity of a differential polynomial."""

    entries: tuple
    r_min: float

    @property
    def resolvable(self) -> bool:
        return math.isfinite(self.r_min)

    def to_json(self) -> dict:
        return {
            "entries": [
                {"alpha": list(a), "index": None if math.isinf(i) else i, "reason": rs}
                for a, i, rs in self.entries
            ],
            "r_min": None if math.isinf(self.r_min) else self.r_min,
        }


def coefficient_besov(spec: DiffPoly, sys: DyadicSystem) -> CoefficientBesovReport:
    """Regularity index of every field coefficient; min rule for the class.

    Constant coefficients report the beyond-resolvable sentinel and do
    not participate in the minimum.
    """
    if not isinstance(spec, DiffPoly):
        raise TypeError("coefficient diagnostics require a differential polynomial")
    entries = []
    finite = []
    for coeff, alpha in spec.terms:
        if isinstance(coeff, Field):
            est = estimate_field(coeff, sys)
            entries.append((alpha, est.index, est.sentinel_reason))
            if est.resolvable:
                finite.append(est.index)
        else:
            entries.append((alpha, math.inf, "constant coefficient"))
    r_min = min(finite) if finite else math.inf
    return CoefficientBesovReport(tuple(entries), r_min)


@dataclass(frozen=True)
class SpatialWindow:
    """Smooth bump on the torus: 1 inside the plateau, 0 outside the radius.

    Scalar radii give a round bump in the torus distance; per-axis radii
    give a product of one-dimensional bumps (used to keep the window's
    own spectrum out of the fitted shells along heavy axes).  The
    plateau defaults to half the radius.
    """

    center: tuple[float, ...]
    radius: float | tuple[float, ...]
    plateau: float | tuple[float, ...] | None = None

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if isinstance(self.radius, (tuple, list)):
            radius = tuple(float(r) for r in self.radius)
            if self.plateau is None:
                plateau = tuple(r / 2.0 for r in radius)
            elif isinstance(self.plateau, (tuple, list)):
                plateau = tuple(float(p) for p in self.plateau)
            else:
                plateau = tuple(float(self.plateau) for _ in radius)
            if len(radius) != len(center) or len(plateau) != len(center):
                raise ValueError("per-axis radii must match the dimension")
            for p, r in zip(plateau, radius):
                if not 0.0 < p < r:
                    raise ValueError("plateau must lie strictly inside the radius")
        else:
            radius = float(self.radius)
            if radius <= 0:
                raise ValueError("window radius must be positive")
            plateau = radius / 2.0 if self.plateau is None else float(self.plateau)
            if not 0.0 < plateau < radius:
                raise ValueError("plateau must lie strictly inside the radius")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)
        object.__setattr__(self, "plateau", plateau)

    def distance_grid(self, shape) -> np.ndarray:
        pts = grid_points(shape)
        acc = np.zeros(shape)
        for x, c in zip(pts, self.center):
            d = np.abs(np.mod(x - c + np.pi, 2.0 * np.pi) - np.pi)
            acc = acc + d ** 2
        return np.sqrt(acc)

    def mask(self, shape) -> np.ndarray:
        from .bump import smoothstep

        if isinstance(self.radius, tuple):
            pts = grid_points(shape)
            m = np.ones(shape)
            for x, c, p, r in zip(pts, self.center, self.plateau, self.radius):
                d = np.abs(np.mod(x - c + np.pi, 2.0 * np.pi) - np.pi)
                m = m * np.asarray(smoothstep((d - p) / (r - p)))
            return m
        d = self.distance_grid(shape)
        return np.asarray(smoothstep((d - self.plateau) / (self.radius - self.plateau)))


@dataclass(frozen=True)
class EllipticityReport:
    c0: float
    rho0: float
    threshold: float
    order: float
    n_x: int
    n_xi: int
    region: str

    @property
    def passed(self) -> bool:
        return self.c0 >= self.threshold

    def to_json(self) -> dict:
        return {
            "c0": self.c0,
            "rho0": self.rho0,
            "threshold": self.threshold,
            "order": self.order,
            "passed": self.passed,
            "samples": {"x": self.n_x, "xi": self.n_xi},
            "region": self.region,
        }


def _xi_sample_set(w, shape, sector, rho0, budget, rng):
    r = m_norm_grid(w, shape)
    grids = freq_grids(shape)
    xi_all = np.stack(np.broadcast_arrays(*grids), axis=-1).reshape(-1, w.n)
    rflat = r.reshape(-1)
    keep = rflat > rho0
    if sector is not None:
        keep &= np.asarray(sector_contains(sector, w, xi_all))
    xi_sel = xi_all[keep]
    if xi_sel.shape[0] == 0:
        raise EllipticityError("no grid frequencies in the requested region")
    if xi_sel.shape[0] > budget:
        pick = rng.choice(xi_sel.shape[0], budget, replace=False)
        xi_sel = xi_sel[pick]
    return xi_sel


def elliptic_min(spec, window: SpatialWindow | None, sector: ConicSector | None,
                 rho0: float = 4.0, *, grid_shape=None, budget: int = 4096,
                 threshold: float = 1e-6, seed: int = 0) -> EllipticityReport:
    """Sampled lower bound ``min |a| / <xi>**m`` on a window-sector region.

    ``window=None`` means the whole torus, ``sector=None`` all
    directions.  Sampling is deterministic for a fixed seed.
    """
    w = _spec_weight(spec)
    m = quasi_order(spec)
    shape = _spec_shape_hint(spec) or (tuple(grid_shape) if grid_shape is not None else None)
    if shape is None:
        raise ValueError("need grid_shape for symbols without field coefficients")
    rng = np.random.default_rng(seed)
    xi_sel = _xi_sample_set(w, shape, sector, rho0, budget, rng)

    if window is None:
        idx = [rng.integers(0, N, min(budget, int(np.prod(shape)))) for N in shape]
    else:
        plat = window.mask(shape) >= 0.999
        pts = np.argwhere(plat)
        if pts.shape[0] == 0:
            raise EllipticityError("window plateau contains no grid points")
        if pts.shape[0] > budget:
            pts = pts[rng.choice(pts.shape[0], budget, replace=False)]
        idx = [pts[:, j] for j in range(w.n)]
    x = np.stack([2.0 * np.pi * i / N for i, N in zip(idx, shape)], axis=-1)

    vals = _eval_x_by_xi(spec, x, xi_sel, shape)
    denom = np.asarray(m_bracket(w, xi_sel)) ** m
    c0 = float(np.min(np.abs(vals) / denom[None, :]))
    region = f"window={'global' if window is None else window.center}, " \
             f"sector={'all' if sector is None else sector.center}, rho0={rho0}"
    return EllipticityReport(c0, rho0, threshold, m, x.shape[0], xi_sel.shape[0], region)


def _eval_x_by_xi(spec, x, xi, shape) -> np.ndarray:
    """Evaluate a(x_i, xi_j) as a dense (n_x, n_xi) table."""
    if isinstance(spec, GridSymbol):
        xid = _x_indices(x, spec.x_shape)
        fidx = tuple((np.rint(xi[:, j]).astype(int)) % N for j, N in enumerate(spec.xi_shape))
        return spec.samples[tuple(i[:, None] for i in xid) + tuple(f[None, :] for f in fidx)]
    w = _spec_weight(spec)
    out = np.zeros((x.shape[0], xi.shape[0]), dtype=np.complex128)
    for coeff, q, shell in separable_terms(spec, shape):
        qv = q.eval_at(w, xi).astype(np.complex128)
        if shell is not None:
            qv = qv * _shell_profile_at(_spec_system(spec), shell, xi)
        if coeff is None:
            out += qv[None, :]
        elif isinstance(coeff, complex):
            out += coeff * qv[None, :]
        else:
            xid = _x_indices(x, coeff.shape)
            out += coeff[xid][:, None] * qv[None, :]
    return out


def _spec_system(spec):
    if isinstance(spec, ShellSymbol):
        return spec.system
    if isinstance(spec, (SymbolSum, SymbolProduct)):
        for p in spec.parts:
            s = _spec_system(p)
            if s is not None:
                return s
    return None


def sphere_directions(w: WeightVector, count: int) -> np.ndarray:
    """Evenly angle-parametrized points on the weighted unit sphere (n<=2)."""
    if w.n == 1:
        return np.array([[1.0], [-1.0]])
    if w.n != 2:
        raise NotImplementedError("direction grids implemented for n <= 2")
    t = 2.0 * np.pi * np.arange(count) / count
    raw = np.stack([np.cos(t), np.sin(t)], axis=-1)
    return sphere_project(w, raw)


@dataclass(frozen=True)
class CharReport:
    directions: np.ndarray
    values: np.ndarray
    flagged: tuple[int, ...]
    threshold: float

    def to_json(self) -> dict:
        return {
            "directions": [list(map(float, d)) for d in self.directions],
            "magnitudes": [float(v) for v in np.abs(self.values)],
            "flagged": list(self.flagged),
            "threshold": self.threshold,
        }


def char_directions(spec: DiffPoly, x0, directions, threshold: float = 0.05) -> CharReport:
    """Directions where the principal part nearly vanishes at x0.

    ``directions`` is an integer count or an array of unit-sphere points.
    Flags ``|A_m(x0, theta)| < threshold * max_theta |A_m(x0, theta)|``.
    """
    if not isinstance(spec, DiffPoly):
        raise TypeError("characteristic directions require a differential polynomial")
    w = spec.weight
    m = quasi_order(spec)
    principal = [(c, a) for c, a in spec.terms if abs(w.alpha_order(a) - m) <= 1e-9]
    x0 = np.asarray(x0, dtype=float)
    coeffs = []
    for c, a in principal:
        if isinstance(c, Field):
            idx = _x_indices(x0[None, :], c.shape)
            coeffs.append((complex(c.values[tuple(i[0] for i in idx)]), a))
        else:
            coeffs.append((c, a))
    if all(abs(c) == 0.0 for c, _ in coeffs):
        raise ValueError("zero principal part at the requested point")
    if isinstance(directions, (int, np.integer)):
        dirs = sphere_directions(w, int(directions))
    else:
        dirs = np.asarray(directions, dtype=float)
    vals = np.zeros(dirs.shape[0], dtype=np.complex128)
    for c, a in coeffs:
        mono = np.ones(dirs.shape[0])
        for j, aj in enumerate(a):
            if aj:
                mono = mono * dirs[:, j] ** int(aj)
        vals += c * mono
    mags = np.abs(vals)
    top = float(mags.max())
    flagged = tuple(int(i) for i in np.flatnonzero(mags < threshold * top))
    return CharReport(dirs, vals, flagged, threshold)


@dataclass(frozen=True)
class BoundednessReport:
    ratios: tuple[float, ...]
    max_ratio: float
    s: float
    order: float
    warning: str | None

    def to_json(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "max_ratio": self.max_ratio,
            "s": self.s,
            "order": self.order,
            "warning": self.warning,
        }


def boundedness_probe(spec, s: float, battery, sys: DyadicSystem, *,
                      delta: float = 0.0, coefficient_r: float | None = None) -> BoundednessReport:
    """Empirical operator-norm proxy between shifted regularity scales.

    For each battery field u, compares ``norm_at(s)`` of the operator
    output against ``norm_at(s + m)`` of the input.  When the symbol has
    rough coefficients of index r, values of s outside ``((delta-1) r,
    r]`` attach a warning but still run (negative controls).
    """
    m = quasi_order(spec)
    warning = None
    r = coefficient_r
    if r is None and isinstance(spec, DiffPoly) and spec.field_terms:
        r = coefficient_besov(spec, sys).r_min
    if r is not None and math.isfinite(r):
        if not ((delta - 1.0) * r < s <= r):
            warning = (f"s={s} outside the admissible window "
                       f"({(delta - 1.0) * r:.3f}, {r:.3f}] for coefficient index {r:.3f}")
    ratios = []
    for u in battery:
        out = quantize(spec, u)
        num = estimate_field(out, sys).norm_at(s)
        den = estimate_field(u, sys).norm_at(s + m)
        ratios.append(num / den if den > 0 else math.inf)
    return BoundednessReport(tuple(ratios), max(ratios), s, m, warning)


# ---------------------------------------------------------------------------
# JSON schema


def symbol_to_json(spec, field_saver=None) -> dict:
    """Schema: {"type": "weight-power" | "diffpoly" | "sum" | "product" | "grid"}.

    Field coefficients require ``field_saver(field) -> reference-string``.
    """
    if isinstance(spec, WeightPower):
        return {"type": "weight-power", "order": spec.order, "weight": spec.weight.to_json()}
    if isinstance(spec, DiffPoly):
        terms = []
        for c, a in spec.terms:
            if isinstance(c, Field):
                if field_saver is None:
                    raise ValueError("field coefficients need a field_saver to serialize")
                terms.append({"alpha": list(a), "coeff": field_saver(c)})
            else:
                entry: dict = {"alpha": list(a)}
                entry["const"] = [c.real, c.imag] if c.imag else c.real
                terms.append(entry)
        return {"type": "diffpoly", "weight": spec.weight.to_json(), "terms": terms,
                "delta": spec.declared_delta}
    if isinstance(spec, SymbolSum):
        return {"type": "sum", "parts": [symbol_to_json(p, field_saver) for p in spec.parts]}
    if isinstance(spec, SymbolProduct):
        return {"type": "product", "parts": [symbol_to_json(p, field_saver) for p in spec.parts]}
    raise TypeError(f"cannot serialize symbol node {type(spec).__name__}")


def symbol_from_json(obj: dict, field_loader=None):
    kind = obj.get("type")
    if kind == "weight-power":
        return WeightPower(WeightVector.from_json(obj["weight"]), float(obj["order"]))
    if kind == "diffpoly":
        w = WeightVector.from_json(obj["weight"])
        terms = []
        for t in obj["terms"]:
            alpha = tuple(int(a) for a in t["alpha"])
            if "coeff" in t:
                if field_loader is None:
                    raise ValueError("field coefficients need a field_loader")
                terms.append((field_loader(t["coeff"]), alpha))
            else:
                c = t.get("const", 1.0)
                c = complex(c[0], c[1]) if isinstance(c, list) else complex(c)
                terms.append((c, alpha))
        return DiffPoly(w, tuple(terms), declared_delta=float(obj.get("delta", 0.0)))
    if kind == "sum":
        return SymbolSum(tuple(symbol_from_json(p, field_loader) for p in obj["parts"]))
    if kind == "product":
        return SymbolProduct(tuple(symbol_from_json(p, field_loader) for p in obj["parts"]))
    raise ValueError(f"unknown symbol type {kind!r}")
