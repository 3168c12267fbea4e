"""Periodic grid-sampled fields on the torus [0, 2pi)^n.

Samples live at ``x_k = 2 pi k / N_j`` and spectra are indexed by the
integer frequencies ``xi_j in [-N_j/2, N_j/2)``.  The Fourier-coefficient
convention is ``u(x) = sum_xi uhat(xi) exp(i x.xi)``, so the constant
field 1 has a single unit coefficient at xi = 0 and frequency multipliers
act directly on ``uhat``.

File format: ``<name>.json`` header plus ``<name>.f64`` payload holding
interleaved real/imaginary little-endian float64, row-major with axis 0
slowest.  The header carries a CRC-32 of the payload bytes.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .weight import WeightVector

__all__ = [
    "Field",
    "FieldError",
    "freq_grids",
    "m_norm_grid",
    "m_bracket_grid",
    "grid_points",
    "to_spectrum",
    "from_spectrum",
    "sup_norm",
    "apply_multiplier",
    "partial_derivative",
    "d_operator",
    "monomial_multiplier",
    "save_field",
    "load_field",
]

DOMAIN_TAG = "torus-2pi"
DTYPE_TAG = "complex128-interleaved"


class FieldError(ValueError):
    """Raised for malformed field files or inconsistent grid data."""


def _check_shape(shape: tuple[int, ...], n: int) -> None:
    if len(shape) != n:
        raise FieldError(f"grid rank {len(shape)} != weight dimension {n}")
    for N in shape:
        if N < 8 or N % 2 != 0:
            raise FieldError(f"grid axes must be even and >= 8, got {shape}")


def freq_grids(shape: tuple[int, ...]) -> list[np.ndarray]:
    """Integer frequency grids in FFT layout, broadcastable per axis."""
    n = len(shape)
    out = []
    for j, N in enumerate(shape):
        k = np.fft.fftfreq(N, d=1.0 / N).astype(float)
        sh = [1] * n
        sh[j] = N
        out.append(k.reshape(sh))
    return out


def m_norm_grid(w: WeightVector, shape: tuple[int, ...]) -> np.ndarray:
    """Weighted norm of every representable frequency, FFT layout."""
    grids = freq_grids(shape)
    acc = np.zeros(shape, dtype=float)
    for g, mj in zip(grids, w.m):
        acc = acc + g ** (2 * mj)
    return np.sqrt(acc)


def m_bracket_grid(w: WeightVector, shape: tuple[int, ...]) -> np.ndarray:
    grids = freq_grids(shape)
    acc = np.ones(shape, dtype=float)
    for g, mj in zip(grids, w.m):
        acc = acc + g ** (2 * mj)
    return np.sqrt(acc)


def grid_points(shape: tuple[int, ...]) -> list[np.ndarray]:
    """Sample coordinates 2 pi k / N per axis, broadcastable."""
    n = len(shape)
    out = []
    for j, N in enumerate(shape):
        x = 2.0 * np.pi * np.arange(N) / N
        sh = [1] * n
        sh[j] = N
        out.append(x.reshape(sh))
    return out


@dataclass(frozen=True)
class Field:
    """Immutable complex samples plus an optionally cached spectrum."""

    values: np.ndarray
    weight: WeightVector
    _spectrum: np.ndarray | None = dataclass_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.complex128)
        _check_shape(v.shape, self.weight.n)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self._spectrum is not None:
            s = np.ascontiguousarray(self._spectrum, dtype=np.complex128)
            s.setflags(write=False)
            object.__setattr__(self, "_spectrum", s)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def spectrum(self) -> np.ndarray:
        """Fourier coefficients; computed once, then cached (single writer)."""
        if self._spectrum is None:
            s = np.fft.fftn(self.values) / self.size
            s.setflags(write=False)
            object.__setattr__(self, "_spectrum", s)
        return self._spectrum

    @staticmethod
    def from_spectrum_array(spec: np.ndarray, weight: WeightVector) -> "Field":
        spec = np.asarray(spec, dtype=np.complex128)
        values = np.fft.ifftn(spec) * spec.size
        return Field(values, weight, _spectrum=spec)


def to_spectrum(f: Field) -> Field:
    """Return the same field with its spectrum cache filled."""
    f.spectrum
    return f


def from_spectrum(spec: np.ndarray, weight: WeightVector) -> Field:
    return Field.from_spectrum_array(spec, weight)


def sup_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def apply_multiplier(f: Field, mult: np.ndarray) -> Field:
    """Field with spectrum ``mult * spectrum(f)``; mult in FFT layout."""
    spec = f.spectrum * mult
    return Field.from_spectrum_array(spec, f.weight)


def monomial_multiplier(shape: tuple[int, ...], alpha) -> np.ndarray:
    """The grid of ``xi**alpha`` in FFT layout."""
    grids = freq_grids(shape)
    acc = np.ones(shape, dtype=float)
    for g, a in zip(grids, alpha):
        if a:
            acc = acc * g ** int(a)
    return acc


def partial_derivative(f: Field, alpha) -> Field:
    """Spectral partial derivative: multiplier ``(i xi)**alpha``."""
    alpha = tuple(int(a) for a in alpha)
    mult = monomial_multiplier(f.shape, alpha) * (1j) ** sum(alpha)
    return apply_multiplier(f, mult)


def d_operator(f: Field, alpha) -> Field:
    """Derivative in the convention ``D = -i d/dx``: multiplier ``xi**alpha``."""
    alpha = tuple(int(a) for a in alpha)
    return apply_multiplier(f, monomial_multiplier(f.shape, alpha))


def _split_base_path(path) -> Path:
    p = Path(path)
    if p.suffix in {".json", ".f64"}:
        p = p.with_suffix("")
    return p


def save_field(f: Field, path) -> tuple[Path, Path]:
    """Write ``<path>.json`` + ``<path>.f64``; returns the two paths."""
    base = _split_base_path(path)
    payload = np.empty(f.shape + (2,), dtype="<f8")
    payload[..., 0] = f.values.real
    payload[..., 1] = f.values.imag
    raw = payload.tobytes()
    header = {
        "shape": list(f.shape),
        "weight": f.weight.to_json(),
        "dtype": DTYPE_TAG,
        "domain": DOMAIN_TAG,
        "crc32": format(zlib.crc32(raw) & 0xFFFFFFFF, "08x"),
    }
    json_path = base.with_suffix(".json")
    payload_path = base.with_suffix(".f64")
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    payload_path.write_bytes(raw)
    return json_path, payload_path


def load_field(path) -> Field:
    """Read a field written by :func:`save_field`, validating everything."""
    base = _split_base_path(path)
    json_path = base.with_suffix(".json")
    payload_path = base.with_suffix(".f64")
    try:
        header = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FieldError(f"cannot read field header {json_path}: {exc}") from exc
    for key in ("shape", "weight", "dtype", "domain", "crc32"):
        if key not in header:
            raise FieldError(f"field header missing key {key!r}")
    if header["dtype"] != DTYPE_TAG or header["domain"] != DOMAIN_TAG:
        raise FieldError(f"unsupported dtype/domain tags in {json_path}")
    shape = tuple(int(N) for N in header["shape"])
    weight = WeightVector.from_json(header["weight"])
    _check_shape(shape, weight.n)
    try:
        raw = payload_path.read_bytes()
    except OSError as exc:
        raise FieldError(f"cannot read field payload {payload_path}: {exc}") from exc
    expected_bytes = int(np.prod(shape)) * 2 * 8
    if len(raw) != expected_bytes:
        raise FieldError(
            f"payload length {len(raw)} disagrees with shape {shape} (expected {expected_bytes})"
        )
    crc = format(zlib.crc32(raw) & 0xFFFFFFFF, "08x")
    if crc != header["crc32"]:
        raise FieldError(f"payload checksum {crc} != header checksum {header['crc32']}")
    flat = np.frombuffer(raw, dtype="<f8").reshape(shape + (2,))
    values = flat[..., 0] + 1j * flat[..., 1]
    return Field(values, weight)
