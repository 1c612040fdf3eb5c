"""Periodic-box spectral backbone: grids, complex fields, FFT calculus.

All fields live on a uniform n^3 lattice over a cube of edge ``box_length``.
Differentiation is exact on trigonometric polynomials and uses the 1/i
convention throughout: ``D = (1/i) grad``, so that ``D e^{ik.x} = k e^{ik.x}``.
The forward transform is unnormalized and the inverse carries the 1/n^3
factor (numpy's default convention); this is the single normative choice
used everywhere downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "DomainMask",
    "RANK_SHAPES",
    "make_field",
    "zeros_field",
    "constant_field",
    "plane_wave",
    "random_band_limited",
    "dft_forward",
    "dft_inverse",
    "spectral_derivative",
    "dealias",
    "band_limit",
    "inner_product",
    "l2_norm",
    "ball_mask",
    "full_mask",
    "write_snapshot",
    "read_snapshot",
]

# Leading component axes per rank; the trailing three axes are always (x, y, z).
RANK_SHAPES = {
    "scalar": (),
    "vector3": (3,),
    "spinor8": (8,),
    "matrix8x8": (8, 8),
}

_RANK_TAGS = {"scalar": 0, "vector3": 1, "spinor8": 2, "matrix8x8": 3}
_TAG_RANKS = {v: k for k, v in _RANK_TAGS.items()}

_SNAPSHOT_MAGIC = b"CGOF"
_SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic sampling lattice for the cube [origin, origin + L)^3.

    Parameters
    ----------
    n : int
        Points per axis, at least 8 (powers of two keep the FFTs fast).
    box_length : float
        Physical edge length L of the periodic cell.
    origin : tuple of float
        Coordinate of the lattice corner; defaults center the box on 0.
    """

    n: int
    box_length: float
    origin: tuple = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"grid needs n >= 8, got n={self.n}")
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")
        if self.origin is None:
            half = -0.5 * self.box_length
            object.__setattr__(self, "origin", (half, half, half))
        else:
            object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
            if len(self.origin) != 3:
                raise ValueError("origin must have three components")

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def volume(self) -> float:
        return self.box_length**3

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.n)

    def coords(self) -> tuple:
        """Meshgrid coordinate arrays (X, Y, Z), each of shape (n, n, n)."""
        return _coords(self)

    def radius(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        x, y, z = self.coords()
        cx, cy, cz = center
        return np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2)

    def wavenumbers(self) -> tuple:
        """Meshgrid wavevector arrays (KX, KY, KZ) in FFT ordering.

        Entries are 2*pi/L times the integer mode indices in
        {-n/2, ..., n/2 - 1}.
        """
        return _wavenumbers(self)

    def k_squared(self) -> np.ndarray:
        return _k_squared(self)

    def mode_index(self) -> tuple:
        """Integer FFT mode indices (dimensionless) per axis, meshgridded."""
        return _mode_index(self)


@lru_cache(maxsize=8)
def _coords(grid: GridSpec) -> tuple:
    axes = [grid.axis_coords(a) for a in range(3)]
    return tuple(np.meshgrid(*axes, indexing="ij"))


@lru_cache(maxsize=8)
def _wavenumbers(grid: GridSpec) -> tuple:
    # The unpaired -n/2 Nyquist plane is annihilated: odd multipliers on it
    # would break Hermitian symmetry (real fields would stop being real),
    # and resolved fields carry no content there anyway.
    k1 = 2.0 * np.pi * np.fft.fftfreq(grid.n, d=grid.spacing)
    if grid.n % 2 == 0:
        k1 = k1.copy()
        k1[grid.n // 2] = 0.0
    return tuple(np.meshgrid(k1, k1, k1, indexing="ij"))


@lru_cache(maxsize=8)
def _k_squared(grid: GridSpec) -> np.ndarray:
    # Built from the same Nyquist-zeroed arrays so that the composition of
    # two first-order operators equals the second-order multiplier exactly.
    kx, ky, kz = _wavenumbers(grid)
    return kx**2 + ky**2 + kz**2


@lru_cache(maxsize=8)
def _mode_index(grid: GridSpec) -> tuple:
    m1 = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    return tuple(np.meshgrid(m1, m1, m1, indexing="ij"))


@dataclass(frozen=True)
class Field:
    """Complex samples of a given rank on a :class:`GridSpec` lattice.

    ``values`` has shape ``RANK_SHAPES[rank] + (n, n, n)`` and is frozen
    in place at construction (pass through :func:`make_field` to keep the
    source array writable); all operations return new fields.
    """

    grid: GridSpec
    rank: str
    values: np.ndarray

    def __post_init__(self):
        if self.rank not in RANK_SHAPES:
            raise ValueError(f"unknown rank {self.rank!r}")
        expected = RANK_SHAPES[self.rank] + (self.grid.n,) * 3
        if self.values.shape != expected:
            raise ValueError(
                f"rank {self.rank} on n={self.grid.n} needs shape {expected}, "
                f"got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite samples")
        vals = np.ascontiguousarray(self.values, dtype=np.complex128)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def ncomp(self) -> int:
        return int(np.prod(RANK_SHAPES[self.rank], dtype=int)) if RANK_SHAPES[self.rank] else 1


def make_field(grid: GridSpec, rank: str, values: np.ndarray) -> Field:
    """Copying constructor; the caller's array stays writable."""
    return Field(grid, rank, np.array(values, dtype=np.complex128))


def zeros_field(grid: GridSpec, rank: str) -> Field:
    shape = RANK_SHAPES[rank] + (grid.n,) * 3
    return Field(grid, rank, np.zeros(shape, dtype=np.complex128))


def constant_field(grid: GridSpec, rank: str, value) -> Field:
    shape = RANK_SHAPES[rank] + (grid.n,) * 3
    vals = np.empty(shape, dtype=np.complex128)
    value = np.asarray(value, dtype=np.complex128)
    if value.shape == ():
        vals[...] = value
    else:
        vals[...] = value.reshape(value.shape + (1, 1, 1))
    return Field(grid, rank, vals)


def plane_wave(grid: GridSpec, rank: str, kvec, amplitude=1.0) -> Field:
    """Field amplitude * e^{i k.x}; k need not be lattice-commensurate."""
    x, y, z = grid.coords()
    kvec = np.asarray(kvec, dtype=np.complex128)
    phase = np.exp(1j * (kvec[0] * x + kvec[1] * y + kvec[2] * z))
    amp = np.asarray(amplitude, dtype=np.complex128)
    if amp.shape == ():
        return make_field(grid, rank, amp * phase)
    return make_field(grid, rank, amp.reshape(amp.shape + (1, 1, 1)) * phase)


def random_band_limited(
    grid: GridSpec,
    rank: str,
    rng: np.random.Generator,
    kmax: int,
    real: bool = False,
) -> Field:
    """Smooth random field with spectrum confined to |mode index|_inf <= kmax.

    Mode amplitudes are Gaussian with a k^2-decaying envelope so the field
    looks like a smooth blob rather than white noise; with ``real=True`` the
    imaginary part is discarded (still band-limited).
    """
    shape = RANK_SHAPES[rank] + (grid.n,) * 3
    spec = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mx, my, mz = grid.mode_index()
    keep = (np.abs(mx) <= kmax) & (np.abs(my) <= kmax) & (np.abs(mz) <= kmax)
    envelope = np.exp(-0.5 * (mx**2 + my**2 + mz**2) / max(kmax, 1) ** 2)
    spec *= np.where(keep, envelope, 0.0)
    vals = np.fft.ifftn(spec, axes=(-3, -2, -1))
    if real:
        vals = vals.real.astype(np.complex128)
    # normalize to unit max magnitude for predictable test scales
    peak = np.abs(vals).max()
    if peak > 0:
        vals = vals / peak
    return Field(grid, rank, vals)


def _check_same_grid(a: Field, b: Field):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    if a.rank != b.rank:
        raise ValueError(f"rank mismatch: {a.rank} vs {b.rank}")


def dft_forward(f: Field) -> Field:
    """Unnormalized forward DFT, applied componentwise."""
    return Field(f.grid, f.rank, np.fft.fftn(f.values, axes=(-3, -2, -1)))


def dft_inverse(F: Field) -> Field:
    """Inverse DFT carrying the 1/n^3 normalization."""
    return Field(F.grid, F.rank, np.fft.ifftn(F.values, axes=(-3, -2, -1)))


def _fft(values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values, axes=(-3, -2, -1))


def _ifft(values: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(values, axes=(-3, -2, -1))


def spectral_derivative(f: Field, which: str, zeta=None) -> Field:
    """Spectral differential operators in the D = (1/i) grad convention.

    which:
      * ``gradient``    scalar -> vector3, D f (multiplier k)
      * ``divergence``  vector3 -> scalar, D . f
      * ``curl``        vector3 -> vector3, D x f
      * ``laplacian``   any rank, true Laplacian (multiplier -|k|^2)
      * ``directional`` any rank, zeta . D (multiplier zeta . k)
    """
    grid = f.grid
    kx, ky, kz = grid.wavenumbers()
    if which == "gradient":
        if f.rank != "scalar":
            raise ValueError("gradient needs a scalar field")
        fh = _fft(f.values)
        out = np.stack([_ifft(kx * fh), _ifft(ky * fh), _ifft(kz * fh)])
        return Field(grid, "vector3", out)
    if which == "divergence":
        if f.rank != "vector3":
            raise ValueError("divergence needs a vector3 field")
        fh = _fft(f.values)
        return Field(grid, "scalar", _ifft(kx * fh[0] + ky * fh[1] + kz * fh[2]))
    if which == "curl":
        if f.rank != "vector3":
            raise ValueError("curl needs a vector3 field")
        fh = _fft(f.values)
        out = np.stack(
            [
                _ifft(ky * fh[2] - kz * fh[1]),
                _ifft(kz * fh[0] - kx * fh[2]),
                _ifft(kx * fh[1] - ky * fh[0]),
            ]
        )
        return Field(grid, "vector3", out)
    if which == "laplacian":
        fh = _fft(f.values)
        return Field(grid, f.rank, _ifft(-grid.k_squared() * fh))
    if which == "directional":
        if zeta is None:
            raise ValueError("directional derivative needs zeta")
        zeta = np.asarray(zeta, dtype=np.complex128)
        fh = _fft(f.values)
        mult = zeta[0] * kx + zeta[1] * ky + zeta[2] * kz
        return Field(grid, f.rank, _ifft(mult * fh))
    raise ValueError(f"unknown derivative kind {which!r}")


def dealias(f: Field, fraction: float = 2.0 / 3.0) -> Field:
    """Truncate the spectrum to the inner ``fraction`` cube (2/3 rule)."""
    cut = int(np.floor(0.5 * fraction * f.grid.n))
    return band_limit(f, cut)


def band_limit(f: Field, kmax: int) -> Field:
    """Zero all modes with any |mode index| > kmax."""
    mx, my, mz = f.grid.mode_index()
    keep = (np.abs(mx) <= kmax) & (np.abs(my) <= kmax) & (np.abs(mz) <= kmax)
    fh = _fft(f.values)
    return Field(f.grid, f.rank, _ifft(fh * keep))


@dataclass(frozen=True)
class DomainMask:
    """Per-lattice-point weight in [0, 1] standing in for an indicator.

    The support must stay at least two lattice cells away from the box
    faces so that masked integrands never touch the periodic seam.
    """

    grid: GridSpec
    indicator: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=np.float64)
        if ind.shape != (self.grid.n,) * 3:
            raise ValueError("indicator shape must match the grid")
        if ind.min() < 0.0 or ind.max() > 1.0:
            raise ValueError("indicator weights must lie in [0, 1]")
        support = ind > 0.0
        m = 2
        faces = [
            support[:m, :, :], support[-m:, :, :],
            support[:, :m, :], support[:, -m:, :],
            support[:, :, :m], support[:, :, -m:],
        ]
        if any(face.any() for face in faces):
            raise ValueError("mask support must keep a 2-cell margin to the box faces")
        ind = ind.copy()
        ind.flags.writeable = False
        object.__setattr__(self, "indicator", ind)

    @property
    def weight_volume(self) -> float:
        return float(self.indicator.sum()) * self.grid.cell_volume


def ball_mask(grid: GridSpec, radius: float, center=(0.0, 0.0, 0.0)) -> DomainMask:
    r = grid.radius(center)
    return DomainMask(grid, (r <= radius).astype(np.float64))


def full_mask(grid: GridSpec) -> DomainMask:
    """All-ones weight (whole periodic box; skips the margin rule)."""
    mask = DomainMask.__new__(DomainMask)
    ind = np.ones((grid.n,) * 3)
    ind.flags.writeable = False
    object.__setattr__(mask, "grid", grid)
    object.__setattr__(mask, "indicator", ind)
    return mask


def inner_product(U: Field, V: Field, mask: Optional[DomainMask] = None) -> complex:
    """(U|V)_mask = sum mask * conj(V) . U * h^3, linear in U.

    Component axes are contracted; the summation order is fixed by numpy's
    pairwise reduction, making the value thread-count independent.
    """
    _check_same_grid(U, V)
    integrand = np.conj(V.values) * U.values
    if integrand.ndim > 3:
        integrand = integrand.reshape((-1,) + (U.grid.n,) * 3).sum(axis=0)
    if mask is not None:
        if mask.grid != U.grid:
            raise ValueError("mask grid mismatch")
        integrand = integrand * mask.indicator
    return complex(integrand.sum() * U.grid.cell_volume)


def l2_norm(U: Field, mask: Optional[DomainMask] = None) -> float:
    """sqrt((U|U)_mask); unweighted L^2 over the masked region."""
    mag = np.abs(U.values) ** 2
    if mag.ndim > 3:
        mag = mag.reshape((-1,) + (U.grid.n,) * 3).sum(axis=0)
    if mask is not None:
        if mask.grid != U.grid:
            raise ValueError("mask grid mismatch")
        mag = mag * mask.indicator
    return float(np.sqrt(mag.sum() * U.grid.cell_volume))


def write_snapshot(path, f: Field):
    """Write a field in the CGOF binary layout.

    Header: magic ``CGOF``, version u32, rank tag u8, n u32, box_length f64,
    origin 3 x f64, all little-endian; then complex samples as f64 (re, im)
    pairs, x-fastest within each component, components consecutive in row
    order (matrix8x8 columns vary fastest within a row block).
    """
    header = _SNAPSHOT_MAGIC + struct.pack(
        "<IBI", _SNAPSHOT_VERSION, _RANK_TAGS[f.rank], f.grid.n
    )
    header += struct.pack("<d", f.grid.box_length)
    header += struct.pack("<3d", *f.grid.origin)
    n = f.grid.n
    comps = f.values.reshape((-1,) + (n,) * 3)
    with open(path, "wb") as fh:
        fh.write(header)
        for comp in comps:
            flat = comp.transpose(2, 1, 0).ravel()  # x varies fastest
            buf = np.empty(2 * flat.size, dtype="<f8")
            buf[0::2] = flat.real
            buf[1::2] = flat.imag
            fh.write(buf.tobytes())


def read_snapshot(path) -> Field:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _SNAPSHOT_MAGIC:
            raise ValueError(f"bad snapshot magic {magic!r}")
        version, tag, n = struct.unpack("<IBI", fh.read(9))
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        (box_length,) = struct.unpack("<d", fh.read(8))
        origin = struct.unpack("<3d", fh.read(24))
        rank = _TAG_RANKS[tag]
        ncomp = int(np.prod(RANK_SHAPES[rank], dtype=int)) if RANK_SHAPES[rank] else 1
        raw = np.frombuffer(fh.read(), dtype="<f8")
    expected = 2 * ncomp * n**3
    if raw.size != expected:
        raise ValueError(f"snapshot payload has {raw.size} floats, expected {expected}")
    cplx = raw[0::2] + 1j * raw[1::2]
    comps = cplx.reshape((ncomp, n, n, n)).transpose(0, 3, 2, 1)  # undo x-fastest
    grid = GridSpec(n=n, box_length=box_length, origin=origin)
    return Field(grid, rank, comps.reshape(RANK_SHAPES[rank] + (n,) * 3))
