"""Divergence-free vector fields on the periodic box [0, L]^3.

Fields are stored as Fourier coefficients in the half-spectrum layout used by
``rfftn``: an array of shape ``(3, n, n, n//2 + 1)``.  The coefficient
convention is

    u(x) = sum_k c_k exp(i k.x),     c_k = n^-3 sum_x u(x) exp(-i k.x),

so coefficients do not depend on the resolution and Parseval reads
``||u||^2_{L^2} = L^3 sum_k |c_k|^2`` (full spectrum).

Only wavevectors with every ``|k_i| <= n // 3`` are ever populated (2/3 rule);
nonlinear products are evaluated on a 3/2 zero-padded grid of ``3n/2``
points per axis.
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "TorusGrid",
    "SpectralField",
    "PhysicalField",
    "NormReport",
    "NonInvertible",
    "leray_project",
    "stokes_pow",
    "norms",
    "inner",
    "to_physical",
    "to_spectral",
    "divergence_defect",
    "random_field",
    "single_mode",
    "constant_field",
    "taylor_green",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


class NonInvertible(ValueError):
    """Raised when a negative Stokes power meets a nonzero mean mode."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    """Periodic box of side ``L`` resolved with ``n`` modes per axis."""

    n: int
    L: float = 2.0 * np.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def dealias_cutoff(self) -> int:
        return self.n // 3

    @property
    def padded(self) -> int:
        return 3 * self.n // 2

    @property
    def volume(self) -> float:
        return self.L**3

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (3, self.n, self.n, self.n // 2 + 1)

    @property
    def ops(self) -> "_SpectralOps":
        return _spectral_ops(self.n, self.L)

    def zeros(self) -> "SpectralField":
        return SpectralField(self, np.zeros(self.shape, dtype=complex))

    def points(self) -> np.ndarray:
        """Collocation points, shape ``(3, n, n, n)``."""
        x = np.arange(self.n) * (self.L / self.n)
        return np.array(np.meshgrid(x, x, x, indexing="ij"))


def _signed_index(n: int) -> np.ndarray:
    i = np.arange(n)
    return np.where(i <= n // 2, i, i - n)


class _SpectralOps:
    """Cached wavenumber tables and raw-array kernels for one grid."""

    def __init__(self, n: int, L: float):
        self.n, self.L = n, L
        self.nh = n // 2 + 1
        self.kc = n // 3
        self.M = 3 * n // 2
        self.Mh = self.M // 2 + 1
        self.volume = L**3
        kx = _signed_index(n)
        kz = np.arange(self.nh)
        # integer wavevector indices, broadcastable to (n, n, nh)
        self.kidx = (
            kx[:, None, None] * np.ones((1, n, self.nh), dtype=int),
            kx[None, :, None] * np.ones((n, 1, self.nh), dtype=int),
            kz[None, None, :] * np.ones((n, n, 1), dtype=int),
        )
        scale = 2.0 * np.pi / L
        self.K = np.array(self.kidx, dtype=float) * scale
        self.k2 = np.sum(self.K**2, axis=0)
        self.band = (
            (np.abs(self.kidx[0]) <= self.kc)
            & (np.abs(self.kidx[1]) <= self.kc)
            & (self.kidx[2] <= self.kc)
        )
        self.weights = np.where(self.kidx[2] == 0, 1.0, 2.0)
        self.weights[..., -1] = 1.0  # Nyquist plane, never populated
        k2safe = np.where(self.k2 > 0, self.k2, 1.0)
        self.khat = self.K / np.sqrt(k2safe)
        self.khat[:, self.k2 == 0] = 0.0
        # flat positions of band entries in the native and padded half-spectra
        flat = np.flatnonzero(self.band)
        ix, iy, iz = np.unravel_index(flat, self.band.shape)
        px = self.kidx[0].ravel()[flat] % self.M
        py = self.kidx[1].ravel()[flat] % self.M
        self.band_flat = flat
        self.pad_flat = np.ravel_multi_index((px, py, iz), (self.M, self.M, self.Mh))
        self._band_mask_f = self.band.astype(float)

    # transforms -----------------------------------------------------------
    def to_padded(self, c: np.ndarray) -> np.ndarray:
        """Band-limited coefficients ``(..., n, n, nh)`` -> padded physical values."""
        lead = c.shape[:-3]
        cp = np.zeros(lead + (self.M * self.M * self.Mh,), dtype=complex)
        cp[..., self.pad_flat] = c.reshape(lead + (-1,))[..., self.band_flat]
        cp = cp.reshape(lead + (self.M, self.M, self.Mh))
        return sfft.irfftn(cp, s=(self.M,) * 3, axes=(-3, -2, -1), norm="forward")

    def from_padded(self, f: np.ndarray) -> np.ndarray:
        """Padded physical values -> coefficients truncated to the band."""
        lead = f.shape[:-3]
        fh = sfft.rfftn(f, axes=(-3, -2, -1), norm="forward").reshape(lead + (-1,))
        out = np.zeros(lead + (self.n * self.n * self.nh,), dtype=complex)
        out[..., self.band_flat] = fh[..., self.pad_flat]
        return out.reshape(lead + (self.n, self.n, self.nh))

    def to_native(self, c: np.ndarray) -> np.ndarray:
        return sfft.irfftn(c, s=(self.n,) * 3, axes=(-3, -2, -1), norm="forward")

    def from_native(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfftn(f, axes=(-3, -2, -1), norm="forward")

    # linear algebra on coefficients ---------------------------------------
    def project(self, c: np.ndarray) -> np.ndarray:
        kd = np.einsum("i...,i...->...", self.khat, c)
        return c - self.khat * kd

    def grad(self, c: np.ndarray) -> np.ndarray:
        """Spectral gradient ``d_j c_i`` with shape ``(3 [i], 3 [j], ...)``."""
        return 1j * self.K[None, :] * c[:, None]

    def inner(self, c1: np.ndarray, c2: np.ndarray) -> float:
        return float(self.volume * np.sum(self.weights * (c1 * c2.conj()).real))

    def sq(self, c: np.ndarray) -> float:
        return float(self.volume * np.sum(self.weights * (c.real**2 + c.imag**2)))

    def grad_sq(self, c: np.ndarray) -> float:
        return float(self.volume * np.sum(self.weights * self.k2 * (c.real**2 + c.imag**2)))

    def quad(self, f: np.ndarray) -> float:
        """Integral over the box of a padded-grid scalar."""
        return float(self.volume * np.mean(f))


@functools.lru_cache(maxsize=16)
def _spectral_ops(n: int, L: float) -> _SpectralOps:
    return _SpectralOps(n, L)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A real vector field stored by its half-spectrum Fourier coefficients."""

    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"coeffs shape {c.shape} != grid shape {self.grid.shape}")
        if c is self.coeffs:
            c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def _check(self, other: "SpectralField") -> None:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs)

    def full_coeffs(self) -> np.ndarray:
        """Full-spectrum coefficients ``(3, n, n, n)`` in ``fftn`` order."""
        n = self.grid.n
        full = np.zeros((3, n, n, n), dtype=complex)
        nh = n // 2 + 1
        full[..., :nh] = self.coeffs
        # c(-k) = conj(c(k)) fills kz < 0
        neg = (-np.arange(n)) % n
        for kz in range(1, n - nh + 1):
            full[..., n - kz] = np.conj(self.coeffs[:, neg][:, :, neg][..., kz])
        return full

    def mean(self) -> np.ndarray:
        return self.coeffs[:, 0, 0, 0].real.copy()


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Values of a vector field on the ``n^3`` collocation grid."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (3,) + (self.grid.n,) * 3:
            raise ValueError(f"values shape {v.shape} does not match grid n={self.grid.n}")
        if v is self.values:
            v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class NormReport:
    l2: float
    grad_l2: float
    v_norm: float
    lp: dict = field(default_factory=dict)


def _coeffs_of(raw, grid: TorusGrid | None) -> tuple[TorusGrid, np.ndarray]:
    if isinstance(raw, SpectralField):
        return raw.grid, raw.coeffs
    if grid is None:
        raise TypeError("grid is required when passing a raw coefficient array")
    return grid, np.asarray(raw, dtype=complex)


def leray_project(raw, grid: TorusGrid | None = None) -> SpectralField:
    """Orthogonal projection onto divergence-free fields, ``I - k k^T / |k|^2`` per mode.

    The mean mode passes through unchanged.
    """
    grid, c = _coeffs_of(raw, grid)
    return SpectralField(grid, grid.ops.project(c))


def stokes_pow(u: SpectralField, s: float) -> SpectralField:
    """Apply ``A^s`` where ``A = -Pi Delta`` has eigenvalue ``|2 pi k / L|^2`` on mode k."""
    ops = u.grid.ops
    c = u.coeffs
    if s == 0:
        return u
    mult = np.zeros_like(ops.k2)
    nz = ops.k2 > 0
    mult[nz] = ops.k2[nz] ** s
    if s < 0:
        scale = max(1.0, float(np.max(np.abs(c))))
        if np.max(np.abs(c[:, 0, 0, 0])) > 1e-14 * scale:
            raise NonInvertible("negative power of A applied to a field with nonzero mean")
    return SpectralField(u.grid, c * mult)


def inner(u: SpectralField, v: SpectralField) -> float:
    """L^2 inner product ``(u, v)``."""
    u._check(v)
    return u.grid.ops.inner(u.coeffs, v.coeffs)


def lp_norm(u: SpectralField, p: float) -> float:
    ops = u.grid.ops
    f = ops.to_padded(u.coeffs)
    mag2 = np.sum(f * f, axis=0)
    return ops.quad(mag2 ** (p / 2)) ** (1.0 / p)


def norms(u: SpectralField, p_list: Iterable[float] = ()) -> NormReport:
    """L^2, gradient and V norms from Parseval; L^p norms by padded-grid quadrature."""
    ops = u.grid.ops
    l2sq = ops.sq(u.coeffs)
    g2 = ops.grad_sq(u.coeffs)
    lp = {}
    p_list = list(p_list)
    if p_list:
        f = ops.to_padded(u.coeffs)
        mag2 = np.sum(f * f, axis=0)
        for p in p_list:
            if not 2 <= p < np.inf:
                raise ValueError(f"Lebesgue exponent must satisfy 2 <= p < inf, got {p}")
            lp[p] = ops.quad(mag2 ** (p / 2)) ** (1.0 / p)
    return NormReport(np.sqrt(l2sq), np.sqrt(g2), np.sqrt(l2sq + g2), lp)


def to_physical(u: SpectralField) -> PhysicalField:
    return PhysicalField(u.grid, u.grid.ops.to_native(u.coeffs))


def to_spectral(v: PhysicalField, project: bool = False) -> SpectralField:
    """Forward transform; modes outside the dealiased band are dropped."""
    ops = v.grid.ops
    c = ops.from_native(v.values) * ops._band_mask_f
    if project:
        c = ops.project(c)
    return SpectralField(v.grid, c)


def divergence_defect(u: SpectralField) -> float:
    """``max_k |khat . c_k|`` relative to the largest coefficient magnitude."""
    ops = u.grid.ops
    kd = np.abs(np.einsum("i...,i...->...", ops.khat, u.coeffs))
    scale = float(np.max(np.abs(u.coeffs)))
    return float(np.max(kd)) / scale if scale > 0 else 0.0


# field generators ---------------------------------------------------------------

def random_field(
    grid: TorusGrid,
    rng: np.random.Generator | int,
    decay: float = 2.0,
    l2: float | None = 1.0,
    mean_free: bool = True,
) -> SpectralField:
    """Random divergence-free band-limited field with spectrum ``|k|^-decay``.

    The field is rescaled to the requested L^2 norm unless ``l2`` is None.
    """
    rng = np.random.default_rng(rng)
    ops = grid.ops
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    kmag = np.sqrt(np.sum(np.array(ops.kidx, dtype=float) ** 2, axis=0))
    env = np.where(kmag > 0, np.maximum(kmag, 1.0) ** (-decay), 1.0)
    c = c * env * ops._band_mask_f
    if mean_free:
        c[:, 0, 0, 0] = 0.0
    c = ops.project(c)
    # physical round trip enforces Hermitian symmetry on the kz = 0 plane
    c = ops.from_native(ops.to_native(c)) * ops._band_mask_f
    if l2 is not None:
        nrm = np.sqrt(ops.sq(c))
        if nrm > 0:
            c = c * (l2 / nrm)
    return SpectralField(grid, c)


def single_mode(
    grid: TorusGrid, k: Sequence[int], amplitude: Sequence[complex]
) -> SpectralField:
    """Field ``a exp(i k.x) + conj(a) exp(-i k.x)`` (not projected)."""
    ops = grid.ops
    n = grid.n
    k = tuple(int(x) for x in k)
    if any(abs(x) > ops.kc for x in k):
        raise ValueError(f"wavevector {k} outside the dealiased band")
    amp = np.asarray(amplitude, dtype=complex)
    c = np.zeros(grid.shape, dtype=complex)
    if k == (0, 0, 0):
        c[:, 0, 0, 0] = amp.real
        return SpectralField(grid, c)
    for sign, a in ((1, amp), (-1, amp.conj())):
        kx, ky, kz = (sign * x for x in k)
        if kz < 0:
            continue
        c[:, kx % n, ky % n, kz] += a
    return SpectralField(grid, c)


def constant_field(grid: TorusGrid, value: Sequence[float]) -> SpectralField:
    c = np.zeros(grid.shape, dtype=complex)
    c[:, 0, 0, 0] = np.asarray(value, dtype=float)
    return SpectralField(grid, c)


def taylor_green(grid: TorusGrid, amplitude: float = 1.0) -> SpectralField:
    """``(sin x cos y cos z, -cos x sin y cos z, 0)`` in box units."""
    x, y, z = grid.points() * (2.0 * np.pi / grid.L)
    vals = amplitude * np.array(
        [np.sin(x) * np.cos(y) * np.cos(z), -np.cos(x) * np.sin(y) * np.cos(z), 0.0 * x]
    )
    return to_spectral(PhysicalField(grid, vals), project=True)


# checkpoint I/O -------------------------------------------------------------------

_MAGIC = b"BFNS"
_VERSION = 1
_HEADER = struct.Struct("<4sIId")


def _lex_order(n: int) -> np.ndarray:
    """Storage indices of the half spectrum sorted by signed (kx, ky, kz)."""
    signed = _signed_index(n)
    order = np.argsort(signed, kind="stable")
    return order


def save_checkpoint(u: SpectralField, path) -> None:
    """Write the half-spectrum in lexicographic k order, components interleaved."""
    n = u.grid.n
    o = _lex_order(n)
    c = u.coeffs[:, o][:, :, o]  # (3, kx, ky, kz), kz already ascending
    c = np.moveaxis(c, 0, -1)  # (kx, ky, kz, comp)
    data = np.empty(c.shape + (2,), dtype="<f8")
    data[..., 0] = c.real
    data[..., 1] = c.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, u.grid.L))
        fh.write(data.tobytes(order="C"))


def load_checkpoint(path) -> SpectralField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise CheckpointError("truncated header")
        magic, version, n, L = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        grid = TorusGrid(n, L)
        count = 3 * n * n * (n // 2 + 1) * 2
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count:
        raise CheckpointError(f"expected {count} values, found {data.size}")
    data = data.reshape(n, n, n // 2 + 1, 3, 2)
    c = np.moveaxis(data[..., 0] + 1j * data[..., 1], -1, 0)
    inv = np.argsort(_lex_order(n))
    c = c[:, inv][:, :, inv]
    return SpectralField(grid, c)
