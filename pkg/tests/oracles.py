"""Reference computations that share no code path with the package kernels.

Full spectra are rebuilt entry by entry from the stored half spectrum, products are
explicit convolution sums over the band, and integrals are exponential sums.
"""
from __future__ import annotations

import math

import numpy as np

from bfns import SpectralField


def full_spectrum(u: SpectralField) -> np.ndarray:
    """``(3, n, n, n)`` coefficients of ``u(x) = sum c_k exp(i k.x)``.

    The stored half spectrum is completed with ``c(-k) = conj c(k)`` entry by
    entry.
    """
    n = u.grid.n
    half = np.asarray(u.coeffs)
    full = np.zeros((3, n, n, n), dtype=complex)
    for ix in range(n):
        for iy in range(n):
            for iz in range(half.shape[-1]):
                c = half[:, ix, iy, iz]
                full[:, ix, iy, iz] = c
                if 0 < iz < n - iz:
                    full[:, (-ix) % n, (-iy) % n, n - iz] = np.conj(c)
    return full


def physical_values(u: SpectralField) -> np.ndarray:
    """Collocation values on the native ``n^3`` grid via numpy.fft."""
    n = u.grid.n
    return np.fft.ifftn(full_spectrum(u), axes=(1, 2, 3)).real * n**3


def band_modes(n: int, kc: int):
    r = range(-kc, kc + 1)
    return np.array([(a, b, c) for a in r for b in r for c in r])


def _gather(full, modes, n):
    return full[:, modes[:, 0] % n, modes[:, 1] % n, modes[:, 2] % n].T  # (m, 3)


def _project(k, c):
    k2 = np.sum(k * k, axis=-1, keepdims=True)
    safe = np.where(k2 > 0, k2, 1.0)
    return c - k * np.sum(k * c, axis=-1, keepdims=True) / safe * (k2 > 0)


def _to_dict(modes, vals):
    return {tuple(int(x) for x in m): v for m, v in zip(modes, vals)}


def convective_oracle(u: SpectralField, v: SpectralField) -> dict:
    """Projected ``(u . grad) v`` on the band as ``{k: coeff}``."""
    n, L = u.grid.n, u.grid.L
    kc = n // 3
    modes = band_modes(n, kc)
    U = _gather(full_spectrum(u), modes, n)
    V = _gather(full_spectrum(v), modes, n)
    s = 2 * math.pi / L
    out = {tuple(m): np.zeros(3, complex) for m in modes}
    for p, up in zip(modes, U):
        # sum over q of (u_p . i q) v_q lands on k = p + q
        coef = 1j * (modes * s) @ up
        for q, cq, vq in zip(modes, coef, V):
            k = tuple(int(x) for x in p + q)
            if k in out:
                out[k] = out[k] + cq * vq
    keys = np.array(list(out))
    vals = _project(keys * s, np.array([out[tuple(k)] for k in keys]))
    return _to_dict(keys, vals)


def cubic_oracle(u: SpectralField, a: float = 1.0) -> dict:
    """Projected ``a |u|^2 u`` on the band as ``{k: coeff}``."""
    n, L = u.grid.n, u.grid.L
    kc = n // 3
    modes = band_modes(n, kc)
    U = _gather(full_spectrum(u), modes, n)
    # |u|^2 has wavevectors up to 2 kc
    sq = {}
    for p, up in zip(modes, U):
        dots = U @ up
        for q, d in zip(modes, dots):
            k = tuple(int(x) for x in p + q)
            sq[k] = sq.get(k, 0.0) + d
    out = {tuple(int(x) for x in m): np.zeros(3, complex) for m in modes}
    for s_k, s_v in sq.items():
        for r, ur in zip(modes, U):
            k = (s_k[0] + r[0], s_k[1] + r[1], s_k[2] + r[2])
            if k in out:
                out[k] = out[k] + s_v * ur
    keys = np.array(list(out))
    vals = _project(keys * (2 * math.pi / L), a * np.array([out[tuple(k)] for k in keys]))
    return _to_dict(keys, vals)


def trilinear_oracle(u1: SpectralField, u2: SpectralField, u3: SpectralField) -> float:
    """``int ((u1 . grad) u2) . u3`` as the exponential sum over ``p + q + r = 0``."""
    n, L = u1.grid.n, u1.grid.L
    kc = n // 3
    modes = band_modes(n, kc)
    s = 2 * math.pi / L
    A = _gather(full_spectrum(u1), modes, n)
    B = _gather(full_spectrum(u2), modes, n)
    C = {tuple(m): c for m, c in zip(modes, _gather(full_spectrum(u3), modes, n))}
    total = 0.0 + 0.0j
    for p, ap in zip(modes, A):
        coef = 1j * (modes * s) @ ap
        for q, cq, bq in zip(modes, coef, B):
            r = tuple(int(x) for x in -(p + q))
            if r in C:
                total += cq * np.dot(bq, C[r])
    return float((L**3 * total).real)


def as_dict(u: SpectralField) -> dict:
    """Band coefficients of a package field as ``{k: coeff}``."""
    n = u.grid.n
    modes = band_modes(n, n // 3)
    return _to_dict(modes, _gather(full_spectrum(u), modes, n))


def max_rel_diff(d1: dict, d2: dict) -> float:
    keys = set(d1) | set(d2)
    z = np.zeros(3)
    diff = max(np.max(np.abs(d1.get(k, z) - d2.get(k, z))) for k in keys)
    scale = max(np.max(np.abs(v)) for v in d2.values())
    return float(diff / max(scale, 1e-300))


def grid_l2_sq(u: SpectralField) -> float:
    """``int |u|^2`` by the collocation rule on the native grid (exact below Nyquist)."""
    vals = physical_values(u)
    return float(u.grid.L**3 * np.mean(np.sum(vals**2, axis=0)))


def cubic_root(c: float, h: float, a: float, tol: float = 1e-15) -> float:
    """Root ``s >= 0`` of ``s (1 + h a s^2) = c`` by bisection."""
    lo, hi = 0.0, max(c, 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * (1 + h * a * mid * mid) < c:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)
