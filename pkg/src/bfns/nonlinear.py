"""Convective and Brinkman-Forchheimer nonlinearities, evaluated pseudo-spectrally.

All pointwise products are formed on the 3/2-padded grid, then truncated to
the dealiased band.  Truncation is exact for the quadratic convective term and
for the cubic damping term (alpha = 1); for non-integer ``2 alpha`` it acts as
the Galerkin projection of a non-band-limited function.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import SpectralField

__all__ = [
    "BFParams",
    "trilinear_b",
    "bilinear_B",
    "bf_term",
    "bf_pointwise",
    "bf_monotonicity_gap",
    "bf_lipschitz_ratio",
    "nonlinear_drift",
]


@dataclass(frozen=True)
class BFParams:
    """Damping ``a |u|^{2 alpha} u`` with ``a > 0`` and ``1 <= alpha <= 3/2``."""

    a: float = 1.0
    alpha: float = 1.5

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not 1.0 <= self.alpha <= 1.5:
            raise ValueError(f"alpha must lie in [1, 3/2], got {self.alpha}")


def _same_grid(*fields: SpectralField):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")
    return g


def trilinear_b(u1: SpectralField, u2: SpectralField, u3: SpectralField) -> float:
    """``int ((u1 . grad) u2) . u3 dx`` by quadrature on the padded grid."""
    ops = _same_grid(u1, u2, u3).ops
    p1 = ops.to_padded(u1.coeffs)
    g2 = ops.to_padded(ops.grad(u2.coeffs))  # (i, j, ...) = d_j u2_i
    p3 = ops.to_padded(u3.coeffs)
    conv = np.einsum("j...,ij...->i...", p1, g2)
    return ops.quad(np.sum(conv * p3, axis=0))


def _convective(ops, c_u, c_v, pu=None):
    pu = ops.to_padded(c_u) if pu is None else pu
    gv = ops.to_padded(ops.grad(c_v))
    conv = np.einsum("j...,ij...->i...", pu, gv)
    return ops.project(ops.from_padded(conv))


def bilinear_B(u: SpectralField, v: SpectralField) -> SpectralField:
    """``Pi [(u . grad) v]``, dealiased."""
    grid = _same_grid(u, v)
    return SpectralField(grid, _convective(grid.ops, u.coeffs, v.coeffs))


def bf_pointwise(u: np.ndarray, alpha: float, axis: int = 0) -> np.ndarray:
    """``|u|^{2 alpha} u`` for 3-vectors stored along ``axis``."""
    mag2 = np.sum(u * u, axis=axis, keepdims=True)
    return mag2**alpha * u


def _bf(ops, c, params: BFParams, pu=None):
    pu = ops.to_padded(c) if pu is None else pu
    f = bf_pointwise(pu, params.alpha)
    return params.a * ops.project(ops.from_padded(f))


def bf_term(u: SpectralField, params: BFParams) -> SpectralField:
    """``a Pi (|u|^{2 alpha} u)`` truncated to the band."""
    return SpectralField(u.grid, _bf(u.grid.ops, u.coeffs, params))


_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def nonlinear_drift(ops, c, params: BFParams | None, convection: bool = True):
    """Raw coefficients of ``B(u,u) + a Pi |u|^{2a} u`` sharing one padded transform.

    For divergence-free band-limited ``u`` the convective term is formed as
    ``div(u (x) u)``: the tensor product is alias-free on the padded grid, so
    this equals the convective form to rounding while needing 3 inverse and 9
    forward transforms instead of 12 and 6.

    Also returns ``int |u|^{2 alpha + 2}`` from the same padded values (0 when
    ``params`` is None), which the energy ledger needs.
    """
    pu = ops.to_padded(c)
    prods = []
    lp = 0.0
    if convection:
        prods.extend(pu[i] * pu[j] for i, j in _PAIRS)
    if params is not None:
        mag2 = np.sum(pu * pu, axis=0)
        w = mag2**params.alpha
        prods.extend(w * pu)
        lp = ops.quad(w * mag2)
    if not prods:
        return np.zeros_like(c), lp
    hat = ops.from_padded(np.array(prods))
    out = np.zeros_like(c)
    if convection:
        t = {}
        for m, (i, j) in enumerate(_PAIRS):
            t[i, j] = t[j, i] = hat[m]
        for i in range(3):
            out[i] = 1j * (ops.K[0] * t[i, 0] + ops.K[1] * t[i, 1] + ops.K[2] * t[i, 2])
        hat = hat[6:]
    if params is not None:
        out += params.a * hat
    return ops.project(out), lp


def _as_vec(x):
    return np.asarray(x, dtype=float)


def bf_monotonicity_gap(u_vec, v_vec, alpha: float):
    """``(F(u) - F(v)) . (u - v) / (|u - v|^2 (|u| + |v|)^{2 alpha})`` with ``F(u) = |u|^{2a} u``.

    Vectorised over leading axes (last axis has length 3).  Returns ``inf``
    where ``u == v``.
    """
    u, v = _as_vec(u_vec), _as_vec(v_vec)
    d = u - v
    fu = bf_pointwise(u, alpha, axis=-1)
    fv = bf_pointwise(v, alpha, axis=-1)
    num = np.sum((fu - fv) * d, axis=-1)
    nu_, nv = np.linalg.norm(u, axis=-1), np.linalg.norm(v, axis=-1)
    den = np.sum(d * d, axis=-1) * (nu_ + nv) ** (2 * alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    return r if r.ndim else float(r)


def bf_lipschitz_ratio(u_vec, v_vec, alpha: float):
    """``|F(u) - F(v)| / (|u - v| (|u|^{2a} + |v|^{2a}))``; 0 where ``u == v``."""
    u, v = _as_vec(u_vec), _as_vec(v_vec)
    fu = bf_pointwise(u, alpha, axis=-1)
    fv = bf_pointwise(v, alpha, axis=-1)
    num = np.linalg.norm(fu - fv, axis=-1)
    nu_, nv = np.linalg.norm(u, axis=-1), np.linalg.norm(v, axis=-1)
    den = np.linalg.norm(u - v, axis=-1) * (nu_ ** (2 * alpha) + nv ** (2 * alpha))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return r if r.ndim else float(r)
