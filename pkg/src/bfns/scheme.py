"""Fully implicit Euler scheme for the damped stochastic Navier-Stokes system.

One step solves, on the Galerkin space of the grid,

    u^k - u^{k-1} + h nu A u^k + h B(u^k, u^k) + h a Pi |u^k|^{2 alpha} u^k
        = G(u^{k-1}) Delta_k W

by Picard iteration with the Stokes part inverted exactly mode by mode.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .noise import DiffusionSpec, NoiseOperator, NoisePath
from .nonlinear import BFParams, nonlinear_drift
from .torus import SpectralField, TorusGrid

__all__ = [
    "SolverParams",
    "SchemeParams",
    "StepLedger",
    "Trajectory",
    "SolverDiverged",
    "implicit_step",
    "step_residual",
    "run_trajectory",
    "galerkin_project",
    "galerkin_dimension",
    "write_ledger_csv",
]


class SolverDiverged(RuntimeError):
    def __init__(self, msg: str, step: int | None = None, residual: float | None = None,
                 context: dict | None = None):
        super().__init__(msg)
        self.step = step
        self.residual = residual
        self.context = dict(context or {})

    def __str__(self):
        parts = [super().__str__()]
        if self.step is not None:
            parts.append(f"step={self.step}")
        if self.residual is not None:
            parts.append(f"residual={self.residual:.3e}")
        parts.extend(f"{k}={v}" for k, v in self.context.items())
        return ", ".join(parts)


@dataclass(frozen=True)
class SolverParams:
    method: str = "picard"
    tol: float = 1e-10
    max_iters: int = 100
    damping: float = 1.0
    stall_iters: int = 20
    blowup: float = 1e6

    METHODS = ("picard", "newton-picard-hybrid")

    def __post_init__(self):
        if self.method not in self.METHODS:
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class SchemeParams:
    """Physical and numerical parameters of one trajectory.

    ``convection`` and ``damping_term`` switch off ``B`` or the
    Brinkman-Forchheimer term; they exist only for oracle tests.
    """

    nu: float
    bf: BFParams
    T: float
    N: int
    grid: TorusGrid
    solver: SolverParams = field(default_factory=SolverParams)
    convection: bool = True
    damping_term: bool = True

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.T > 0 or int(self.N) != self.N or self.N < 1:
            raise ValueError("need T > 0 and an integer N >= 1")
        if self.bf.alpha == 1 and not 4 * self.nu * self.bf.a > 1:
            raise ValueError(f"alpha = 1 requires 4 nu a > 1 (got {4 * self.nu * self.bf.a})")

    @property
    def h(self) -> float:
        return self.T / self.N

    def with_steps(self, N: int) -> "SchemeParams":
        return replace(self, N=int(N))


@dataclass(frozen=True)
class StepLedger:
    k: int
    t: float
    kinetic: float
    dissipation: float
    bf_dissipation: float
    jump: float
    noise_work: float
    residual_norm: float
    picard_iters: int
    kinetic_prev: float = 0.0

    @property
    def energy_defect(self) -> float:
        """Discrete energy identity remainder; zero for an exact solve."""
        return (
            self.kinetic - self.kinetic_prev + self.jump + self.dissipation
            + self.bf_dissipation - self.noise_work
        )


def _resolvent(params: SchemeParams) -> np.ndarray:
    return 1.0 / (1.0 + params.h * params.nu * params.grid.ops.k2)


def _drift(params: SchemeParams, c: np.ndarray):
    bf = params.bf if params.damping_term else None
    return nonlinear_drift(params.grid.ops, c, bf, params.convection)


def _residual_raw(params, c, c_prev, f, drift):
    h = params.h
    ops = params.grid.ops
    return (1.0 + h * params.nu * ops.k2) * c - c_prev + h * drift - f


def step_residual(u_k: SpectralField, u_prev: SpectralField, noise_term: SpectralField,
                  params: SchemeParams) -> float:
    """L^2 norm of the one-step equation evaluated at ``u_k``."""
    d, _ = _drift(params, u_k.coeffs)
    r = _residual_raw(params, u_k.coeffs, u_prev.coeffs, noise_term.coeffs, d)
    return math.sqrt(params.grid.ops.sq(r))


def _newton_solve(params, c0, c_prev, f, res_fn, tol_abs, max_newton=20):
    """Jacobian-free Newton-Krylov with the Stokes resolvent as preconditioner."""
    ops = params.grid.ops
    shape = c0.shape
    R = _resolvent(params)
    flat_real = lambda z: np.concatenate([z.real.ravel(), z.imag.ravel()])
    n = c0.size

    def unflat(x):
        return (x[:n] + 1j * x[n:]).reshape(shape)

    c = c0
    r, _ = res_fn(c)
    evals = 0
    for _ in range(max_newton):
        rn = math.sqrt(ops.sq(r))
        if rn <= tol_abs(c):
            return c, rn, evals
        scale = max(1e-30, math.sqrt(ops.sq(c)))
        eps = 1e-7 * (1.0 + scale)

        def jv(x):
            nonlocal evals
            z = unflat(x) * R  # right preconditioning
            znorm = math.sqrt(ops.sq(z)) or 1.0
            rp, _ = res_fn(c + (eps / znorm) * z)
            evals += 1
            return flat_real((rp - r) * (znorm / eps))

        A = LinearOperator((2 * n, 2 * n), matvec=jv, dtype=float)
        x, _info = gmres(A, -flat_real(r), rtol=1e-3, restart=30, maxiter=2)
        c = ops.project(c + unflat(x) * R)
        r, _ = res_fn(c)
        evals += 1
    return c, math.sqrt(ops.sq(r)), evals


def _solve(params: SchemeParams, c_prev: np.ndarray, f: np.ndarray, k: int = 0):
    """Return ``(c, drift_lp, residual_norm, iterations)`` for one implicit step."""
    ops = params.grid.ops
    sp = params.solver
    h = params.h
    R = _resolvent(params)
    rhs = c_prev + f
    prev_norm = math.sqrt(ops.sq(c_prev))
    limit = sp.blowup * (1.0 + prev_norm)

    def tol_abs(c):
        return sp.tol * (1.0 + math.sqrt(ops.sq(c)))

    def res_fn(c):
        d, lp = _drift(params, c)
        return _residual_raw(params, c, c_prev, f, d), (d, lp)

    c = c_prev.copy()
    d, lp = _drift(params, c)
    omega = sp.damping
    best = math.inf
    since_best = 0
    rn = math.inf
    for it in range(1, sp.max_iters + 1):
        new = R * (rhs - h * d)
        c = new if omega == 1.0 else (1.0 - omega) * c + omega * new
        cn = math.sqrt(ops.sq(c))
        if not math.isfinite(cn) or cn > limit:
            if omega > 0.5:
                # restart from u_prev with the damped map
                omega, best, since_best = 0.5, math.inf, 0
                c = c_prev.copy()
                d, lp = _drift(params, c)
                continue
            raise SolverDiverged("iterate blew up", step=k, residual=rn)
        d, lp = _drift(params, c)
        r = _residual_raw(params, c, c_prev, f, d)
        rn = math.sqrt(ops.sq(r))
        if rn <= tol_abs(c):
            return c, lp, rn, it
        if rn < 0.9 * best:
            best, since_best = rn, 0
        else:
            since_best += 1
        if since_best >= sp.stall_iters:
            if sp.method == "newton-picard-hybrid":
                c, rn, evals = _newton_solve(params, c, c_prev, f, res_fn, tol_abs)
                _, lp = _drift(params, c)
                if rn <= tol_abs(c):
                    return c, lp, rn, it + evals
                raise SolverDiverged("Newton fallback failed", step=k, residual=rn)
            if omega > 0.5:
                omega = 0.5
                since_best = 0
            else:
                break
    if sp.method == "newton-picard-hybrid":
        c, rn, evals = _newton_solve(params, c, c_prev, f, res_fn, tol_abs)
        _, lp = _drift(params, c)
        if rn <= tol_abs(c):
            return c, lp, rn, sp.max_iters + evals
    raise SolverDiverged("Picard iteration did not converge", step=k, residual=rn)


def _ledger(params, k, c, c_prev, f, lp, rn, iters) -> StepLedger:
    ops = params.grid.ops
    h = params.h
    a = params.bf.a if params.damping_term else 0.0
    return StepLedger(
        k=k,
        t=k * h,
        kinetic=0.5 * ops.sq(c),
        dissipation=h * params.nu * ops.grad_sq(c),
        bf_dissipation=h * a * lp,
        jump=0.5 * ops.sq(c - c_prev),
        noise_work=ops.inner(f, c),
        residual_norm=rn,
        picard_iters=iters,
        kinetic_prev=0.5 * ops.sq(c_prev),
    )


def implicit_step(u_prev: SpectralField, noise_term: SpectralField, params: SchemeParams,
                  k: int = 1) -> tuple[SpectralField, StepLedger]:
    """Advance one step; ``noise_term`` is ``G(u_prev) Delta_k W``."""
    if u_prev.grid != params.grid or noise_term.grid != params.grid:
        raise ValueError("fields and params use different grids")
    c, lp, rn, iters = _solve(params, u_prev.coeffs, noise_term.coeffs, k)
    led = _ledger(params, k, c, u_prev.coeffs, noise_term.coeffs, lp, rn, iters)
    return SpectralField(params.grid, c), led


@dataclass
class Trajectory:
    """States kept per ``record`` policy plus one ledger per step and summary statistics."""

    times: list
    indices: list
    states: list
    ledgers: list
    stats: dict


def _record_set(record, N: int) -> set:
    if record == "all":
        return set(range(N + 1))
    if record == "endpoints":
        return {0, N}
    if isinstance(record, tuple) and record and record[0] == "stride":
        s = int(record[1])
        return set(range(0, N + 1, s)) | {N}
    if isinstance(record, int):
        return set(range(0, N + 1, record)) | {N}
    raise ValueError(f"bad record policy {record!r}")


def run_trajectory(u0: SpectralField, path: NoisePath | None, spec: DiffusionSpec | None,
                   params: SchemeParams, record="endpoints",
                   noise_op: NoiseOperator | None = None,
                   moments: bool = True) -> Trajectory:
    """Iterate the scheme over ``params.N`` steps driven by ``path``.

    ``path=None`` (or ``spec=None``) runs the deterministic drift.  ``record``
    is ``"all"``, ``"endpoints"`` or ``("stride", s)``.  ``moments=False``
    skips the ``|| |u|^alpha grad u ||`` statistic, which costs a dozen extra
    transforms per step.
    """
    grid = params.grid
    ops = grid.ops
    N = params.N
    if path is not None and path.N != N:
        raise ValueError(f"path has {path.N} steps, params expect {N}")
    noisy = path is not None and spec is not None
    if noisy and noise_op is None:
        noise_op = NoiseOperator(spec, grid)
    keep = _record_set(record, N)
    times, indices, states, ledgers = [], [], [], []
    c = np.array(u0.coeffs)
    if 0 in keep:
        times.append(0.0)
        indices.append(0)
        states.append(u0)
    zero = np.zeros_like(c)
    max_v2 = ops.sq(c) + ops.grad_sq(c)
    sum_A = sum_lp = sum_grad_weighted = 0.0
    h = params.h
    bf = params.bf
    for k in range(1, N + 1):
        f = noise_op.raw(c, path.increments[k - 1]) if noisy else zero
        try:
            cn, lp, rn, iters = _solve(params, c, f, k)
        except SolverDiverged as exc:
            exc.context.setdefault("t", k * h)
            raise
        ledgers.append(_ledger(params, k, cn, c, f, lp, rn, iters))
        c = cn
        max_v2 = max(max_v2, ops.sq(c) + ops.grad_sq(c))
        sum_A += ops.sq(c * ops.k2)
        sum_lp += lp
        if moments:
            sum_grad_weighted += _weighted_grad_sq(ops, c, bf.alpha)
        if k in keep:
            times.append(k * h)
            indices.append(k)
            states.append(SpectralField(grid, c))
    stats = {
        "max_v_norm_sq": max_v2,
        "h_sum_Au_sq": h * sum_A,
        "h_sum_lp": h * sum_lp,
        "h_sum_weighted_grad_sq": h * sum_grad_weighted if moments else math.nan,
        "max_picard_iters": max((l.picard_iters for l in ledgers), default=0),
        "total_picard_iters": sum(l.picard_iters for l in ledgers),
    }
    return Trajectory(times, indices, states, ledgers, stats)


def _weighted_grad_sq(ops, c, alpha) -> float:
    """``|| |u|^alpha grad u ||^2`` by padded quadrature."""
    pu = ops.to_padded(c)
    gu = ops.to_padded(ops.grad(c))
    w = np.sum(pu * pu, axis=0) ** alpha
    return ops.quad(w * np.sum(gu * gu, axis=(0, 1)))


# Galerkin truncation --------------------------------------------------------------

def _class_order(grid: TorusGrid) -> np.ndarray:
    """Rank of each half-spectrum entry's wavevector class ``{k, -k}``; -1 outside band."""
    ops = grid.ops
    kx, ky, kz = ops.kidx
    k2 = kx**2 + ky**2 + kz**2
    # canonical representative of {k, -k}
    flip = (kz == 0) & ((ky < 0) | ((ky == 0) & (kx < 0)))
    cx, cy = np.where(flip, -kx, kx), np.where(flip, -ky, ky)
    band = ops.band
    keys = sorted({(int(a), int(b), int(c), int(d)) for a, b, c, d in
                   zip(k2[band], cx[band], cy[band], kz[band])})
    rank = {key: i for i, key in enumerate(keys)}
    out = -np.ones(k2.shape, dtype=int)
    for pos in zip(*np.nonzero(band)):
        out[pos] = rank[(int(k2[pos]), int(cx[pos]), int(cy[pos]), int(kz[pos]))]
    return out


_CLASS_CACHE: dict = {}


def _classes(grid: TorusGrid) -> np.ndarray:
    key = (grid.n, grid.L)
    if key not in _CLASS_CACHE:
        _CLASS_CACHE[key] = _class_order(grid)
    return _CLASS_CACHE[key]


def galerkin_dimension(grid: TorusGrid) -> int:
    """Number of wavevector classes ``{k, -k}`` in the band (the mean mode counts as one)."""
    return int(_classes(grid).max()) + 1


def galerkin_project(u: SpectralField, m: int) -> SpectralField:
    """Keep the ``m`` lowest wavevector classes ``{k, -k}``, ordered by ``|k|``.

    Class 0 is the mean mode, so ``m = 0`` gives the zero field.
    """
    full = galerkin_dimension(u.grid)
    if not 0 <= m <= full:
        raise ValueError(f"m must lie in [0, {full}], got {m}")
    mask = (_classes(u.grid) >= 0) & (_classes(u.grid) < m)
    return SpectralField(u.grid, u.coeffs * mask)


# ledger CSV ----------------------------------------------------------------------

LEDGER_COLUMNS = ["k", "t_k", "kinetic", "dissipation", "bf_dissipation", "jump",
                  "noise_work", "residual_norm", "picard_iters"]


def write_ledger_csv(ledgers: Iterable[StepLedger], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for l in ledgers:
            w.writerow([l.k, repr(l.t), repr(l.kinetic), repr(l.dissipation),
                        repr(l.bf_dissipation), repr(l.jump), repr(l.noise_work),
                        repr(l.residual_norm), l.picard_iters])
