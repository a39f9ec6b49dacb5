"""Empirical constants for the functional inequalities the scheme relies on.

Each audit samples fields (or vector pairs), evaluates the ratio
``lhs / rhs`` and keeps the worst case.  Samples are drawn in fixed-size
chunks with per-chunk keyed seeds, so a larger sample set always contains a
smaller one and the reported constants move monotonically with ``samples``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .nonlinear import BFParams, bf_lipschitz_ratio, bf_monotonicity_gap, bilinear_B, bf_term
from .torus import SpectralField, TorusGrid, lp_norm, random_field, stokes_pow

__all__ = [
    "AuditReport",
    "audit_gagliardo_nirenberg",
    "audit_fractional_bilinear",
    "audit_fractional_bf",
    "audit_pointwise",
    "audit_rows",
    "write_audit_csv",
    "AUDIT_COLUMNS",
]

AUDIT_COLUMNS = ["inequality_id", "alpha", "delta", "samples", "constant", "seed"]


@dataclass(frozen=True)
class AuditReport:
    """Worst-case ratio of one inequality over a seeded sample set.

    ``worst`` is ``(seed, index)`` of the sample attaining ``constant``;
    ``sense`` is ``"sup"`` for upper bounds and ``"inf"`` for lower bounds.
    """

    inequality_id: str
    samples: int
    constant: float
    worst: tuple | None
    seed: int
    alpha: float | None = None
    delta: float | None = None
    sense: str = "sup"
    ratios: np.ndarray | None = field(default=None, repr=False, compare=False)


class _Tracker:
    def __init__(self, sense="sup"):
        self.sense = sense
        self.best = -math.inf if sense == "sup" else math.inf
        self.where = None
        self.values = []

    def add(self, r: float, where):
        self.values.append(r)
        better = r > self.best if self.sense == "sup" else r < self.best
        if better:
            self.best, self.where = r, where

    def report(self, ineq, seed, alpha=None, delta=None) -> AuditReport:
        return AuditReport(ineq, len(self.values), float(self.best), self.where, seed,
                           alpha, delta, self.sense, np.array(self.values))


def _ratio(num: float, den: float) -> float:
    # 0/0 is the zero-field convention
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def _sample_fields(grid: TorusGrid, samples: int, seed: int, decay: float,
                   fields: Sequence[SpectralField] | None):
    if fields is not None:
        for i, u in enumerate(fields):
            yield i, u
        return
    for i in range(samples):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        yield i, random_field(grid, np.random.default_rng(ss), decay=decay, l2=1.0)


def _l2(u: SpectralField) -> float:
    return math.sqrt(u.grid.ops.sq(u.coeffs))


def _grad(u: SpectralField) -> float:
    return math.sqrt(u.grid.ops.grad_sq(u.coeffs))


def _v(u: SpectralField) -> float:
    """Full ``W^{1,2}`` norm."""
    return math.hypot(_l2(u), _grad(u))


def _a_norm(u: SpectralField) -> float:
    return _l2(stokes_pow(u, 1.0))


def audit_gagliardo_nirenberg(samples: int = 100, seed: int = 0, grid: TorusGrid | None = None,
                              decay: float = 2.0, fields=None) -> tuple[AuditReport, AuditReport]:
    """``|u|_L4 <= C |u|^1/4 |grad u|^3/4`` and ``|u|_L3 <= C |u|^1/2 |grad u|^1/2``."""
    grid = grid or TorusGrid(16)
    if fields is None and samples < 100:
        raise ValueError("at least 100 samples are required")
    t4, t3 = _Tracker(), _Tracker()
    for i, u in _sample_fields(grid, samples, seed, decay, fields):
        a, g = _l2(u), _grad(u)
        t4.add(_ratio(lp_norm(u, 4), a**0.25 * g**0.75), (seed, i))
        t3.add(_ratio(lp_norm(u, 3), a**0.5 * g**0.5), (seed, i))
    return t4.report("gn_l4", seed), t3.report("gn_l3", seed)


def fractional_bilinear_ratios(u: SpectralField, deltas: Iterable[float] = ()) -> dict:
    """``|A^-1/4 B(u,u)| / |A^1/2 u|^2`` and the interpolated variants keyed by delta."""
    lhs = _l2(stokes_pow(bilinear_B(u, u), -0.25))
    g = _grad(u)
    out = {None: _ratio(lhs, g * g)}
    au, v = _a_norm(u), _v(u)
    for d in deltas:
        out[d] = _ratio(lhs, au ** (0.75 - d) * v ** (1.25 + d))
    return out


def _mean_free(u: SpectralField) -> SpectralField:
    c = u.coeffs.copy()
    c[:, 0, 0, 0] = 0.0
    return SpectralField(u.grid, c)


def fractional_bf_ratios(u: SpectralField, alpha: float, deltas: Iterable[float] = ()) -> dict:
    """``|A^-1/4 Pi |u|^2a u| / |u|_V^{2a+1}`` and the interpolated variants (full V norm).

    The mean of ``|u|^{2a} u`` is removed before the negative power is taken.
    """
    f = _mean_free(bf_term(u, BFParams(1.0, alpha)))
    lhs = _l2(stokes_pow(f, -0.25))
    v = _v(u)
    out = {None: _ratio(lhs, v ** (2 * alpha + 1))}
    au = _a_norm(u)
    for d in deltas:
        out[d] = _ratio(lhs, au ** (0.75 - d) * v ** (2 * alpha + 0.25 + d))
    return out


def _audit_fractional(name, fn, samples, seed, grid, decay, fields, deltas, alpha=None):
    deltas = tuple(deltas)
    for d in deltas:
        if not 0 < d < 0.75:
            raise ValueError(f"delta must lie in (0, 3/4), got {d}")
    trackers = {d: _Tracker() for d in (None,) + deltas}
    for i, u in _sample_fields(grid, samples, seed, decay, fields):
        for d, r in fn(u, deltas).items():
            trackers[d].add(r, (seed, i))
    return [trackers[d].report(name if d is None else f"{name}_delta", seed, alpha, d)
            for d in (None,) + deltas]


def audit_fractional_bilinear(samples: int = 100, seed: int = 0, grid: TorusGrid | None = None,
                              deltas=(0.25,), decay: float = 2.0, fields=None) -> list[AuditReport]:
    """Negative-order bound on the convective term; first report is the plain ratio."""
    return _audit_fractional("frac_bilinear", fractional_bilinear_ratios, samples, seed,
                             grid or TorusGrid(16), decay, fields, deltas)


def audit_fractional_bf(samples: int = 100, seed: int = 0, grid: TorusGrid | None = None,
                        alpha: float = 1.5, deltas=(0.25,), decay: float = 2.0,
                        fields=None) -> list[AuditReport]:
    """Negative-order bound on the damping term; first report is the plain ratio."""
    BFParams(1.0, alpha)
    return _audit_fractional("frac_bf", lambda u, ds: fractional_bf_ratios(u, alpha, ds), samples,
                             seed, grid or TorusGrid(16), decay, fields, deltas, alpha)


_CHUNK = 65536


def _uniform_ball(rng, m):
    d = rng.standard_normal((m, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.random((m, 1))


def audit_pointwise(alpha: float, samples: int = 1_000_000, seed: int = 0
                    ) -> tuple[AuditReport, AuditReport]:
    """Lipschitz constant (sup) and monotonicity constant (inf) of ``|u|^2a u``.

    Pairs have uniform directions and radii uniform on ``[0, 1]``; both
    ratios are invariant under joint scaling so this covers all of R^3.
    Returns ``(lipschitz, monotone)``.
    """
    BFParams(1.0, alpha)
    lip, mono = _Tracker("sup"), _Tracker("inf")
    lip_vals, mono_vals = [], []
    done = 0
    chunk = 0
    while done < samples:
        m = min(_CHUNK, samples - done)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chunk,)))
        # draw a full chunk so prefixes agree for any sample count
        u, v = _uniform_ball(rng, _CHUNK)[:m], _uniform_ball(rng, _CHUNK)[:m]
        rl = bf_lipschitz_ratio(u, v, alpha)
        rm = bf_monotonicity_gap(u, v, alpha)
        il, im = int(np.argmax(rl)), int(np.argmin(rm))
        if rl[il] > lip.best:
            lip.best, lip.where = float(rl[il]), (seed, done + il)
        if rm[im] < mono.best:
            mono.best, mono.where = float(rm[im]), (seed, done + im)
        lip_vals.append(rl)
        mono_vals.append(rm)
        done += m
        chunk += 1
    lip.values = np.concatenate(lip_vals)
    mono.values = np.concatenate(mono_vals)
    return (AuditReport("bf_lipschitz", samples, lip.best, lip.where, seed, alpha, None, "sup"),
            AuditReport("bf_monotone", samples, mono.best, mono.where, seed, alpha, None, "inf"))


def audit_rows(reports: Iterable[AuditReport]) -> list[list]:
    return [[r.inequality_id, "" if r.alpha is None else repr(float(r.alpha)),
             "" if r.delta is None else repr(float(r.delta)), r.samples, repr(float(r.constant)),
             r.seed] for r in reports]


def write_audit_csv(reports: Iterable[AuditReport], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AUDIT_COLUMNS)
    w.writerows(audit_rows(reports))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def scale_check(ratio: Callable[[SpectralField], float], u: SpectralField,
                scales=(1.0, 2.0, 10.0)) -> float:
    """Largest relative change of ``ratio(c u)`` over ``scales``; zero for homogeneous forms."""
    base = ratio(u * scales[0])
    return max(abs(ratio(u * c) - base) / max(abs(base), 1e-300) for c in scales[1:])
