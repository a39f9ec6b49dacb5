"""Q-Wiener increments with exact dyadic refinement, and diffusion coefficients G.

The noise lives on finitely many real divergence-free Fourier modes
``zeta_j`` (orthonormal in L^2), with covariance eigenvalues ``q_j``.

Paths are built top-down: level 0 is a single increment over ``[0, T]`` and
each refinement splits every interval by Brownian-bridge midpoint sampling.
Normal deviates for level ``l`` come from a Philox generator keyed by
``(seed, l)``, so any dyadic level is a pure function of the seed.  Values are
rounded to a fixed dyadic lattice before splitting, which makes
``left + right == parent`` exact in floating point at every level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .torus import SpectralField, TorusGrid

__all__ = [
    "NoiseMode",
    "QSpec",
    "NoisePath",
    "DiffusionSpec",
    "IncompatibleSpec",
    "ConditionGReport",
    "noise_modes",
    "sample_path",
    "refine",
    "coarsen",
    "apply_G",
    "audit_condition_G",
    "sample_seed",
]


class IncompatibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class NoiseMode:
    """Real basis field ``sqrt(2/L^3) e_pol(k) cos(k.x)`` (or ``sin``)."""

    k: tuple[int, int, int]
    pol: int
    kind: str  # "cos" | "sin"

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ValueError(f"kind must be 'cos' or 'sin', got {self.kind!r}")
        if self.pol not in (0, 1):
            raise ValueError(f"pol must be 0 or 1, got {self.pol}")
        if tuple(self.k) == (0, 0, 0):
            raise ValueError("the mean mode is not a noise mode")

    def polarization(self) -> np.ndarray:
        k = np.asarray(self.k, dtype=float)
        khat = k / np.linalg.norm(k)
        # fixed reference axis: the coordinate axis least aligned with k
        ref = np.zeros(3)
        ref[int(np.argmin(np.abs(khat)))] = 1.0
        e1 = np.cross(khat, ref)
        e1 /= np.linalg.norm(e1)
        return e1 if self.pol == 0 else np.cross(khat, e1)


def _canonical(k) -> bool:
    kx, ky, kz = k
    return kz > 0 or (kz == 0 and (ky > 0 or (ky == 0 and kx > 0)))


def noise_modes(kmax: int, count: int | None = None) -> list[NoiseMode]:
    """Modes with ``|k_i| <= kmax`` ordered by ``|k|^2`` then lexicographically."""
    ks = [
        (kx, ky, kz)
        for kx in range(-kmax, kmax + 1)
        for ky in range(-kmax, kmax + 1)
        for kz in range(0, kmax + 1)
        if _canonical((kx, ky, kz))
    ]
    ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2 + k[2] ** 2, k))
    modes = [NoiseMode(k, p, kind) for k in ks for p in (0, 1) for kind in ("cos", "sin")]
    return modes if count is None else modes[:count]


@dataclass(frozen=True, eq=False)
class QSpec:
    """Covariance ``Q`` diagonal on ``modes`` with eigenvalues ``q``."""

    modes: tuple[NoiseMode, ...]
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).copy()
        if q.shape != (len(self.modes),):
            raise ValueError("need one eigenvalue per mode")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("eigenvalues must be finite and nonnegative")
        q.flags.writeable = False
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "q", q)

    @property
    def trace(self) -> float:
        return float(np.sum(self.q))

    def __len__(self):
        return len(self.modes)

    @classmethod
    def power_law(
        cls, n_modes: int, gamma: float, amplitude: float = 1.0, kmax: int | None = None
    ) -> "QSpec":
        """``q_j = amplitude |k_j|^-gamma`` on the ``n_modes`` lowest modes."""
        if kmax is None:
            kmax = 1
            while len(noise_modes(kmax)) < n_modes:
                kmax += 1
        modes = noise_modes(kmax, n_modes)
        if len(modes) < n_modes:
            raise ValueError(f"only {len(modes)} modes with |k_i| <= {kmax}")
        q = [amplitude * float(np.dot(m.k, m.k)) ** (-gamma / 2) for m in modes]
        return cls(tuple(modes), np.array(q))

    def kmax(self) -> int:
        return max(max(abs(x) for x in m.k) for m in self.modes) if self.modes else 0

    def basis(self, grid: TorusGrid) -> "_ModeBasis":
        return _ModeBasis(grid, self.modes)


class _ModeBasis:
    """Sparse coefficient representation of the ``zeta_j`` on a grid."""

    def __init__(self, grid: TorusGrid, modes: Sequence[NoiseMode]):
        ops = grid.ops
        n = grid.n
        kc = grid.dealias_cutoff
        idx, mode_id, vecs, lam = [], [], [], []
        amp = math.sqrt(2.0 / grid.volume)
        for j, m in enumerate(modes):
            if any(abs(x) > kc for x in m.k):
                raise IncompatibleSpec(f"noise mode {m.k} outside the band |k_i| <= {kc}")
            e = m.polarization() * amp
            # cos(k.x) = (e^{ikx} + e^{-ikx})/2 ; sin(k.x) = (e^{ikx} - e^{-ikx})/(2i)
            a = e / 2 if m.kind == "cos" else e / 2j
            for sign, vec in ((1, a), (-1, np.conj(a))):
                kx, ky, kz = (sign * x for x in m.k)
                if kz < 0:
                    continue
                idx.append(np.ravel_multi_index((kx % n, ky % n, kz), (n, n, n // 2 + 1)))
                mode_id.append(j)
                vecs.append(vec)
            lam.append(float(np.sum((np.asarray(m.k) * 2 * np.pi / grid.L) ** 2)))
        self.grid = grid
        self.m = len(modes)
        self.idx = np.array(idx, dtype=np.intp)
        self.mode_id = np.array(mode_id, dtype=np.intp)
        self.vecs = np.array(vecs, dtype=complex).reshape(-1, 3)
        self.weights = ops.weights.ravel()[self.idx]
        self.eigen = np.array(lam)  # Stokes eigenvalue of each mode

    def synthesize(self, coords: np.ndarray) -> np.ndarray:
        """Coefficients of ``sum_j coords_j zeta_j``."""
        g = self.grid
        flat = np.zeros((3, g.n * g.n * (g.n // 2 + 1)), dtype=complex)
        contrib = self.vecs * np.asarray(coords)[self.mode_id][:, None]
        for i in range(3):
            np.add.at(flat[i], self.idx, contrib[:, i])
        return flat.reshape(g.shape)

    def analyze(self, c: np.ndarray) -> np.ndarray:
        """Coordinates ``(u, zeta_j)``."""
        flat = c.reshape(3, -1)[:, self.idx].T
        vals = np.sum((flat * np.conj(self.vecs)).real, axis=1) * self.weights
        out = np.zeros(self.m)
        np.add.at(out, self.mode_id, vals)
        return out * self.grid.volume


# ---------------------------------------------------------------------------------
# paths


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def sample_seed(base_seed: int, sample_index: int) -> int:
    """Per-sample seed ``base_seed xor splitmix64(sample_index)``."""
    return (int(base_seed) ^ _splitmix64(int(sample_index))) & 0xFFFFFFFFFFFFFFFF


def _normals(seed: int, level: int, shape) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(level),))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(shape)


def _quantum(q: np.ndarray, T: float) -> float:
    # lattice spacing 2^-44 relative to the largest standard deviation over [0, T];
    # sums stay exact while |increment| < 2^9 of that deviation
    s = math.sqrt(float(np.max(q)) * T) if q.size and np.max(q) > 0 else 1.0
    return math.ldexp(1.0, math.floor(math.log2(s)) - 44)


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Increments ``Delta_k W`` (rows) in mode coordinates (columns)."""

    qspec: QSpec
    T: float
    seed: int
    increments: np.ndarray
    quantum: float

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != len(self.qspec):
            raise ValueError("increments must have shape (N, n_modes)")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @property
    def N(self) -> int:
        return self.increments.shape[0]

    @property
    def level(self) -> int:
        return self.N.bit_length() - 1

    @property
    def h(self) -> float:
        return self.T / self.N

    def values(self) -> np.ndarray:
        """``W(t_k)`` for ``k = 0..N``."""
        return np.vstack([np.zeros(len(self.qspec)), np.cumsum(self.increments, axis=0)])


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def refine(path: NoisePath) -> NoisePath:
    """Split every step at its midpoint by Brownian-bridge sampling (N -> 2N)."""
    q = path.qspec.q
    eps = path.quantum
    N = path.N
    h = path.T / N
    z = _normals(path.seed, path.level + 1, (N, len(q)))
    parent = path.increments
    left = np.round((0.5 * parent + np.sqrt(q * h / 4.0) * z) / eps) * eps
    right = parent - left
    out = np.empty((2 * N, len(q)))
    out[0::2] = left
    out[1::2] = right
    return NoisePath(path.qspec, path.T, path.seed, out, eps)


def coarsen(path: NoisePath) -> NoisePath:
    """Pairwise sums of consecutive increments (2N -> N)."""
    if path.N % 2:
        raise ValueError("cannot coarsen an odd number of steps")
    inc = path.increments
    return NoisePath(path.qspec, path.T, path.seed, inc[0::2] + inc[1::2], path.quantum)


def sample_path(q: QSpec, T: float, N: int, seed: int) -> NoisePath:
    """Level-``log2 N`` path; deterministic in ``(q, T, N, seed)``."""
    if not _is_pow2(int(N)):
        raise ValueError(f"N must be a power of two, got {N}")
    if not T > 0:
        raise ValueError("T must be positive")
    eps = _quantum(q.q, T)
    z = _normals(seed, 0, (1, len(q)))
    base = np.round(np.sqrt(q.q * T) * z / eps) * eps
    path = NoisePath(q, float(T), int(seed), base, eps)
    while path.N < N:
        path = refine(path)
    return path


# ---------------------------------------------------------------------------------
# diffusion coefficients


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Built-in diffusion coefficients ``G : H -> L(K; H)``.

    ``additive``
        ``G(u) xi = sum_j phi_j xi_j zeta_j`` with fixed gains ``phi``.
    ``scalar-linear``
        ``G(u) xi = sigma (w . xi) u``: the field is multiplied by the scalar
        Brownian motion ``w . W``.
    ``diagonal-nemytskii``
        ``G(u) xi = sum_j g((u, zeta_j)) xi_j zeta_j`` with
        ``g(x) = sigma0 + sigma1 tanh(x)``.
    """

    kind: str
    qspec: QSpec
    phi: np.ndarray | None = None
    sigma: float = 0.0
    weights: np.ndarray | None = None
    sigma0: float = 0.0
    sigma1: float = 0.0

    KINDS = ("additive", "scalar-linear", "diagonal-nemytskii")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown diffusion kind {self.kind!r}")
        m = len(self.qspec)
        if self.kind == "additive":
            phi = np.ones(m) if self.phi is None else np.asarray(self.phi, dtype=float)
            if phi.shape != (m,):
                raise IncompatibleSpec("phi must have one gain per noise mode")
            object.__setattr__(self, "phi", phi)
        if self.kind == "scalar-linear":
            w = np.full(m, 1.0 / math.sqrt(m)) if self.weights is None else np.asarray(
                self.weights, dtype=float
            )
            if w.shape != (m,):
                raise IncompatibleSpec("weights must have one entry per noise mode")
            object.__setattr__(self, "weights", w)

    @classmethod
    def additive(cls, qspec: QSpec, phi=None) -> "DiffusionSpec":
        return cls("additive", qspec, phi=phi)

    @classmethod
    def scalar_linear(cls, qspec: QSpec, sigma: float, weights=None) -> "DiffusionSpec":
        return cls("scalar-linear", qspec, sigma=float(sigma), weights=weights)

    @classmethod
    def diagonal(cls, qspec: QSpec, sigma0: float, sigma1: float) -> "DiffusionSpec":
        return cls("diagonal-nemytskii", qspec, sigma0=float(sigma0), sigma1=float(sigma1))

    def declared_constants(self, grid: TorusGrid) -> dict:
        """Closed-form ``K0, K1, L, K0~, K1~`` (operator norms into H and V)."""
        lam_max = float(np.max(self.qspec.basis(grid).eigen)) if len(self.qspec) else 0.0
        if self.kind == "additive":
            lam = self.qspec.basis(grid).eigen
            return {
                "K0": float(np.max(self.phi**2)),
                "K1": 0.0,
                "L": 0.0,
                "K0_V": float(np.max(self.phi**2 * (1.0 + lam))),
                "K1_V": 0.0,
            }
        if self.kind == "scalar-linear":
            s2 = self.sigma**2 * float(np.dot(self.weights, self.weights))
            return {"K0": 0.0, "K1": s2, "L": s2, "K0_V": 0.0, "K1_V": s2}
        bound = (abs(self.sigma0) + abs(self.sigma1)) ** 2
        return {
            "K0": bound,
            "K1": 0.0,
            "L": self.sigma1**2,
            "K0_V": bound * (1.0 + lam_max),
            "K1_V": 0.0,
        }


def _apply_raw(spec: DiffusionSpec, basis: _ModeBasis, c: np.ndarray, dW: np.ndarray):
    if spec.kind == "additive":
        return basis.synthesize(spec.phi * dW)
    if spec.kind == "scalar-linear":
        return spec.sigma * float(np.dot(spec.weights, dW)) * c
    coords = basis.analyze(c)
    gain = spec.sigma0 + spec.sigma1 * np.tanh(coords)
    return basis.synthesize(gain * dW)


class NoiseOperator:
    """``G`` bound to a grid, with the mode basis precomputed."""

    def __init__(self, spec: DiffusionSpec, grid: TorusGrid):
        self.spec = spec
        self.grid = grid
        self.basis = spec.qspec.basis(grid)

    def raw(self, c: np.ndarray, dW: np.ndarray) -> np.ndarray:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (self.basis.m,):
            raise IncompatibleSpec(f"increment has {dW.shape} entries, spec has {self.basis.m} modes")
        return _apply_raw(self.spec, self.basis, c, dW)

    def __call__(self, u: SpectralField, dW) -> SpectralField:
        return SpectralField(self.grid, self.raw(u.coeffs, dW))


def apply_G(spec: DiffusionSpec, u: SpectralField, dW) -> SpectralField:
    """``G(u) dW`` for one step's increment vector (mode coordinates of ``Delta W``)."""
    return NoiseOperator(spec, u.grid)(u, dW)


# ---------------------------------------------------------------------------------
# growth and Lipschitz bounds on G


@dataclass(frozen=True)
class ConditionGReport:
    K0: float
    K1: float
    L: float
    K0_V: float
    K1_V: float
    samples: int
    declared: dict
    violations: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations


def _opnorm2(op: NoiseOperator, c: np.ndarray, v_norm: bool) -> float:
    """Squared operator norm of ``xi -> G(u) xi`` into H (or V) via the Gram matrix."""
    ops = op.grid.ops
    m = op.basis.m
    cols = [op.raw(c, np.eye(m)[j]) for j in range(m)]
    wt = ops.weights * (1.0 + ops.k2) if v_norm else ops.weights
    gram = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = gram[j, i] = ops.volume * np.sum(wt * (cols[i] * cols[j].conj()).real)
    return float(np.max(np.linalg.eigvalsh(gram))) if m else 0.0


def _opnorm2_diff(op: NoiseOperator, c1, c2, v_norm: bool) -> float:
    ops = op.grid.ops
    m = op.basis.m
    cols = [op.raw(c1, np.eye(m)[j]) - op.raw(c2, np.eye(m)[j]) for j in range(m)]
    wt = ops.weights * (1.0 + ops.k2) if v_norm else ops.weights
    gram = np.array(
        [[ops.volume * np.sum(wt * (a * b.conj()).real) for b in cols] for a in cols]
    )
    return float(np.max(np.linalg.eigvalsh(gram))) if m else 0.0


def audit_condition_G(
    spec: DiffusionSpec,
    grid: TorusGrid,
    samples: int = 100,
    seed: int = 0,
    rel_slack: float = 1e-9,
) -> ConditionGReport:
    """Empirical growth and Lipschitz constants over random band-limited fields.

    ``K0`` is ``||G(0)||^2``; ``K1`` the sup of ``(||G(u)||^2 - K0) / ||u||^2``;
    ``L`` the sup of ``||G(u) - G(v)||^2 / ||u - v||^2``.  The V variants use
    the full ``W^{1,2}`` norm.
    """
    from .torus import random_field

    if samples < 100:
        raise ValueError("audit_condition_G needs at least 100 samples")
    op = NoiseOperator(spec, grid)
    ops = grid.ops
    rng = np.random.default_rng(seed)
    zero = np.zeros(grid.shape, dtype=complex)
    K0 = _opnorm2(op, zero, False)
    K0V = _opnorm2(op, zero, True)
    K1 = K1V = Lh = 0.0
    declared = spec.declared_constants(grid)
    excess = {"growth": 0.0, "growth_V": 0.0, "L": 0.0}
    for _ in range(samples):
        scale = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        u = random_field(grid, rng, decay=rng.uniform(1.0, 3.0), l2=scale, mean_free=False)
        v = random_field(grid, rng, decay=rng.uniform(1.0, 3.0), l2=scale, mean_free=False)
        c, d = u.coeffs, v.coeffs
        nu2 = ops.sq(c)
        nv2 = nu2 + ops.grad_sq(c)
        g2, g2v = _opnorm2(op, c, False), _opnorm2(op, c, True)
        l2 = _opnorm2_diff(op, c, d, False) / ops.sq(c - d)
        K1 = max(K1, (g2 - K0) / nu2)
        K1V = max(K1V, (g2v - K0V) / nv2)
        Lh = max(Lh, l2)
        bound = declared["K0"] + declared["K1"] * nu2
        bound_v = declared["K0_V"] + declared["K1_V"] * nv2
        excess["growth"] = max(excess["growth"], (g2 - bound) / max(bound, 1e-300))
        excess["growth_V"] = max(excess["growth_V"], (g2v - bound_v) / max(bound_v, 1e-300))
        excess["L"] = max(excess["L"], l2 - declared["L"] * (1 + rel_slack))
    est = {"K0": K0, "K1": max(K1, 0.0), "L": Lh, "K0_V": K0V, "K1_V": max(K1V, 0.0)}
    violations = [k for k in ("growth", "growth_V") if excess[k] > rel_slack]
    if excess["L"] > 1e-12 * max(1.0, declared["L"]):
        violations.append("L")
    return ConditionGReport(samples=samples, declared=declared, violations=tuple(violations), **est)
