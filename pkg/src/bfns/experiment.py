"""Monte Carlo strong-error experiments on coupled Brownian paths.

Every sample draws one path at the reference resolution ``N_ref``; coarse
levels receive exact pairwise sums of its increments.  All levels share the
spatial grid, so the measured error is the time-discretisation error of the
Galerkin system, with the ``N_ref`` trajectory standing in for the exact
solution.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .noise import (DiffusionSpec, NoiseOperator, QSpec, coarsen, noise_modes, sample_path,
                    sample_seed)
from .nonlinear import BFParams
from .scheme import SchemeParams, SolverDiverged, SolverParams, run_trajectory
from .torus import (
    SpectralField,
    TorusGrid,
    load_checkpoint,
    random_field,
    taylor_green,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "DegenerateFit",
    "ExperimentAborted",
    "ExperimentConfig",
    "LevelStats",
    "ErrorReport",
    "DEFAULT_CONFIG",
    "load_config",
    "parse_config",
    "coupled_sample",
    "run_experiment",
    "fit_rate",
    "write_summary_csv",
    "plot_script",
]


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class DegenerateFit(ValueError):
    pass


class ExperimentAborted(RuntimeError):
    def __init__(self, msg, partial_path=None, census=None):
        super().__init__(msg)
        self.partial_path = partial_path
        self.census = census or {}


DEFAULT_CONFIG: dict = {
    "params": {
        "nu": 1.0,
        "a": 1.0,
        "alpha": 1.5,
        "T": 1.0,
        "L": 2 * math.pi,
        "n": 16,
        "solver": {"method": "picard", "tol": 1e-10, "max_iters": 100, "damping": 1.0},
    },
    "levels": [8, 16, 32, 64],
    "N_ref": 512,
    "mc_samples": 32,
    "base_seed": 20240611,
    "workers": 1,
    "qspec": {"n_modes": 20, "gamma": 4.0, "amplitude": 1.0},
    "diffusion": {"kind": "additive"},
    "initial_condition": {"name": "taylor_green", "amplitude": 1.0},
    "outputs": {"directory": "results", "formats": ["csv", "gnuplot"]},
    "audit": {
        "samples": 200,
        "seed": 7,
        "n": 16,
        "alphas": [1.0, 1.25, 1.5],
        "deltas": [0.25, 0.5],
        "pointwise_samples": 1000000,
    },
    "step_check": {"trajectories": 4, "N": 64, "seed": 11},
}

_SCHEMA = {
    "params": {
        "nu": float, "a": float, "alpha": float, "T": float, "L": float, "n": int,
        "solver": {"method": str, "tol": float, "max_iters": int, "damping": float},
    },
    "levels": list,
    "N_ref": int,
    "mc_samples": int,
    "base_seed": int,
    "workers": int,
    "qspec": {"n_modes": int, "gamma": float, "amplitude": float, "kmax": int, "q": list},
    "diffusion": {"kind": str, "phi": list, "sigma": float, "weights": list,
                  "sigma0": float, "sigma1": float},
    "initial_condition": {"name": str, "amplitude": float, "seed": int, "decay": float,
                          "path": str},
    "outputs": {"directory": str, "formats": list},
    "audit": {"samples": int, "seed": int, "n": int, "alphas": list, "deltas": list,
              "pointwise_samples": int},
    "step_check": {"trajectories": int, "N": int, "seed": int},
}


def _merge(base: dict, over: dict, schema: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(path, "unknown key")
        kind = schema[key]
        if isinstance(kind, dict):
            if not isinstance(val, dict):
                raise ConfigError(path, "expected an object")
            out[key] = _merge(out.get(key, {}), val, kind, path + ".")
            continue
        if kind is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if kind is int and isinstance(val, float) and val.is_integer():
            val = int(val)
        if (kind is int and (isinstance(val, bool) or not isinstance(val, int))) or \
                (kind is not int and not isinstance(val, kind)):
            raise ConfigError(path, f"expected {kind.__name__}, got {type(val).__name__}")
        out[key] = val
    return out


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    params: SchemeParams  # N is per level; holds N_ref here
    levels: tuple
    N_ref: int
    mc_samples: int
    base_seed: int
    qspec: QSpec | None
    diffusion: DiffusionSpec | None
    initial_condition: dict
    outputs: dict
    workers: int = 1
    raw: dict = field(default_factory=dict)

    def initial_field(self) -> SpectralField:
        return _initial_field(self.initial_condition, self.params.grid)


def _initial_field(ic: dict, grid: TorusGrid) -> SpectralField:
    name = ic.get("name", "taylor_green")
    amp = float(ic.get("amplitude", 1.0))
    if name == "taylor_green":
        return taylor_green(grid, amp)
    if name == "random":
        return random_field(grid, int(ic.get("seed", 0)), decay=float(ic.get("decay", 2.0)), l2=amp)
    if name == "zero":
        return grid.zeros()
    if name == "checkpoint":
        u = load_checkpoint(ic["path"])
        if u.grid != grid:
            raise ConfigError("initial_condition.path", "checkpoint grid differs from params")
        return u * amp
    raise ConfigError("initial_condition.name", f"unknown generator {name!r}")


def _is_pow2(n) -> bool:
    return isinstance(n, int) and n >= 1 and n & (n - 1) == 0


def parse_config(data: dict | None = None) -> ExperimentConfig:
    """Validate a config mapping (merged over the defaults) and build typed objects."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, data, _SCHEMA)
    p = cfg["params"]
    try:
        grid = TorusGrid(p["n"], p["L"])
    except ValueError as exc:
        raise ConfigError("params.n", str(exc)) from None
    try:
        bf = BFParams(p["a"], p["alpha"])
    except ValueError as exc:
        raise ConfigError("params.alpha" if "alpha" in str(exc) else "params.a", str(exc)) from None
    try:
        solver = SolverParams(**p["solver"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("params.solver", str(exc)) from None
    levels = cfg["levels"]
    if not levels or not all(_is_pow2(x) for x in levels):
        raise ConfigError("levels", "must be a nonempty list of powers of two")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels", "must be strictly increasing")
    N_ref = cfg["N_ref"]
    if not _is_pow2(N_ref):
        raise ConfigError("N_ref", "must be a power of two")
    if N_ref < 8 * max(levels):
        raise ConfigError("N_ref", "must be at least 8 * max(levels)")
    if cfg["mc_samples"] < 1:
        raise ConfigError("mc_samples", "must be >= 1")
    if cfg["workers"] < 1:
        raise ConfigError("workers", "must be >= 1")
    try:
        params = SchemeParams(p["nu"], bf, p["T"], N_ref, grid, solver)
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from None
    kind = cfg["diffusion"].get("kind", "additive")
    qs = cfg["qspec"]
    qspec = diffusion = None
    if kind != "none":
        try:
            if "q" in qs:
                qv = [float(x) for x in qs["q"]]
                modes = noise_modes(qs.get("kmax", grid.dealias_cutoff), len(qv))
                qspec = QSpec(tuple(modes), np.array(qv))
            else:
                qspec = QSpec.power_law(qs["n_modes"], qs["gamma"], qs["amplitude"], qs.get("kmax"))
            qspec.basis(grid)
        except ValueError as exc:
            raise ConfigError("qspec", str(exc)) from None
        d = cfg["diffusion"]
        try:
            if kind == "additive":
                diffusion = DiffusionSpec.additive(qspec, d.get("phi"))
            elif kind == "scalar-linear":
                diffusion = DiffusionSpec.scalar_linear(qspec, d.get("sigma", 0.5), d.get("weights"))
            elif kind == "diagonal-nemytskii":
                diffusion = DiffusionSpec.diagonal(qspec, d.get("sigma0", 0.5), d.get("sigma1", 0.25))
            else:
                raise ConfigError("diffusion.kind", f"unknown kind {kind!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("diffusion", str(exc)) from None
    ic = cfg["initial_condition"]
    if ic.get("name", "taylor_green") not in ("taylor_green", "random", "zero", "checkpoint"):
        raise ConfigError("initial_condition.name", f"unknown generator {ic.get('name')!r}")
    return ExperimentConfig(
        params=params,
        levels=tuple(levels),
        N_ref=N_ref,
        mc_samples=cfg["mc_samples"],
        base_seed=cfg["base_seed"],
        qspec=qspec,
        diffusion=diffusion,
        initial_condition=ic,
        outputs=cfg["outputs"],
        workers=cfg["workers"],
        raw=cfg,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(data)


# ---------------------------------------------------------------------------------
# sampling


def coupled_sample(config: ExperimentConfig, sample_index: int) -> dict:
    """Run the reference and every level on one shared Brownian path.

    Returns ``{N: {"err2_max": ..., "err2_grad": ...}}``.
    """
    params = config.params
    grid = params.grid
    ops = grid.ops
    u0 = config.initial_field()
    seed = sample_seed(config.base_seed, sample_index)
    noisy = config.diffusion is not None
    stride = config.N_ref // max(config.levels)
    noise_op = NoiseOperator(config.diffusion, grid) if noisy else None
    ref_path = sample_path(config.qspec, params.T, config.N_ref, seed) if noisy else None
    try:
        ref = run_trajectory(u0, ref_path, config.diffusion, params.with_steps(config.N_ref),
                             record=("stride", stride), noise_op=noise_op, moments=False)
    except SolverDiverged as exc:
        exc.context.update(sample_index=sample_index, level=config.N_ref)
        raise
    ref_states = dict(zip(ref.indices, ref.states))
    out = {}
    paths = {}
    if noisy:
        p = ref_path
        while p.N > min(config.levels):
            p = coarsen(p)
            paths[p.N] = p
    for N in config.levels:
        path = None
        if noisy:
            path = paths[N] if N != config.N_ref else ref_path
            direct = sample_path(config.qspec, params.T, N, seed)
            if not np.array_equal(direct.increments, path.increments):
                raise AssertionError(f"coupling mismatch at level {N}, sample {sample_index}")
        try:
            tr = run_trajectory(u0, path, config.diffusion, params.with_steps(N), record="all",
                                noise_op=noise_op, moments=False)
        except SolverDiverged as exc:
            exc.context.update(sample_index=sample_index, level=N)
            raise
        ratio = config.N_ref // N
        e_max = 0.0
        e_grad = 0.0
        for j in range(1, N + 1):
            d = ref_states[j * ratio].coeffs - tr.states[j].coeffs
            e_max = max(e_max, ops.sq(d))
            e_grad += ops.grad_sq(d)
        out[N] = {"err2_max": e_max, "err2_grad": e_grad * params.T / N}
    return out


def _sample_job(args):
    config, idx = args
    try:
        return idx, coupled_sample(config, idx), None
    except SolverDiverged as exc:
        return idx, None, str(exc)


# ---------------------------------------------------------------------------------
# reporting


@dataclass(frozen=True)
class LevelStats:
    N: int
    h: float
    err2_max_mean: float
    err2_max_se: float
    err2_grad_mean: float
    err2_grad_se: float
    samples: int
    diverged: int


@dataclass
class ErrorReport:
    levels: list
    rate: float | None
    rate_ci: tuple | None
    per_sample: list
    runtime: dict = field(default_factory=dict)
    divergences: list = field(default_factory=list)

    def level(self, N: int) -> LevelStats:
        return next(l for l in self.levels if l.N == N)


def fit_rate(points) -> tuple[float, tuple[float, float]]:
    """Least squares on ``log err2 = 2 lambda log h + c``; returns ``(lambda, 95% CI)``."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 3:
        raise DegenerateFit("need at least 3 points")
    hs = np.array([p[0] for p in pts])
    es = np.array([p[1] for p in pts])
    if np.any(hs <= 0) or np.any(es <= 0) or not np.all(np.isfinite(es)):
        raise DegenerateFit("h and errors must be positive and finite")
    if len(set(hs.tolist())) != len(hs):
        raise DegenerateFit("repeated h values")
    res = stats.linregress(np.log(hs), np.log(es))
    lam = res.slope / 2.0
    dof = len(pts) - 2
    half = stats.t.ppf(0.975, dof) * res.stderr / 2.0 if dof > 0 else math.inf
    return float(lam), (float(lam - half), float(lam + half))


def _mean_se(xs):
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return math.nan, math.nan
    se = float(np.std(xs, ddof=1) / math.sqrt(xs.size)) if xs.size >= 2 else math.nan
    return float(np.mean(xs)), se


def _aggregate(config, results: dict, failures: dict) -> ErrorReport:
    T = config.params.T
    levels = []
    per_sample = []
    for idx in sorted(results):
        for N in config.levels:
            r = results[idx][N]
            per_sample.append((idx, N, r["err2_max"], r["err2_grad"]))
    for N in config.levels:
        emax = [results[i][N]["err2_max"] for i in sorted(results)]
        egrad = [results[i][N]["err2_grad"] for i in sorted(results)]
        m1, s1 = _mean_se(emax)
        m2, s2 = _mean_se(egrad)
        levels.append(LevelStats(N, T / N, m1, s1, m2, s2, len(emax), len(failures)))
    rate = ci = None
    if len(levels) >= 3:
        try:
            rate, ci = fit_rate([(l.h, l.err2_max_mean) for l in levels])
        except DegenerateFit:
            rate = ci = None
    return ErrorReport(levels, rate, ci, per_sample,
                       divergences=[(i, msg) for i, msg in sorted(failures.items())])


SUMMARY_COLUMNS = ["level_N", "h", "err2_max_mean", "err2_max_se", "err2_grad_mean",
                   "err2_grad_se", "samples", "diverged"]


def _fmt(x) -> str:
    return repr(float(x))


def summary_csv_text(report: ErrorReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for l in report.levels:
        w.writerow([l.N, _fmt(l.h), _fmt(l.err2_max_mean), _fmt(l.err2_max_se),
                    _fmt(l.err2_grad_mean), _fmt(l.err2_grad_se), l.samples, l.diverged])
    return buf.getvalue()


def write_summary_csv(report: ErrorReport, path) -> None:
    Path(path).write_text(summary_csv_text(report))


def _write_samples_csv(report: ErrorReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "level_N", "err2_max", "err2_grad"])
        for idx, N, a, b in report.per_sample:
            w.writerow([idx, N, _fmt(a), _fmt(b)])


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(SUMMARY_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path} is not a summary CSV")
    return rows


def plot_script(summary_csv: str, rate: float | None = None, intercept: float | None = None) -> str:
    """gnuplot script drawing err2_max against h on log-log axes with the fitted line."""
    if rate is None or intercept is None:
        rows = read_summary_csv(summary_csv)
        pts = [(float(r["h"]), float(r["err2_max_mean"])) for r in rows]
        if len(pts) >= 3 and all(e > 0 for _, e in pts):
            res = stats.linregress(np.log([p[0] for p in pts]), np.log([p[1] for p in pts]))
            rate, intercept = res.slope / 2.0, res.intercept
    name = os.path.basename(str(summary_csv))
    lines = [
        "set datafile separator ','",
        "set logscale xy",
        "set key top left",
        "set xlabel 'h = T/N'",
        "set ylabel 'E max_j ||u_ref(t_j) - u^j||^2'",
    ]
    plot = f"plot '{name}' every ::1 using 2:3:4 with yerrorbars title 'MC mean +/- 1 s.e.'"
    if rate is not None:
        lines.append(f"fit_line(x) = exp({intercept!r}) * x**{2 * rate!r}")
        plot += f", fit_line(x) title sprintf('fit: lambda = %.3f', {rate!r})"
    lines.append(plot)
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int | None = None,
                   progress=None) -> ErrorReport:
    """Run all samples, aggregate, fit the rate and persist CSV outputs."""
    t0 = time.time()
    workers = workers or config.workers
    jobs = [(config, i) for i in range(config.mc_samples)]
    results, failures = {}, {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, res, err in pool.map(_sample_job, jobs):
                (results.__setitem__(idx, res) if err is None else failures.__setitem__(idx, err))
                if progress:
                    progress(idx)
    else:
        for job in jobs:
            idx, res, err = _sample_job(job)
            (results.__setitem__(idx, res) if err is None else failures.__setitem__(idx, err))
            if progress:
                progress(idx)
    report = _aggregate(config, results, failures)
    report.runtime = {"seconds": time.time() - t0, "workers": workers,
                      "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}
    out_dir = out_dir if out_dir is not None else config.outputs.get("directory")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_samples_csv(report, out / "samples.csv")
    if failures and len(failures) > 0.1 * config.mc_samples:
        partial = None
        if out_dir:
            partial = Path(out_dir) / "partial_summary.csv"
            write_summary_csv(report, partial)
        raise ExperimentAborted(
            f"{len(failures)} of {config.mc_samples} samples diverged",
            partial_path=partial, census=dict(failures))
    if out_dir:
        out = Path(out_dir)
        write_summary_csv(report, out / "summary.csv")
        formats = config.outputs.get("formats", [])
        if "gnuplot" in formats:
            icpt = None
            if report.rate is not None:
                res = stats.linregress(np.log([l.h for l in report.levels]),
                                       np.log([l.err2_max_mean for l in report.levels]))
                icpt = res.intercept
            (out / "plot.gp").write_text(plot_script(str(out / "summary.csv"), report.rate, icpt))
        meta = {"rate": report.rate, "rate_ci": report.rate_ci, "runtime": report.runtime,
                "divergences": report.divergences, "config": config.raw}
        (out / "report.json").write_text(json.dumps(meta, indent=2, default=float))
    return report


# ---------------------------------------------------------------------------------
# scheme invariant suite


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    worst: float
    bound: float
    detail: str = ""


def step_check(config: ExperimentConfig) -> list[CheckResult]:
    """Per-step energy identity, divergence and noise-off monotonicity on short trajectories."""
    from .torus import divergence_defect

    sc = config.raw["step_check"]
    N = sc["N"]
    params = config.params.with_steps(N)
    tol = params.solver.tol
    u0 = config.initial_field()
    worst_id = worst_div = worst_mono = 0.0
    for i in range(sc["trajectories"]):
        path = None
        op = None
        if config.diffusion is not None:
            path = sample_path(config.qspec, params.T, N, sample_seed(sc["seed"], i))
            op = NoiseOperator(config.diffusion, params.grid)
        tr = run_trajectory(u0, path, config.diffusion, params, record="all", noise_op=op,
                            moments=False)
        for led in tr.ledgers:
            worst_id = max(worst_id, abs(led.energy_defect) / (10 * tol * (1 + led.kinetic)))
        worst_div = max(worst_div, max(divergence_defect(s) for s in tr.states))
    det = run_trajectory(u0, None, None, params, record="endpoints", moments=False)
    for led in det.ledgers:
        worst_mono = max(worst_mono, led.kinetic - led.kinetic_prev)
    return [
        CheckResult("energy_identity", worst_id <= 1.0, worst_id, 1.0,
                    "max |defect| / (10 tol (1 + kinetic))"),
        CheckResult("divergence_free", worst_div <= 1e-14, worst_div, 1e-14),
        CheckResult("noise_off_kinetic_nonincreasing", worst_mono <= 0.0, worst_mono, 0.0),
    ]
