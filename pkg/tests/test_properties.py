"""Property-based checks of the structural invariants."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from bfns import (
    BFParams,
    QSpec,
    SchemeParams,
    TorusGrid,
    coarsen,
    divergence_defect,
    galerkin_project,
    implicit_step,
    leray_project,
    norms,
    random_field,
    refine,
    sample_path,
    stokes_pow,
    trilinear_b,
)
from bfns.experiment import ConfigError, fit_rate, parse_config
from bfns.nonlinear import bf_lipschitz_ratio, bf_monotonicity_gap
from bfns.scheme import galerkin_dimension

G8 = TorusGrid(8)
G16 = TorusGrid(16)
seeds = st.integers(0, 2**32 - 1)
settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

vec = st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=3, max_size=3).map(np.array)
alphas = st.sampled_from([1.0, 1.25, 1.5])


class TestSpectralProperties:
    @given(seeds)
    def test_leray_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        raw = (rng.standard_normal(G8.shape) + 1j * rng.standard_normal(G8.shape)) * G8.ops.band
        once = leray_project(raw, G8)
        twice = leray_project(once)
        assert np.max(np.abs(twice.coeffs - once.coeffs)) <= 1e-15 * np.max(np.abs(once.coeffs))
        assert divergence_defect(once) < 1e-14

    @given(seeds, st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
    def test_stokes_pow_group(self, seed, s, t):
        u = random_field(G8, seed)
        a = stokes_pow(stokes_pow(u, s), t).coeffs
        b = stokes_pow(u, s + t).coeffs
        assert np.max(np.abs(a - b)) <= 1e-12 * max(np.max(np.abs(b)), 1e-300)

    @given(seeds, st.floats(0.1, 10.0))
    def test_parseval_scaling(self, seed, c):
        u = random_field(G8, seed, l2=c)
        assert norms(u).l2 == pytest.approx(c, rel=1e-12)


class TestNonlinearProperties:
    @given(seeds, seeds, seeds)
    @settings(max_examples=15)
    def test_trilinear_antisymmetry(self, s1, s2, s3):
        u, v, w = (random_field(G16, s, decay=1.0) for s in (s1, s2, s3))
        b1, b2 = trilinear_b(u, v, w), trilinear_b(u, w, v)
        nu, nv, nw = norms(u), norms(v), norms(w)
        scale = nu.l2 * (nv.grad_l2 * nw.l2 + nw.grad_l2 * nv.l2)
        assert abs(b1 + b2) <= 1e-10 * scale

    @given(vec, vec, alphas, st.floats(0.01, 100.0))
    def test_pointwise_ratios_scale_invariant(self, u, v, alpha, c):
        if np.linalg.norm(u - v) < 1e-6:
            return
        m1, m2 = bf_monotonicity_gap(u, v, alpha), bf_monotonicity_gap(c * u, c * v, alpha)
        l1, l2 = bf_lipschitz_ratio(u, v, alpha), bf_lipschitz_ratio(c * u, c * v, alpha)
        assert m2 == pytest.approx(m1, rel=1e-9)
        assert l2 == pytest.approx(l1, rel=1e-9)

    @given(vec, vec, alphas)
    def test_monotone_positive(self, u, v, alpha):
        if np.linalg.norm(u - v) < 1e-6:
            return
        # the antipodal pair attains 2^-2a; nothing sampled should fall below it
        assert bf_monotonicity_gap(u, v, alpha) >= 2.0 ** (-2 * alpha) * (1 - 1e-9)


class TestNoiseProperties:
    q = QSpec.power_law(8, 4.0)

    @given(seeds, st.integers(0, 6), st.floats(0.1, 10.0))
    def test_refine_telescopes(self, seed, level, T):
        p = sample_path(self.q, T, 2**level, seed)
        assert np.array_equal(coarsen(refine(p)).increments, p.increments)
        assert np.array_equal(refine(p).increments, sample_path(self.q, T, 2 ** (level + 1),
                                                                seed).increments)


class TestSchemeProperties:
    @given(seeds, st.integers(0, 10_000))
    def test_galerkin_idempotent_contractive(self, seed, m):
        m = m % (galerkin_dimension(G8) + 1)
        u = random_field(G8, seed, mean_free=False)
        pu = galerkin_project(u, m)
        assert np.array_equal(galerkin_project(pu, m).coeffs, pu.coeffs)
        assert norms(pu).grad_l2 <= norms(u).grad_l2
        assert norms(pu).l2 <= norms(u).l2

    @given(seeds, st.floats(0.1, 3.0), st.sampled_from([2, 8, 32]))
    @settings(max_examples=15)
    def test_step_energy_identity(self, seed, amp, N):
        p = SchemeParams(1.0, BFParams(1.0, 1.5), 1.0, N, G8)
        u = random_field(G8, seed, l2=amp)
        f = random_field(G8, seed + 1, l2=0.1 * amp)
        out, led = implicit_step(u, f, p)
        assert abs(led.energy_defect) <= 10 * p.solver.tol * (1 + led.kinetic)
        assert divergence_defect(out) < 1e-14


class TestHarnessProperties:
    @given(st.floats(0.05, 2.0), st.floats(0.01, 100.0), st.integers(3, 7))
    def test_fit_exact_power(self, lam, c, k):
        pts = [(2.0**-j, c * 2.0 ** (-2 * lam * j)) for j in range(1, k + 1)]
        est, (lo, hi) = fit_rate(pts)
        assert est == pytest.approx(lam, abs=1e-9)

    @given(st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=12))
    def test_unknown_keys_named(self, key):
        known = {"params", "levels", "N_ref", "mc_samples", "base_seed", "workers", "qspec",
                 "diffusion", "initial_condition", "outputs", "audit", "step_check"}
        if key in known:
            return
        with pytest.raises(ConfigError) as err:
            parse_config({key: 1})
        assert err.value.path == key
