import math

import numpy as np
import pytest

from bfns import (
    CheckpointError,
    NonInvertible,
    PhysicalField,
    SpectralField,
    TorusGrid,
    constant_field,
    divergence_defect,
    inner,
    leray_project,
    load_checkpoint,
    lp_norm,
    norms,
    random_field,
    save_checkpoint,
    single_mode,
    stokes_pow,
    taylor_green,
    to_physical,
    to_spectral,
)

from oracles import grid_l2_sq, physical_values


@pytest.fixture(scope="module")
def g16():
    return TorusGrid(16)


class TestGrid:
    @pytest.mark.parametrize("n", [3, 2, 7, 0])
    def test_rejects_bad_n(self, n):
        with pytest.raises(ValueError):
            TorusGrid(n)

    def test_cutoff_and_shape(self):
        g = TorusGrid(16)
        assert g.dealias_cutoff == 5
        assert g.padded == 24
        assert g.shape == (3, 16, 16, 9)
        assert g.volume == pytest.approx((2 * math.pi) ** 3)

    def test_random_field_in_band_and_real(self, g16):
        u = random_field(g16, 3)
        ops = g16.ops
        assert np.all(u.coeffs[:, ~ops.band] == 0)
        assert divergence_defect(u) < 1e-14
        back = to_spectral(to_physical(u))
        assert np.max(np.abs(back.coeffs - u.coeffs)) < 1e-15


class TestLeray:
    def test_axis_example(self, g16):
        raw = np.zeros(g16.shape, complex)
        raw[:, 1, 0, 0] = (1, 1, 0)
        out = leray_project(raw, g16)
        np.testing.assert_allclose(out.coeffs[:, 1, 0, 0], (0, 1, 0), atol=1e-16)

    def test_gradient_annihilated(self, g16):
        rng = np.random.default_rng(0)
        phi = rng.standard_normal(g16.shape[1:]) + 1j * rng.standard_normal(g16.shape[1:])
        raw = 1j * g16.ops.K * phi
        out = leray_project(raw, g16)
        assert np.max(np.abs(out.coeffs)) < 1e-14 * np.max(np.abs(raw))

    def test_divergence_free_unchanged(self, g16):
        u = random_field(g16, 1)
        np.testing.assert_allclose(leray_project(u).coeffs, u.coeffs, atol=1e-16)

    def test_mean_passes_through(self, g16):
        c = constant_field(g16, (1.0, -2.0, 0.5))
        np.testing.assert_array_equal(leray_project(c).coeffs, c.coeffs)

    def test_orthogonality(self, g16):
        rng = np.random.default_rng(4)
        raw = rng.standard_normal(g16.shape) + 1j * rng.standard_normal(g16.shape)
        raw = raw * g16.ops.band
        # physical round trip gives a real field
        w = to_spectral(PhysicalField(g16, g16.ops.to_native(raw)))
        u = leray_project(w)
        v = random_field(g16, 9)
        d = w - u
        rel = abs(inner(d, v)) / (norms(d).l2 * norms(v).l2)
        assert rel < 1e-12


class TestStokesPow:
    def test_constant_killed(self, g16):
        c = constant_field(g16, (1.0, 2.0, 3.0))
        assert np.all(stokes_pow(c, 1.0).coeffs == 0)
        assert stokes_pow(c, 0.0) is c

    def test_eigenvalues(self, g16):
        u = single_mode(g16, (0, 1, 0), (1, 0, 0))
        np.testing.assert_allclose(stokes_pow(u, 1.0).coeffs, u.coeffs)
        w = single_mode(g16, (1, 1, 0), (0, 0, 1))
        np.testing.assert_allclose(stokes_pow(w, 0.5).coeffs, math.sqrt(2) * w.coeffs)

    def test_box_size_scaling(self):
        g = TorusGrid(8, L=1.0)
        u = single_mode(g, (0, 0, 1), (1, 0, 0))
        np.testing.assert_allclose(stokes_pow(u, 1.0).coeffs, (2 * math.pi) ** 2 * u.coeffs)

    def test_negative_power_needs_mean_free(self, g16):
        u = random_field(g16, 2) + constant_field(g16, (1e-3, 0, 0))
        with pytest.raises(NonInvertible):
            stokes_pow(u, -0.5)

    def test_inverse_pair(self, g16):
        u = random_field(g16, 5)
        back = stokes_pow(stokes_pow(u, 0.75), -0.75)
        assert np.max(np.abs(back.coeffs - u.coeffs)) < 1e-12 * np.max(np.abs(u.coeffs))


class TestNorms:
    def test_zero(self, g16):
        r = norms(g16.zeros(), [3, 4])
        assert r.l2 == r.grad_l2 == r.v_norm == 0
        assert all(v == 0 for v in r.lp.values())

    def test_sine_l2(self):
        L, c = 3.0, 1.7
        g = TorusGrid(8, L)
        x = g.points()[0]
        vals = np.array([c * np.sin(2 * np.pi * x / L), 0 * x, 0 * x])
        u = to_spectral(PhysicalField(g, vals))
        assert norms(u).l2 == pytest.approx(c * math.sqrt(L**3 / 2), rel=1e-13)

    def test_parseval_matches_quadrature(self, g16):
        u = random_field(g16, 11, l2=2.5)
        assert norms(u).l2 ** 2 == pytest.approx(grid_l2_sq(u), rel=1e-12)

    def test_v_norm_convention(self, g16):
        r = norms(random_field(g16, 12))
        assert r.v_norm**2 == pytest.approx(r.l2**2 + r.grad_l2**2, rel=1e-14)
        assert r.l2 <= r.v_norm

    def test_l4_exact_for_single_mode(self, g16):
        # u = (0, 2 cos x, 0): int 16 cos^4 = 6 (2 pi)^3
        u = single_mode(g16, (1, 0, 0), (0, 1, 0))
        assert lp_norm(u, 4) == pytest.approx((6 * g16.volume) ** 0.25, rel=1e-14)


class TestTransforms:
    def test_zero(self, g16):
        assert np.all(to_physical(g16.zeros()).values == 0)

    def test_cosine_mode(self):
        g = TorusGrid(8)
        x = g.points()[0]
        vals = np.array([0 * x, np.cos(2 * x), 0 * x])
        c = to_spectral(PhysicalField(g, vals)).coeffs.copy()
        assert c[1, 2, 0, 0] == pytest.approx(0.5)
        assert c[1, -2, 0, 0] == pytest.approx(0.5)
        c[1, 2, 0, 0] = c[1, -2, 0, 0] = 0
        assert np.max(np.abs(c)) < 1e-16

    def test_roundtrip(self, g16):
        u = random_field(g16, 21)
        v = to_physical(u)
        back = to_physical(to_spectral(v))
        assert np.max(np.abs(back.values - v.values)) < 1e-12 * np.max(np.abs(v.values))

    def test_values_match_numpy_route(self):
        g = TorusGrid(8)
        u = random_field(g, 4)
        np.testing.assert_allclose(to_physical(u).values, physical_values(u), atol=1e-15)

    def test_to_spectral_truncates(self):
        g = TorusGrid(8)
        x = g.points()[0]
        vals = np.array([np.cos(3 * x), 0 * x, 0 * x])  # beyond the band 2
        assert np.max(np.abs(to_spectral(PhysicalField(g, vals)).coeffs)) < 1e-15

    def test_taylor_green_divergence_free(self, g16):
        assert divergence_defect(taylor_green(g16)) < 1e-15


class TestCheckpoint:
    def test_roundtrip(self, g16, tmp_path):
        u = random_field(g16, 8)
        save_checkpoint(u, tmp_path / "u.bin")
        v = load_checkpoint(tmp_path / "u.bin")
        assert v.grid == g16
        np.testing.assert_array_equal(u.coeffs, v.coeffs)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_truncated(self, g16, tmp_path):
        p = tmp_path / "u.bin"
        save_checkpoint(random_field(g16, 1), p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)


class TestSpectralField:
    def test_read_only(self, g16):
        u = random_field(g16, 0)
        with pytest.raises(ValueError):
            u.coeffs[0, 0, 0, 0] = 1

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            random_field(TorusGrid(8), 0) + random_field(TorusGrid(16), 0)

    def test_wrong_shape(self, g16):
        with pytest.raises(ValueError):
            SpectralField(g16, np.zeros((3, 4, 4, 3)))
