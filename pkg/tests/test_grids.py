import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsdiag.errors import ConfigError, DomainError, GridMismatchError, NonFiniteFieldError
from nlsdiag.grids import (
    FREQUENCY,
    GridField,
    SpatialGrid,
    forward_transform,
    fourier_at,
    free_propagate,
    inner_product,
    inverse_transform,
    l2_norm,
    modulate,
    norm,
    tilde_transform,
    verify_factorization,
    zero_field,
)


def random_field(grid, seed=0):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return GridField(grid, vals)


class TestSpatialGrid:
    def test_basic_geometry(self):
        g = SpatialGrid(1, 64, 32.0)
        assert g.spacing == 0.5
        assert g.cell_volume == 0.5
        assert g.frequency_spacing == pytest.approx(2 * math.pi / 32.0)
        x = g.axis_points()
        assert x[0] == -16.0
        assert x[-1] == pytest.approx(16.0 - 0.5)

    def test_frequency_order_matches_fft(self):
        g = SpatialGrid(1, 16, 8.0)
        xi = g.axis_frequencies()
        assert xi[0] == 0.0
        assert xi[1] == pytest.approx(2 * math.pi / 8.0)
        assert xi[8] == pytest.approx(-16 * math.pi / 8.0)

    def test_rescaled_keeps_points(self):
        g = SpatialGrid(2, 16, 10.0).rescaled(0.25)
        assert g.box_length == 2.5
        assert g.points_per_axis == 16

    @pytest.mark.parametrize("dim,n,L", [(3, 16, 1.0), (1, 48, 1.0), (1, 4, 1.0), (1, 16, -1.0)])
    def test_invalid_grid_rejected(self, dim, n, L):
        with pytest.raises(ConfigError):
            SpatialGrid(dim, n, L)


class TestGridField:
    def test_shape_mismatch(self):
        g = SpatialGrid(1, 16, 8.0)
        with pytest.raises(ConfigError):
            GridField(g, np.zeros(8))

    def test_non_finite_rejected(self):
        g = SpatialGrid(1, 16, 8.0)
        vals = np.zeros(16, dtype=complex)
        vals[3] = np.nan
        with pytest.raises(NonFiniteFieldError):
            GridField(g, vals)

    def test_unknown_space_tag(self):
        g = SpatialGrid(1, 16, 8.0)
        with pytest.raises(ConfigError):
            GridField(g, np.zeros(16), "momentum")

    def test_cell_measure_by_space(self):
        g = SpatialGrid(1, 16, 8.0)
        assert zero_field(g).cell == g.cell_volume
        assert zero_field(g, FREQUENCY).cell == g.frequency_cell_volume


class TestTransforms:
    @given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([16, 32, 64]))
    @settings(max_examples=25, deadline=None)
    def test_parseval_property(self, seed, n):
        g = SpatialGrid(1, n, 20.0)
        f = random_field(g, seed)
        fhat = forward_transform(f)
        assert l2_norm(fhat) == pytest.approx(l2_norm(f), rel=1e-12)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_inverse_is_identity(self, seed):
        g = SpatialGrid(2, 16, 10.0)
        f = random_field(g, seed)
        back = inverse_transform(forward_transform(f))
        assert np.max(np.abs(back.values - f.values)) < 1e-12

    def test_gaussian_transform_closed_form(self):
        g = SpatialGrid(1, 1024, 80.0)
        s = 2.0
        x = g.meshgrid()[0]
        f = GridField(g, np.exp(-(x**2) / (2 * s * s)))
        fhat = forward_transform(f)
        xi = g.axis_frequencies()
        exact = s * np.exp(-(s * s) * xi**2 / 2.0)
        assert np.max(np.abs(fhat.values - exact)) < 1e-12

    def test_inner_product_conjugate_linearity(self):
        g = SpatialGrid(1, 32, 8.0)
        f, h = random_field(g, 1), random_field(g, 2)
        assert inner_product(f, h.with_values(1j * h.values)) == pytest.approx(
            -1j * inner_product(f, h))

    def test_inner_product_space_mismatch(self):
        g = SpatialGrid(1, 32, 8.0)
        with pytest.raises(GridMismatchError):
            inner_product(zero_field(g), zero_field(g, FREQUENCY))


class TestNorms:
    def test_lp_interpolates_sup(self):
        g = SpatialGrid(1, 64, 16.0)
        f = random_field(g, 3)
        assert norm(f, "lp", math.inf) == norm(f, "sup")

    def test_weak_lp_below_lp(self):
        g = SpatialGrid(1, 64, 16.0)
        f = random_field(g, 4)
        for r in (1.5, 2.0, 4.0):
            assert norm(f, "weak-lp", r) <= norm(f, "lp", r) + 1e-12

    def test_invalid_norms(self):
        g = SpatialGrid(1, 16, 8.0)
        f = zero_field(g)
        with pytest.raises(DomainError):
            norm(f, "lp", 0.5)
        with pytest.raises(DomainError):
            norm(f, "weak-lp", 1.0)
        with pytest.raises(DomainError):
            norm(f, "energy")


class TestFreePropagator:
    def test_unitary(self):
        g = SpatialGrid(1, 256, 40.0)
        f = random_field(g, 5)
        assert l2_norm(free_propagate(f, 3.7)) == pytest.approx(l2_norm(f), rel=1e-13)

    def test_group_law(self):
        g = SpatialGrid(1, 256, 40.0)
        f = random_field(g, 6)
        a = free_propagate(free_propagate(f, 1.3), 2.4)
        b = free_propagate(f, 3.7)
        assert np.max(np.abs(a.values - b.values)) < 1e-12

    def test_gaussian_closed_form(self):
        g = SpatialGrid(1, 1024, 80.0)
        s = 2.0
        t = 3.0
        x = g.meshgrid()[0]
        u0 = GridField(g, np.exp(-(x**2) / (2 * s * s)))
        u = free_propagate(u0, t)
        denom = s * s + 2j * t
        exact = (1 + 2j * t / s**2) ** -0.5 * np.exp(-(x**2) / (2 * denom))
        rel = np.sqrt(np.sum(np.abs(u.values - exact) ** 2) / np.sum(np.abs(exact) ** 2))
        assert rel < 1e-10

    def test_time_label_advances(self):
        g = SpatialGrid(1, 32, 8.0)
        f = GridField(g, np.ones(32), time_label=1.0)
        assert free_propagate(f, 2.0).time_label == 3.0


class TestModulationDilation:
    def test_modulate_zero_time(self):
        g = SpatialGrid(1, 32, 8.0)
        with pytest.raises(DomainError):
            modulate(zero_field(g), 0.0)

    def test_tilde_transform_isometry(self):
        g = SpatialGrid(1, 256, 40.0)
        f = random_field(g, 7)
        ft, rg = tilde_transform(f, 2.5)
        assert rg.box_length == pytest.approx(40.0 / 5.0)
        assert l2_norm(ft) == pytest.approx(l2_norm(f), rel=1e-13)

    def test_tilde_transform_needs_positive_time(self):
        g = SpatialGrid(1, 32, 8.0)
        with pytest.raises(DomainError):
            tilde_transform(zero_field(g), 0.0)


class TestDirectQuadrature:
    def test_matches_fft_on_native_nodes(self):
        g = SpatialGrid(1, 128, 30.0)
        f = random_field(g, 8)
        direct = fourier_at(f, [g.axis_frequencies()])
        assert np.max(np.abs(direct - forward_transform(f).values)) < 1e-10

    def test_matches_fft_2d(self):
        g = SpatialGrid(2, 16, 10.0)
        f = random_field(g, 9)
        direct = fourier_at(f, [g.axis_frequencies()] * 2)
        assert np.max(np.abs(direct - forward_transform(f).values)) < 1e-10

    def test_factorization_residual(self):
        g = SpatialGrid(1, 1024, 80.0)
        x = g.meshgrid()[0]
        phi = GridField(g, np.exp(-(x**2) / 32.0))
        assert verify_factorization(phi, 2.0) < 1e-9
