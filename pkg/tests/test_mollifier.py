import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import interp1d

from masskit.errors import DeltaTooLarge, KernelInvalid, PreconditionViolated
from masskit.geometry import FoliatedMetric, SphereGrid, ambient_scalar_curvature, slice_mean_curvature
from masskit.models import flat_foliation, flat_gaussian, schwarzschild_foliation, schwarzschild_gaussian
from masskit.mollifier import (
    CornerMetric,
    MollifierKernel,
    corner_from_foliation,
    curvature_concentration_profile,
    mollify_corner,
)

AXI = SphereGrid(8, 16).axisymmetric()


def reference_corner(m=0.4, width=0.05, n=51, grid=AXI):
    inner = flat_foliation(grid, np.linspace(1 - 2 * width, 1, n))
    outer = schwarzschild_foliation(grid, m, np.linspace(1, 1 + 2 * width, n))
    return CornerMetric(inner, outer)


def test_default_kernel_properties():
    k = MollifierKernel()
    s = np.linspace(-1, 1, 2001)
    assert np.all(k(s) >= 0)
    assert k.moment(0, -1) == pytest.approx(1.0, abs=1e-14)
    assert k.moment(1, -1) == pytest.approx(0.0, abs=1e-14)
    # (1 - s^2)^3 normalized: 35/32
    assert k(0.0) == pytest.approx(35 / 32)
    assert k(1.5) == 0 and k.derivative(1.0) == 0


@given(st.floats(-1, 1))
def test_kernel_moments_match_quadrature(z):
    k = MollifierKernel()
    x, w = np.polynomial.legendre.leggauss(20)
    s = 0.5 * (1 - z) * x + 0.5 * (1 + z)
    for p in range(3):
        assert k.moment(p, z) == pytest.approx(0.5 * (1 - z) * np.sum(w * s**p * k(s)), abs=1e-13)


@pytest.mark.parametrize("coef", [[0, 1, 0, -1], [1, 0, -1], [-1, 0, 1], [1, 0, 0, 0, -2, 0, 1]])
def test_invalid_kernels(coef):
    with pytest.raises(KernelInvalid):
        MollifierKernel(coef)


def test_corner_checks():
    inner = flat_foliation(AXI, np.linspace(0.9, 1, 11))
    with pytest.raises(PreconditionViolated):
        CornerMetric(inner, flat_foliation(AXI, np.linspace(1.01, 1.1, 11)))
    with pytest.raises(PreconditionViolated):
        CornerMetric(inner, FoliatedMetric.from_radius(AXI, np.linspace(1, 1.1, 11),
                                                       np.linspace(1.1, 1.2, 11)))


def test_jump_of_reference_corner():
    c = reference_corner()
    assert np.allclose(c.jump().values, 2 - 2 * np.sqrt(0.2), atol=1e-12)
    assert c.epsilon == pytest.approx(0.05)


def test_delta_too_large():
    with pytest.raises(DeltaTooLarge):
        mollify_corner(reference_corner(), 0.2)


def test_bit_exact_outside_band():
    c = reference_corner()
    delta = 1e-2
    g = mollify_corner(c, delta)
    G = c.metric()
    n0, n1 = g.meta["band"]
    t_c = c.t_corner
    keep = np.abs(G.slices - t_c) >= delta / 2
    assert np.array_equal(g.slices[:n0], G.slices[keep][:n0])
    assert np.array_equal(g.components[:n0], G.components[keep][:n0])
    assert np.array_equal(g.components[n1:], G.components[keep][n0:])
    assert np.array_equal(g.lapse[n1:], G.lapse[keep][n0:])
    assert np.all(np.abs(g.slices[n0:n1] - t_c) < delta / 2)


def gaussian_corner(m=0.4, width=0.05, n=51):
    inner = flat_gaussian(AXI, 1.0, np.linspace(-2 * width, 0, n))
    outer = schwarzschild_gaussian(AXI, m, 1.0, np.linspace(0, 2 * width, n))
    return CornerMetric(inner, outer)


def test_mollified_metric_converges_in_c0():
    c = gaussian_corner()
    t_fine = np.linspace(-0.005, 0.005, 201)
    r_in = 1 + t_fine[t_fine < 0]
    r_out = schwarzschild_gaussian(AXI, 0.4, 1.0, t_fine[t_fine >= 0]).components[:, 0, 0, 0]
    exact = np.concatenate([r_in**2, r_out])
    devs = []
    for delta in (2e-2, 1e-2):
        g = mollify_corner(c, delta)
        gt = interp1d(g.slices, g.components[:, 0, 0, 0], kind="cubic")(t_fine)
        devs.append(np.abs(gt - exact).max())
        assert np.all(np.isfinite(ambient_scalar_curvature(g).values))
        assert np.all(g.lapse == 1.0)
    assert devs[1] < devs[0] / 3
    assert devs[1] < 1e-5


def test_gaussian_corner_concentration():
    c = gaussian_corner()
    I = curvature_concentration_profile(c, 1e-2).values
    assert I.mean() / c.jump().values.mean() == pytest.approx(2.0, rel=1e-3)


def test_concentration_limit_and_convergence():
    c = reference_corner()
    jump = c.jump().values
    errs = []
    for delta in (2e-2, 1e-2, 5e-3):
        I = curvature_concentration_profile(c, delta).values
        errs.append(np.abs(I - 2 * jump).max())
    assert errs[-1] < 1e-3 * jump.max()
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


@settings(max_examples=6)
@given(st.floats(0.05, 0.45))
def test_concentration_scales_with_jump(m):
    c = reference_corner(m=m)
    I = curvature_concentration_profile(c, 1e-2).values
    jump = 2 - 2 * np.sqrt(1 - 2 * m)
    assert I.mean() / jump == pytest.approx(2.0, rel=1e-4)


def test_smooth_foliation_has_no_concentration():
    fm = schwarzschild_foliation(AXI, 0.3, np.linspace(0.9, 1.1, 101))
    c = corner_from_foliation(fm, 50)
    assert np.abs(c.jump().values).max() < 1e-12
    I = curvature_concentration_profile(c, 1e-2).values
    assert np.abs(I).max() < 1e-6


def test_mollified_mean_curvature_interpolates():
    c = reference_corner()
    g = mollify_corner(c, 1e-2)
    H = slice_mean_curvature(g).values[:, 0, 0]
    Hm, Hp = c.H_minus.values[0, 0], c.H_plus.values[0, 0]
    n0, n1 = g.meta["band"]
    band = H[n0:n1]
    assert band.min() > Hp - 0.05 and band.max() < Hm + 0.05


def test_anisotropic_concentration_tracks_profile():
    from masskit.quasispherical import quasi_spherical_extension

    th, _ = AXI.mesh()
    # outer mean curvature 2 / u0 on the flat background
    jump = 0.3 + 0.1 * np.cos(th)
    u0 = 2.0 / (2.0 - jump)
    inner = flat_foliation(AXI, np.linspace(0.9, 1, 51))
    outer = quasi_spherical_extension(AXI, np.linspace(1, 1.1, 51), u0)
    c = CornerMetric(inner, outer)
    assert np.abs(c.jump().values - jump).max() < 1e-10
    I = curvature_concentration_profile(c, 1e-2).values
    assert np.abs(I - 2 * jump).max() < 0.05 * jump.min()
