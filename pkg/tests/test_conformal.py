import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masskit import snapshot
from masskit.conformal import (
    EllipticProblem,
    ExteriorManifold,
    IndefinitePotential,
    boundary_shift,
    conformal_constant,
    conformal_power,
    conformal_transform,
    energy_identity_A,
    interpolate_conformal,
    solve_elliptic,
    static_descent,
    tilt_metric,
)
from masskit.errors import NonPositiveFactor, PreconditionViolated
from masskit.geometry import SphereGrid

AXI = SphereGrid(8, 16).axisymmetric()


def bump(r, amp=0.05, c=3.0):
    return amp * np.clip(1 - (r - c) ** 2, 0, None) ** 3


@pytest.fixture(scope="module")
def flat():
    return ExteriorManifold.flat(AXI)


@pytest.fixture(scope="module")
def schw():
    return ExteriorManifold.schwarzschild(AXI, 0.4)


@pytest.fixture(scope="module")
def graft():
    return ExteriorManifold.quasi_spherical(AXI, 1.1, target_R=bump)


def test_constants():
    assert conformal_constant(3) == pytest.approx(1 / 8)
    assert conformal_power(3) == 4
    assert boundary_shift(3) == 4


def test_flat_harmonic_solution(flat):
    sol = solve_elliptic(EllipticProblem(flat, 0.0, 0.0, 1.0))
    r = flat.radii
    exact = 1 - 1 / r
    inside = r <= 100
    assert np.abs(sol.u[inside] - exact[inside, None, None]).max() < 1e-6
    assert sol.normal_derivative.values == pytest.approx(1.0, abs=1e-6)
    assert sol.A.A == pytest.approx(-1.0, rel=1e-4)
    assert energy_identity_A(sol) == pytest.approx(sol.A.A, rel=1e-4)


def test_constant_solution_is_exact(schw):
    sol = solve_elliptic(EllipticProblem(schw, 0.0, 1.0, 1.0))
    assert np.abs(sol.u - 1).max() < 1e-11
    assert abs(sol.A.A) < 1e-10


def test_schwarzschild_harmonic_closed_form(schw):
    m = 0.4
    sol = solve_elliptic(EllipticProblem(schw, 0.0, 0.0, 1.0))
    f = lambda r: (1 - np.sqrt(1 - 2 * m / r)) / m
    r = schw.radii
    exact = 1 - f(r) / f(1.0)
    assert np.abs(sol.u[:, 0, 0] - exact).max() < 1e-5
    # 1 - f(r)/f(1) ~ 1 - 1/(f(1) r): A = -1/f(1)
    A_exact = -1 / f(1.0)
    assert sol.A.A == pytest.approx(A_exact, rel=1e-4)
    assert energy_identity_A(sol) == pytest.approx(A_exact, rel=1e-4)


def test_indefinite_potential_warns(flat):
    q = np.where(flat.radii < 3, 0.1, -0.1)[:, None, None]
    with pytest.warns(IndefinitePotential):
        EllipticProblem(flat, q)


def test_potential_problem_dual_A(graft):
    q = -conformal_constant() * graft.scalar_curvature
    sol = solve_elliptic(EllipticProblem(graft, q, 1.0, 1.0))
    assert sol.A.A < 0
    assert energy_identity_A(sol) == pytest.approx(sol.A.A, rel=1e-4)


def test_positive_potential_dual_A(graft):
    q = conformal_constant() * graft.scalar_curvature
    sol = solve_elliptic(EllipticProblem(graft, q, 1.0, 1.0))
    assert sol.A.A > 0
    assert energy_identity_A(sol) == pytest.approx(sol.A.A, rel=1e-4)


def test_tilt_flat(flat):
    out = tilt_metric(flat, 0.1)
    dH = out.boundary_H().values - flat.boundary_H().values
    assert dH == pytest.approx(-0.4, abs=1e-4)
    assert out.meta["tilt"]["H_predicted"] == pytest.approx(out.boundary_H().values, abs=1e-4)
    # (1 - s psi)^4 delta with psi = 1 - 1/r: mass 2 s (1 - s)
    assert out.mass() == pytest.approx(0.18, abs=1e-4)


def test_tilt_bounds(flat):
    with pytest.raises(PreconditionViolated):
        tilt_metric(flat, 1.0)
    out = tilt_metric(flat, 0.0)
    assert out.metric is flat.metric


@settings(max_examples=6)
@given(st.floats(-0.3, 0.3))
def test_unit_boundary_transform_shifts_H(c):
    flat = ExteriorManifold.flat(AXI)
    r = flat.radii
    w = np.broadcast_to((1 + c * (1 - 1 / r))[:, None, None], (len(r),) + AXI.shape)
    out = conformal_transform(flat, w)
    assert out.boundary_H().values == pytest.approx(2 + 4 * c, abs=1e-4)
    # w = a + b / r with a = 1 + c, b = -c: mass 2 a b
    assert out.mass() == pytest.approx(-2 * c * (1 + c), abs=1e-4)


def _isotropic(ratio):
    flat = ExteriorManifold.flat(AXI, r0=0.5, ratio=ratio)
    r = flat.radii
    w = np.broadcast_to((1 + 0.5 / r)[:, None, None], (len(r),) + AXI.shape)
    return conformal_transform(flat, w)


def test_isotropic_schwarzschild_from_flat():
    out = _isotropic(1.0125)
    assert out.mass() == pytest.approx(1.0, abs=1e-4)
    R = np.abs(out.scalar_curvature)
    # one-sided stencils on the first leaves; exact to roundoff beyond them
    assert R[4:].max() < 1e-10
    fine = np.abs(_isotropic(1.00625).scalar_curvature)
    assert R[:4].max() / fine[:4].max() > 4


def test_interpolation_endpoints(graft):
    q = -conformal_constant() * graft.scalar_curvature
    sol = solve_elliptic(EllipticProblem(graft, q, 1.0, 1.0))
    g0 = interpolate_conformal(graft, sol, 0.0)
    assert g0.metric is graft.metric
    g1 = interpolate_conformal(graft, sol, 1.0)
    assert np.abs(g1.scalar_curvature).max() < 1e-6
    with pytest.raises(PreconditionViolated):
        interpolate_conformal(graft, sol, 1.5)


def test_transform_rejects_nonpositive_factor(flat):
    w = np.zeros((flat.metric.n_slices,) + AXI.shape)
    with pytest.raises(NonPositiveFactor):
        conformal_transform(flat, w)


def test_static_descent_bump(graft):
    d = static_descent(graft)
    assert d["A"] < 0
    slope = np.polyfit(d["t"], d["mass"], 1)[0]
    assert slope == pytest.approx(2 * d["A"], rel=0.1)
    assert np.all(np.diff(d["mass"]) < 0)


def test_static_descent_needs_nonnegative_R(flat):
    neg = flat.with_metric(flat.metric, -bump(flat.radii)[:, None, None] * np.ones(AXI.shape))
    with pytest.raises(PreconditionViolated):
        static_descent(neg)


def test_static_descent_trivial_when_scalar_flat(schw):
    d = static_descent(schw)
    assert d["A"] == 0 and d["mass"][0] == d["mass"][-1]


def test_exterior_snapshot_roundtrip(tmp_path, schw):
    path = tmp_path / "ext.snap"
    snapshot.save(path, schw)
    back = snapshot.load(path)
    assert np.array_equal(back.metric.components, schw.metric.components)
    assert np.array_equal(back.scalar_curvature, schw.scalar_curvature)
    assert back.infinity_factor == schw.infinity_factor


def test_exterior_masses():
    assert ExteriorManifold.flat(AXI).mass() == pytest.approx(0, abs=1e-6)
    assert ExteriorManifold.schwarzschild(AXI, 0.4).mass() == pytest.approx(0.4, abs=1e-4)


def test_identity_transform_is_bit_exact(schw):
    w = np.ones((schw.metric.n_slices,) + AXI.shape)
    out = conformal_transform(schw, w)
    assert np.array_equal(out.metric.components, schw.metric.components)
    assert np.array_equal(out.metric.lapse, schw.metric.lapse)


def test_composition(flat):
    r = flat.radii[:, None, None] * np.ones(AXI.shape)
    w1 = 1 + 0.2 * (1 - 1 / r)
    w2 = 1 + 0.5 / r
    a = conformal_transform(conformal_transform(flat, w1), w2)
    b = conformal_transform(flat, w1 * w2)
    assert np.abs(a.metric.components - b.metric.components).max() < 1e-10 * np.abs(b.metric.components).max()
    assert np.abs(a.metric.lapse - b.metric.lapse).max() < 1e-10
    assert a.infinity_factor == pytest.approx(b.infinity_factor, rel=1e-10)


def test_elliptic_maximum_principle(graft):
    q = conformal_constant() * graft.scalar_curvature
    below = solve_elliptic(EllipticProblem(graft, -q, 1.0, 1.0))
    above = solve_elliptic(EllipticProblem(graft, q, 1.0, 1.0))
    assert below.u.max() <= 1 + 1e-8
    assert above.u.min() >= 1 - 1e-8


def test_linear_response_of_A():
    big = ExteriorManifold.quasi_spherical(AXI, 1.1, target_R=bump)
    small = ExteriorManifold.quasi_spherical(AXI, 1.1, target_R=lambda r: bump(r) / 4)
    Ab = static_descent(big)["A"]
    As = static_descent(small)["A"]
    assert Ab / As == pytest.approx(4.0, rel=0.02)


@pytest.mark.parametrize("s", [0.1, 0.05, 0.02])
def test_tilt_mass_continuity(flat, s):
    out = tilt_metric(flat, s)
    assert out.mass() == pytest.approx(2 * s * (1 - s), abs=1e-4)
    assert abs(out.mass() - flat.mass()) <= 3 * s


def test_interpolation_mass_drop(graft):
    q = -conformal_constant() * graft.scalar_curvature
    v = solve_elliptic(EllipticProblem(graft, q, 1.0, 1.0))
    half = interpolate_conformal(graft, v, 0.5)
    drop = half.mass() - graft.mass()
    assert drop == pytest.approx(2 * 0.5 * v.A.A, rel=0.1)
    dH = half.boundary_H().values - graft.boundary_H().values
    assert dH == pytest.approx(0.5 * 4 * v.normal_derivative.values, abs=1e-4)
