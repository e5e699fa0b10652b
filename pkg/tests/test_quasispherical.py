import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masskit import snapshot
from masskit.errors import BridgeDegenerate, LapseBlowup, ParabolicityLost, PreconditionViolated
from masskit.geometry import FoliatedMetric, SphereGrid, ambient_scalar_curvature, slice_mean_curvature
from masskit.mass import leaf_hawking_mass
from masskit.models import flat_foliation, schwarzschild_foliation
from masskit.quasispherical import (
    QSProblem,
    boundary_shift_coefficient,
    bridge_report,
    build_bridge,
    qs_solve,
    quasi_spherical_extension,
)

AXI = SphereGrid(8, 16).axisymmetric()


def _smooth_u0(grid, coeffs, top):
    th, ph = grid.mesh()
    f = sum(c * np.cos(k * th) for k, c in enumerate(coeffs[:4]))
    if grid.n_phi > 1:
        f = f + coeffs[4] * np.sin(th) * np.cos(ph)
    u = np.exp(f)
    return top * u / u.max()


def test_flat_background_closed_form():
    a = -0.8
    r = np.geomspace(1, 100, 400)
    bg = flat_foliation(AXI, r)
    sol = qs_solve(QSProblem(bg, (1 + a) ** -0.5))
    exact = (1 + a / r) ** -0.5
    assert sol.status == "ok"
    assert np.abs(sol.lapse[:, :, 0] - exact[:, None]).max() < 1e-6
    fm = sol.metric()
    for k in range(0, len(r), 40):
        assert leaf_hawking_mass(fm, k) == pytest.approx(-a / 2, abs=1e-8)


def test_problem_validation():
    bg = flat_foliation(AXI, np.linspace(1, 2, 11))
    with pytest.raises(PreconditionViolated):
        QSProblem(bg, 0.0)
    with pytest.raises(PreconditionViolated):
        QSProblem(bg, 1.0, t_span=(0.5, 2.0))
    shrinking = FoliatedMetric.from_radius(AXI, np.linspace(1, 2, 11), np.linspace(2, 1, 11))
    with pytest.raises(ParabolicityLost):
        QSProblem(shrinking, 1.0)


def test_blowup_is_reported():
    r = np.geomspace(1, 10, 60)
    bg = flat_foliation(AXI, r)
    # a large positive target curvature drives the lapse up without bound
    p = QSProblem(bg, 1.0, target_R=5.0)
    sol = qs_solve(p, u_cap=3.0)
    assert sol.status == "blowup"
    assert sol.reached_t < r[-1]
    assert sol.lapse.max() <= 3.0 + 1e-6
    with pytest.raises(LapseBlowup):
        qs_solve(p, u_cap=3.0, strict=True)


BACKGROUNDS = {
    "flat": lambda g, r: flat_foliation(g, r),
    "schwarzschild": lambda g, r: schwarzschild_foliation(g, 0.3, r),
}


@settings(max_examples=12)
@given(st.lists(st.floats(-0.3, 0.3), min_size=5, max_size=5), st.floats(0.3, 1.0),
       st.sampled_from(sorted(BACKGROUNDS)))
def test_maximum_principle(coeffs, top, kind):
    r = np.geomspace(1, 4, 40)
    bg = BACKGROUNDS[kind](AXI, r)
    sol = qs_solve(QSProblem(bg, _smooth_u0(AXI, coeffs, top)))
    assert sol.lapse.max() <= 1 + 1e-8


@settings(max_examples=8)
@given(st.lists(st.floats(-0.3, 0.3), min_size=5, max_size=5), st.floats(0.05, 0.4))
def test_comparison_principle(coeffs, gap):
    r = np.geomspace(1, 4, 40)
    bg = flat_foliation(AXI, r)
    lo = _smooth_u0(AXI, coeffs, 0.8)
    hi = lo + gap
    a = qs_solve(QSProblem(bg, lo)).lapse
    b = qs_solve(QSProblem(bg, hi)).lapse
    assert np.all(a <= b + 1e-10)


def test_full_grid_matches_reduced_solve():
    full = SphereGrid(8, 16)
    r = np.geomspace(1, 3, 30)
    th, _ = full.mesh()
    u0 = 0.9 + 0.05 * np.cos(th)
    a = qs_solve(QSProblem(flat_foliation(full, r), u0))
    thr, _ = AXI.mesh()
    b = qs_solve(QSProblem(flat_foliation(AXI, r), 0.9 + 0.05 * np.cos(thr)))
    assert np.abs(a.lapse[..., 0] - b.lapse[..., 0]).max() < 1e-8
    assert a.lapse.max() <= 1.0


def test_non_axisymmetric_solve_stays_bounded():
    grid = SphereGrid(6, 12)
    r = np.geomspace(1, 3, 30)
    th, ph = grid.mesh()
    u0 = 0.9 + 0.05 * np.sin(th) ** 2 * np.cos(2 * ph)
    sol = qs_solve(QSProblem(flat_foliation(grid, r), u0))
    assert sol.status == "ok"
    assert sol.lapse.max() <= 1 + 1e-8
    assert np.ptp(sol.lapse[-1]) < np.ptp(u0)


def test_hawking_mass_monotone_for_scalar_flat_flow():
    r = np.geomspace(1, 20, 200)
    th, _ = AXI.mesh()
    fm = quasi_spherical_extension(AXI, r, 1.3 - 0.2 * np.cos(th) ** 2)
    m = np.array([leaf_hawking_mass(fm, k) for k in range(0, len(r), 5)])
    assert np.all(np.diff(m) >= -1e-9)


def test_extension_is_scalar_flat():
    r = np.geomspace(1, 3, 120)
    th, _ = AXI.mesh()
    fm = quasi_spherical_extension(AXI, r, 1.2 + 0.1 * np.cos(th) ** 2)
    R = ambient_scalar_curvature(fm).values
    assert np.abs(R[3:-3]).max() < 1e-5


# bridge


def _schwarzschild_collar(m=0.4, r1=1.5, n=101):
    return schwarzschild_foliation(AXI, m, np.linspace(1, r1, n))


def test_bridge_over_schwarzschild_is_flat():
    ext = _schwarzschild_collar()
    bridge = build_bridge(2.0, ext)
    k = bridge.meta["sigma_index"]
    r = ext.slices[: k + 1]
    u = bridge.meta["relative_lapse"][:, :, 0]
    assert np.abs(u - np.sqrt(1 - 0.8 / r)[:, None]).max() < 1e-8
    rep = bridge_report(bridge, 2.0, ext)
    assert rep["metric_match_inner"] == 0 and rep["metric_match_outer"] == 0
    assert rep["H_inner_error"] < 1e-4
    assert rep["H_outer_gap_min"] > 0
    assert np.abs(ambient_scalar_curvature(bridge).values[2:-2]).max() < 1e-8


def test_bridge_anisotropic_gap():
    ext = _schwarzschild_collar()
    th, _ = AXI.mesh()
    Hm = 2.0 + 0.2 * np.cos(th) ** 2
    bridge = build_bridge(Hm, ext)
    rep = bridge_report(bridge, Hm, ext)
    assert rep["H_inner_error"] < 1e-4
    assert rep["H_outer_gap_min"] > 0
    assert rep["lapse_max"] <= 1.0


def test_bridge_degenerate_and_preconditions():
    ext = _schwarzschild_collar()
    Hp = slice_mean_curvature(ext, 0).values
    with pytest.raises(BridgeDegenerate):
        build_bridge(Hp, ext)
    with pytest.raises(PreconditionViolated):
        build_bridge(0.5 * Hp, ext)
    with pytest.raises(PreconditionViolated):
        build_bridge(-1.0, ext)


def test_shift_coefficient():
    assert boundary_shift_coefficient(3) == 4.0
    assert boundary_shift_coefficient(4) == 3.0


def test_solution_snapshot_roundtrip(tmp_path):
    r = np.geomspace(1, 2, 20)
    sol = qs_solve(QSProblem(flat_foliation(AXI, r), 0.9))
    path = tmp_path / "sol.snap"
    snapshot.save(path, sol)
    back = snapshot.load(path)
    assert np.array_equal(back.lapse, sol.lapse)
    assert np.array_equal(back.total_lapse, sol.total_lapse)
    assert back.status == sol.status


def test_tilted_bridge_zero_tilt_matches_bridge():
    from masskit.quasispherical import build_tilted_bridge

    ext = _schwarzschild_collar()
    a = build_bridge(2.0, ext)
    b = build_tilted_bridge(0.0, 2.0, 1.0, ext)
    assert np.array_equal(a.lapse, b.lapse)
    assert np.array_equal(a.components, b.components)


def test_tilted_bridge_boundary_value():
    from masskit.quasispherical import build_tilted_bridge

    ext = _schwarzschild_collar()
    s = 0.05
    b = build_tilted_bridge(s, 2.0, 1.0, ext)
    # collar boundary mean curvature H_minus - 4 s dpsi/dn
    assert slice_mean_curvature(b, 0).values == pytest.approx(2.0 - 4 * s, abs=1e-12)
    assert b.meta["u0"] == pytest.approx(2 * np.sqrt(0.2) / (2.0 - 4 * s))


def test_tilted_bridge_rejects_large_tilt():
    from masskit.quasispherical import build_tilted_bridge

    ext = _schwarzschild_collar()
    Hp = slice_mean_curvature(ext, 0).values
    with pytest.raises(PreconditionViolated):
        build_tilted_bridge(0.1, 2.0, 1.0, ext, H_plus=3 * Hp)
