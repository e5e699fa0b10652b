"""Prescribed-scalar-curvature lapse flow and the boundary bridge metric.

For a foliated background ``g_t + U_b^2 dt^2`` we look for a lapse
``U = u U_b`` such that ``g_t + U^2 dt^2`` has scalar curvature ``R~``.  In
terms of the unit-lapse leaf invariants ``H = tr(d_t g_t)/2`` and
``P = |d_t g_t / 2|^2 + H^2 + 2 d_t H`` the condition reads

    H dU/dt = U^2 Lap U + U P / 2 - U^3 R(g_t) / 2 + U^3 R~ / 2,

which for a unit-lapse background (``P = R(g_t) - R(g)``) is the classical
quasi-spherical equation.  ``u`` is the lapse relative to the background.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    BridgeDegenerate,
    LapseBlowup,
    MasskitError,
    ParabolicityLost,
    PreconditionViolated,
    StepUnderflow,
)
from .geometry import (
    DIMENSION,
    Field,
    FoliatedMetric,
    _laplacian,
    leaf_source_terms,
    slice_mean_curvature,
)

log = logging.getLogger(__name__)

__all__ = [
    "QSProblem",
    "QSSolution",
    "qs_solve",
    "build_bridge",
    "build_tilted_bridge",
    "bridge_report",
    "quasi_spherical_extension",
]

U_CAP = 10.0
U_FLOOR = 1e-4
MAX_DENSE_JACOBIAN = 4096


def _values(f):
    return f.values if isinstance(f, Field) else np.asarray(f, float)


@dataclass(frozen=True, eq=False)
class QSProblem:
    background: FoliatedMetric
    u0: np.ndarray
    target_R: np.ndarray = 0.0
    t_span: tuple = None

    def __post_init__(self):
        bg = self.background
        u0 = np.broadcast_to(_values(self.u0), bg.grid.shape).astype(float)
        object.__setattr__(self, "u0", u0)
        if np.any(u0 <= 0):
            raise PreconditionViolated("initial lapse must be positive")
        tR = np.broadcast_to(_values(self.target_R), (bg.n_slices,) + bg.grid.shape)
        object.__setattr__(self, "target_R", tR.astype(float))
        span = self.t_span or (bg.slices[0], bg.slices[-1])
        if not (bg.slices[0] <= span[0] < span[1] <= bg.slices[-1] + 1e-12):
            raise PreconditionViolated("t_span outside the background foliation")
        object.__setattr__(self, "t_span", (float(span[0]), float(span[1])))
        H = bg.raw_mean_curvature()
        inside = (bg.slices >= span[0]) & (bg.slices <= span[1])
        if np.any(H[inside] <= 0):
            raise ParabolicityLost("background leaf mean curvature must be positive")


@dataclass(frozen=True, eq=False)
class QSSolution:
    problem: QSProblem
    slices: np.ndarray
    lapse: np.ndarray
    total_lapse: np.ndarray
    reached_t: float
    step_log: np.ndarray
    status: str = "ok"

    def metric(self):
        """Background leaves up to the reached time with the solved lapse."""
        bg = self.problem.background
        k0 = int(np.searchsorted(bg.slices, self.slices[0]))
        fm = bg.restrict(k0, k0 + len(self.slices) - 1)
        return fm.with_lapse(self.total_lapse)


class _Background:
    """Spline model of the leaf data, scaled by area radius for accuracy."""

    def __init__(self, bg, target_R, reduce):
        self.grid = bg.grid.axisymmetric() if reduce else bg.grid
        cut = (lambda a: a[..., :1]) if reduce else (lambda a: a)
        t = bg.slices
        H, P, Rt = leaf_source_terms(bg)
        area = bg.grid.integrate(bg.area_elements()) / (4 * np.pi)
        a2 = area[:, None, None]
        L = np.sqrt(a2)
        self.t = t
        self.A = CubicSpline(t, area)
        self.HL = CubicSpline(t, cut(H * L), axis=0)
        self.PA = CubicSpline(t, cut(P * a2), axis=0)
        self.RA = CubicSpline(t, cut(Rt * a2), axis=0)
        self.TR = CubicSpline(t, cut(target_R), axis=0)
        self.C = CubicSpline(t, cut(bg.components / a2[:, None]), axis=0)
        self.Ub = CubicSpline(t, cut(bg.lapse), axis=0)
        self.cut = cut

    def at(self, t):
        a2 = float(self.A(t))
        return (self.HL(t) / np.sqrt(a2), self.PA(t) / a2, self.RA(t) / a2,
                self.TR(t), self.C(t) * a2)


def _is_axisymmetric(bg, *fields):
    if np.any(bg.components[:, 1] != 0):
        return False
    arrays = [bg.components, bg.lapse] + [np.asarray(f) for f in fields]
    return all(np.ptp(a, axis=-1).max() <= 1e-14 * max(1.0, np.abs(a).max()) for a in arrays)


def qs_solve(p, rtol=1e-11, atol=1e-13, u_cap=U_CAP, u_floor=U_FLOOR, strict=False,
             max_step=np.inf):
    """Integrate the quasi-spherical lapse equation over ``p.t_span``.

    Uses an implicit Runge-Kutta (Radau IIA) integrator with adaptive steps and
    an exact Jacobian.  If the relative lapse leaves ``[u_floor, u_cap]`` the
    integration stops there; the partial solution is returned with
    ``status="blowup"`` unless ``strict`` is set.
    """
    bg = p.background
    reduce = bg.grid.n_phi > 1 and _is_axisymmetric(bg, p.u0, p.target_R)
    model = _Background(bg, p.target_R, reduce)
    grid = model.grid
    shape = grid.shape
    if grid.size > MAX_DENSE_JACOBIAN:
        raise MasskitError(f"grid of {grid.size} nodes too large for the dense-Jacobian solver")
    t0, t1 = p.t_span
    u0 = model.cut(p.u0)
    U0 = (u0 * model.Ub(t0)).ravel()
    eye = np.eye(grid.size).reshape((grid.size,) + shape)

    def rhs(t, U):
        H, P, Rt, TR, comp = model.at(t)
        U = U.reshape(shape)
        if np.any(H <= 0):
            raise ParabolicityLost(f"leaf mean curvature non-positive at t={t}")
        lap = _laplacian(grid, comp, U)
        return ((U**2 * lap + 0.5 * U * P - 0.5 * U**3 * Rt + 0.5 * U**3 * TR) / H).ravel()

    def jac(t, U):
        H, P, Rt, TR, comp = model.at(t)
        U = U.reshape(shape)
        lap = _laplacian(grid, comp, U)
        L = _laplacian(grid, comp[None], eye).reshape(grid.size, grid.size).T
        diag = (2 * U * lap + 0.5 * P - 1.5 * U**2 * Rt + 1.5 * U**2 * TR) / H
        return np.diag(diag.ravel()) + (U**2 / H).reshape(-1, 1) * L

    def ev_cap(t, U):
        return u_cap - np.max(U.reshape(shape) / model.Ub(t))

    def ev_floor(t, U):
        return np.min(U.reshape(shape) / model.Ub(t)) - u_floor

    ev_cap.terminal = ev_floor.terminal = True
    sol = solve_ivp(rhs, (t0, t1), U0, method="Radau", jac=jac, rtol=rtol, atol=atol,
                    dense_output=True, events=(ev_cap, ev_floor), max_step=max_step)
    if sol.status == -1:
        raise StepUnderflow(sol.message)
    status = "ok" if sol.status == 0 else "blowup"
    reached = float(sol.t[-1])
    if status == "blowup":
        log.warning("lapse left [%g, %g] at t=%g", u_floor, u_cap, reached)
        if strict:
            raise LapseBlowup(f"lapse left admissible range at t={reached}")
    mask = (bg.slices >= t0 - 1e-14) & (bg.slices <= reached + 1e-14)
    ts = bg.slices[mask]
    U = sol.sol(ts).T.reshape((len(ts),) + shape)
    U[0] = u0 * model.Ub(t0)
    if reduce:
        U = np.broadcast_to(U, (len(ts),) + bg.grid.shape).copy()
    Ub = bg.lapse[mask]
    return QSSolution(p, ts, U / Ub, U, reached, np.diff(sol.t), status)


# ---------------------------------------------------------------------------
# bridge


def _check_bridge_data(H_minus, H_plus, tol=1e-12):
    if np.any(H_minus <= 0):
        raise PreconditionViolated("H_minus must be positive")
    if np.any(H_plus <= 0):
        raise PreconditionViolated("extension mean curvature must be positive")
    if np.any(H_minus < H_plus - tol * np.abs(H_minus)):
        raise PreconditionViolated("H_minus must dominate the extension mean curvature")
    if np.all(np.abs(H_minus - H_plus) <= tol * np.abs(H_minus)):
        raise BridgeDegenerate("boundary mean curvatures agree identically")


def _bridge_from_u0(u0, ext, sigma_init, margin_factor, max_halvings, solve_kw):
    if np.max(np.abs(u0 - 1.0)) <= 1e-14:
        raise BridgeDegenerate("initial lapse is identically 1")
    t = ext.slices
    sigma_init = float(t[-1] - t[0]) if sigma_init is None else float(sigma_init)
    k_max = int(np.searchsorted(t, t[0] + sigma_init + 1e-12)) - 1
    sol = qs_solve(QSProblem(ext, u0, 0.0, (t[0], t[k_max])), **solve_kw)
    margin = margin_factor * (1.0 - np.min(u0))
    sigma = sigma_init
    for _ in range(max_halvings + 1):
        k = int(np.argmin(np.abs(t - (t[0] + sigma))))
        k = max(k, 2)
        if k < len(sol.slices):
            u_end = sol.lapse[k]
            if np.min(u_end) <= 1.0 - margin and margin > 0:
                bridge = ext.restrict(0, k).with_lapse(sol.total_lapse[: k + 1])
                bridge.meta.update(sigma=float(t[k] - t[0]), sigma_index=k,
                                   relative_lapse=sol.lapse[: k + 1], u0=u0)
                return bridge
        sigma /= 2.0
    raise BridgeDegenerate("endpoint lapse indistinguishable from 1 for all admissible sigma")


def build_bridge(H_minus, extension_neighborhood, sigma_init=None, margin_factor=1e-6,
                 max_halvings=20, **solve_kw):
    """Scalar-flat collar joining boundary data ``(g|_Sigma, H_minus)`` to the
    extension.

    The returned foliation has the extension's leaves on ``[t0, t0 + sigma]``
    and lapse ``u U_+`` where ``u`` solves the quasi-spherical equation with
    ``u(t0) = H_+ / H_minus``.  Its first leaf has mean curvature ``H_minus``
    and its last leaf mean curvature ``H_+ / u >= H_+``.
    """
    ext = extension_neighborhood
    Hm = _values(H_minus) * np.ones(ext.grid.shape)
    Hp = slice_mean_curvature(ext, 0).values
    _check_bridge_data(Hm, Hp)
    return _bridge_from_u0(Hp / Hm, ext, sigma_init, margin_factor, max_halvings, solve_kw)


def boundary_shift_coefficient(n=DIMENSION):
    """Mean-curvature change per unit normal derivative of a conformal factor
    equal to 1 on the boundary: ``H -> H + 2 (n-1)/(n-2) dw/dn``."""
    return 2.0 * (n - 1) / (n - 2)


def build_tilted_bridge(s, H_minus, dpsi_dn, tilted_extension, n=DIMENSION, H_plus=None,
                        s0=None, sigma_init=None, margin_factor=1e-6, max_halvings=20,
                        **solve_kw):
    """Bridge over the tilted extension keeping the boundary gap.

    ``u0 = H(Sigma, g_s) / (H_minus - shift)`` with
    ``shift = 2 (n-1)/(n-2) * s * dpsi/dn``; the collar then has boundary mean
    curvature ``H_minus - shift``.  When ``H_plus`` (the untilted extension's
    boundary mean curvature) is given, ``H(Sigma, g_s) > H_plus / 2`` is
    enforced.
    """
    ext = tilted_extension
    if s < 0 or (s0 is not None and s > s0):
        raise PreconditionViolated("s outside (0, s0]")
    shift = boundary_shift_coefficient(n) * s * _values(dpsi_dn) * np.ones(ext.grid.shape)
    Hm = _values(H_minus) * np.ones(ext.grid.shape)
    denom = Hm - shift
    if np.any(denom <= 0):
        raise PreconditionViolated("tilted boundary mean curvature must stay positive")
    Hs = slice_mean_curvature(ext, 0).values
    if H_plus is not None and np.any(Hs <= 0.5 * _values(H_plus)):
        raise PreconditionViolated("tilt too large: H(Sigma, g_s) <= H(Sigma, g_+) / 2")
    _check_bridge_data(denom, Hs)
    bridge = _bridge_from_u0(Hs / denom, ext, sigma_init, margin_factor, max_halvings, solve_kw)
    k = bridge.meta["sigma_index"]
    H_end = slice_mean_curvature(bridge, k).values
    H_ext = slice_mean_curvature(ext.restrict(0, min(k + 4, ext.n_slices - 1)), k).values
    if not np.any(H_end > H_ext):
        raise BridgeDegenerate("no strict mean-curvature gap at the bridge end")
    bridge.meta.update(s=float(s), shift=shift)
    return bridge


def bridge_report(bridge, H_minus, extension):
    """Residuals of the four-line bridge contract."""
    k = bridge.meta["sigma_index"]
    H_c = slice_mean_curvature(bridge).values
    H_e = slice_mean_curvature(extension).values
    return {
        "sigma": bridge.meta["sigma"],
        "metric_match_inner": float(np.abs(bridge.components[0] - extension.components[0]).max()),
        "metric_match_outer": float(np.abs(bridge.components[k] - extension.components[k]).max()),
        "H_inner_error": float(np.abs(H_c[0] - _values(H_minus)).max()),
        "H_outer_gap_min": float((H_c[k] - H_e[k]).min()),
        "H_outer_gap_max": float((H_c[k] - H_e[k]).max()),
        "lapse_min": float(bridge.meta["relative_lapse"].min()),
        "lapse_max": float(bridge.meta["relative_lapse"].max()),
    }


def quasi_spherical_extension(grid, r, u0, **solve_kw):
    """Scalar-flat exterior ``u^2 dr^2 + r^2 g_S2`` grown from ``u(r[0]) = u0``
    over the flat background."""
    r = np.asarray(r, float)
    bg = FoliatedMetric.from_radius(grid, r, r, 1.0, np.ones_like(r), np.zeros_like(r))
    sol = qs_solve(QSProblem(bg, u0), strict=True, **solve_kw)
    fm = bg.with_lapse(sol.total_lapse)
    return fm


def _encode_solution(sol):
    p = sol.problem
    bg = p.background
    arrays = {
        "bg_slices": bg.slices, "bg_components": bg.components, "bg_lapse": bg.lapse,
        "u0": p.u0, "target_R": p.target_R, "slices": sol.slices, "lapse": sol.lapse,
        "total_lapse": sol.total_lapse, "step_log": sol.step_log,
    }
    meta = {"t_span": list(p.t_span), "reached_t": sol.reached_t, "status": sol.status,
            "breaks": list(bg.breaks)}
    return bg.grid, arrays, meta


def _decode_solution(grid, arrays, meta):
    bg = FoliatedMetric(grid, arrays["bg_slices"], arrays["bg_components"], arrays["bg_lapse"],
                        breaks=tuple(meta["breaks"]))
    p = QSProblem(bg, arrays["u0"], arrays["target_R"], tuple(meta["t_span"]))
    return QSSolution(p, arrays["slices"], arrays["lapse"], arrays["total_lapse"],
                      meta["reached_t"], arrays["step_log"], meta["status"])


from . import snapshot  # noqa: E402

snapshot.register("qs_solution", QSSolution, _encode_solution, _decode_solution)
