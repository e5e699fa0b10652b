"""The five-stage boundary mass reduction and its validation experiments.

Stages: tilt the extension conformally, grow a scalar-flat bridge from the
domain's boundary data, smooth the resulting corner, remove negative scalar
curvature, then trade the concentrated positive scalar curvature for mass.
"""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import (
    EllipticProblem,
    ExteriorManifold,
    boundary_shift,
    conformal_constant,
    conformal_transform,
    interpolate_conformal,
    solve_elliptic,
    tilt_metric,
)
from .errors import (
    DegenerateInput,
    MasskitError,
    NonConvergent,
    NotInExtensionClass,
    PreconditionViolated,
    StageError,
)
from .geometry import (
    DIMENSION,
    Field,
    FoliatedMetric,
    SurfaceMetric,
    ambient_scalar_curvature,
    fd_derivative,
    gauss_scalar_curvature,
)
from .mass import hawking_mass
from .mollifier import corner_from_foliation, mollify_corner
from .quasispherical import build_tilted_bridge

log = logging.getLogger(__name__)

__all__ = [
    "DomainBoundaryData",
    "MassReport",
    "PipelineParams",
    "STAGES",
    "run_mass_reduction",
    "validate_corner_pmt",
    "penrose_check",
    "minimizing_sequence_experiment",
    "bridge_exterior",
    "mollify_exterior",
]

STAGES = ("input", "tilt", "bridge", "mollify", "annihilate", "leveldown")


@dataclass(frozen=True, eq=False)
class DomainBoundaryData:
    """Induced metric and mean curvature of the boundary of a compact domain."""

    induced_metric: SurfaceMetric
    H_minus: Field

    def __post_init__(self):
        H = self.H_minus
        if not isinstance(H, Field):
            H = Field(self.induced_metric.grid,
                      np.broadcast_to(np.asarray(H, float), self.induced_metric.grid.shape).copy(),
                      "1/length")
            object.__setattr__(self, "H_minus", H)
        if np.any(H.values <= 0):
            raise PreconditionViolated("boundary mean curvature must be positive")
        if np.any(gauss_scalar_curvature(self.induced_metric).values <= 0):
            raise PreconditionViolated("boundary scalar curvature must be positive")

    @classmethod
    def round_ball(cls, grid, radius=1.0):
        """Boundary of the flat ball of the given radius."""
        return cls(SurfaceMetric.round(grid, radius), 2.0 / radius)

    @property
    def grid(self):
        return self.induced_metric.grid

    def hawking_mass(self):
        dA = self.induced_metric.area_element()
        return hawking_mass(float(self.grid.integrate(dA)),
                            float(self.grid.integrate(self.H_minus.values**2 * dA)))


@dataclass
class PipelineParams:
    s0: float = 0.1
    delta0: float = 0.05
    sigma_init: float = 0.5
    max_halvings: int = 12
    t0_levels: int = 12
    n: int = DIMENSION
    r_fit_min: float = 50.0


@dataclass
class MassReport:
    stages: list
    diagnostics: dict = field(default_factory=dict)
    final: object = field(default=None, repr=False, compare=False)

    @property
    def verdict(self):
        return self.compute_verdict(self.stages)

    @staticmethod
    def compute_verdict(stages):
        rec = {s["label"]: s for s in stages}
        first, last = rec["input"], rec["leveldown"]
        return {
            "mass_decreased": bool(last["mass"] < first["mass"]),
            "H_within_epsilon": bool(last["H_deficit_max"] <= last["epsilon"]),
        }

    def to_dict(self):
        return {"stages": self.stages, "verdict": self.verdict, "diagnostics": self.diagnostics}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        cols = ["label", "mass", "A", "H_boundary_min", "H_boundary_max", "H_deficit_max",
                "s", "delta", "t0", "epsilon"]
        w = csv.DictWriter(buf, cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for s in self.stages:
            w.writerow({k: ("" if s.get(k) is None else repr(s[k]) if isinstance(s[k], float)
                            else s[k]) for k in cols})
        return buf.getvalue()


def _check_class(domain, ext, tol=1e-8):
    if domain.grid != ext.grid:
        raise NotInExtensionClass("domain and extension use different grids")
    g0 = ext.metric.components[0]
    gap = np.abs(domain.induced_metric.components - g0).max()
    if gap > tol * max(1.0, np.abs(g0).max()):
        raise NotInExtensionClass(f"boundary metrics differ by {gap:.3g}")
    if ext.scalar_curvature.min() < -tol:
        raise NotInExtensionClass("extension has negative scalar curvature")
    Hp = ext.boundary_H().values
    Hm = domain.H_minus.values
    if np.any(Hp <= 0):
        raise NotInExtensionClass("extension boundary mean curvature must be positive")
    if np.any(Hm < Hp - 1e-10 * np.abs(Hm)):
        raise NotInExtensionClass("H_minus must dominate the extension mean curvature")
    if np.all(np.abs(Hm - Hp) <= 1e-10 * np.abs(Hm)):
        raise DegenerateInput("boundary mean curvatures agree identically")


def bridge_exterior(ext, bridge):
    """Replace the collar of ``ext`` by the bridge; the result has a corner
    (break) at the bridge's outer leaf.  The collar is scalar-flat by
    construction, so its curvature field is set to 0 there."""
    k = bridge.meta["sigma_index"]
    fm = ext.metric
    _, _, du_ext = fm.jets()
    du_b = fd_derivative(bridge.lapse, bridge.slices, 1)
    lapse = np.concatenate([bridge.lapse, fm.lapse[k + 1:]])
    d_lapse = np.concatenate([du_b, du_ext[k + 1:]])
    d1, d2, _ = fm.jets()
    new = FoliatedMetric(fm.grid, fm.slices, fm.components, lapse, d1, d2, d_lapse,
                         (k,), fm.u_min, dict(fm.meta))
    R = ext.scalar_curvature.copy()
    R[: k + 1] = 0.0
    meta = dict(ext.meta)
    meta["corner_index"] = k
    return ext.with_metric(new, R, meta=meta, label=ext.label + "+bridge")


def mollify_exterior(ext, delta):
    """Smooth the corner of a bridged exterior; curvature is recomputed only in
    the band, elsewhere it is carried over unchanged."""
    k = ext.meta["corner_index"]
    fm = ext.metric
    c = corner_from_foliation(fm, k)
    mol = mollify_corner(c, delta)
    n0, n1 = mol.meta["band"]
    band = FoliatedMetric(mol.grid, mol.slices[n0:n1], mol.components[n0:n1],
                          mol.lapse[n0:n1], mol.d_components[n0:n1],
                          mol.d2_components[n0:n1], mol.d_lapse[n0:n1])
    R_band = ambient_scalar_curvature(band).values
    n_out = mol.n_slices - n1
    R = np.concatenate([ext.scalar_curvature[:n0], R_band,
                        ext.scalar_curvature[fm.n_slices - n_out:]])
    meta = {k_: v for k_, v in ext.meta.items() if k_ != "corner_index"}
    meta["band"] = (n0, n1)
    return ext.with_metric(mol, R, meta=meta, label=ext.label + "+mollified")


def _stage(label, ext, H_minus, epsilon, mass=None, A=None, **params):
    H = ext.boundary_H().values
    rec = {
        "label": label,
        "mass": float(ext.mass() if mass is None else mass),
        "A": None if A is None else float(A),
        "H_boundary_min": float(H.min()),
        "H_boundary_max": float(H.max()),
        "H_deficit_max": float((H_minus - H).max()),
        "epsilon": float(epsilon),
        "s": None, "delta": None, "t0": None,
    }
    rec.update({k: (None if v is None else float(v)) for k, v in params.items()})
    return rec


def _choose_t0(g_tilde, v, epsilon, levels, n):
    H_ref = g_tilde.boundary_H().values
    t = 1.0
    for _ in range(levels):
        g_hat = interpolate_conformal(g_tilde, v, t, n)
        if np.all(g_hat.boundary_H().values > H_ref - epsilon / 2):
            return t, g_hat
        t /= 2
    raise NonConvergent("no admissible t0")


def run_mass_reduction(domain, extension, epsilon, params=None):
    """Lower the mass of ``extension`` while keeping its boundary mean curvature
    within ``epsilon`` of ``domain.H_minus``.

    ``s`` and ``delta`` are halved from ``params.s0`` / ``params.delta0`` until
    the bracketing inequalities hold, with ``D = (n-1) t0 |A_v|`` the mass gain
    from the final stage:

        m(g_s) < m(g_+) + D/4,          H(g_c) = H_- - shift,
        m(g~) < m(g_s) + D/4,           |H(g~) - H(g_c)| < shift/2,
        m(g^) <= m(g~) - D/2,           shift < epsilon/4,

    where ``shift = 2(n-1)/(n-2) s dpsi/dn``.
    """
    p = params or PipelineParams()
    n = p.n
    if not epsilon > 0:
        raise PreconditionViolated("epsilon must be positive")
    _check_class(domain, extension)
    Hm = domain.H_minus.values
    Hp = extension.boundary_H().values
    rec_in = _stage("input", extension, Hm, epsilon)
    m_in = rec_in["mass"]
    kappa = boundary_shift(n)
    cn = conformal_constant(n)
    attempts = []

    s = p.s0
    for _ in range(p.max_halvings + 1):
        try:
            tilt = tilt_metric(extension, s, n)
        except MasskitError as exc:
            raise StageError("tilt", exc) from exc
        dpsi = tilt.meta["tilt"]["dpsi_dn"].values
        shift = kappa * s * dpsi
        Hs = tilt.boundary_H().values
        if shift.max() >= epsilon / 4 or np.any(Hs <= Hp / 2):
            attempts.append({"s": s, "reason": "tilt margin"})
            s /= 2
            continue
        rec_tilt = _stage("tilt", tilt, Hm, epsilon, A=tilt.meta["tilt"]["psi"].A.A, s=s)
        m_s = rec_tilt["mass"]

        t = tilt.metric.slices
        k_init = int(np.searchsorted(t, t[0] + p.sigma_init + 1e-12)) - 1
        try:
            bridge = build_tilted_bridge(s, Hm, dpsi, tilt.metric.restrict(0, k_init), n,
                                         H_plus=Hp, sigma_init=p.sigma_init)
        except MasskitError as exc:
            raise StageError("bridge", exc) from exc
        bridged = bridge_exterior(tilt, bridge)
        H_c = bridged.boundary_H().values
        rec_bridge = _stage("bridge", bridged, Hm, epsilon, mass=m_s, s=s)
        sigma = bridge.meta["sigma"]

        delta = min(p.delta0, sigma / 2)
        ok_s = True
        for _ in range(p.max_halvings + 1):
            try:
                mol = mollify_exterior(bridged, delta)
            except MasskitError as exc:
                raise StageError("mollify", exc) from exc
            rec_mol = _stage("mollify", mol, Hm, epsilon, mass=m_s, s=s, delta=delta)
            try:
                q4 = -cn * np.minimum(mol.scalar_curvature, 0.0)
                u = solve_elliptic(EllipticProblem(mol, q4, 1.0, 1.0), p.r_fit_min)
                g_tilde = conformal_transform(mol, u, n)
            except MasskitError as exc:
                raise StageError("annihilate", exc) from exc
            R_t = g_tilde.scalar_curvature
            if R_t.min() < -1e-8:
                raise StageError("annihilate",
                                 MasskitError(f"negative curvature {R_t.min():.3g} remains"))
            if R_t.min() < 0:
                log.warning("clamping negative curvature residue %.3g", R_t.min())
                g_tilde = g_tilde.with_metric(g_tilde.metric, np.maximum(R_t, 0.0))
            rec_ann = _stage("annihilate", g_tilde, Hm, epsilon, A=u.A.A, s=s, delta=delta)
            m_tilde = rec_ann["mass"]
            H_tilde = g_tilde.boundary_H().values
            try:
                v = solve_elliptic(EllipticProblem(g_tilde, -cn * g_tilde.scalar_curvature,
                                                   1.0, 1.0), p.r_fit_min)
                t0, g_hat = _choose_t0(g_tilde, v, epsilon, p.t0_levels, n)
            except MasskitError as exc:
                raise StageError("leveldown", exc) from exc
            rec_lev = _stage("leveldown", g_hat, Hm, epsilon, A=v.A.A, s=s, delta=delta, t0=t0)
            m_hat = rec_lev["mass"]
            D = (n - 1) * t0 * abs(v.A.A)
            brackets = {
                "tilt_mass": m_s < m_in + D / 4,
                "bridge_H": bool(np.abs(H_c - (Hm - shift)).max() <= 1e-4),
                "annihilate_mass": m_tilde < m_s + D / 4,
                "annihilate_H": bool(np.all(np.abs(H_tilde - H_c) < shift / 2)),
                "leveldown_mass": m_hat <= m_tilde - D / 2,
                "shift": bool(shift.max() < epsilon / 4),
            }
            attempts.append({"s": s, "delta": delta, "t0": t0, "D": D,
                             "brackets": dict(brackets)})
            if all(brackets.values()):
                stages = [rec_in, rec_tilt, rec_bridge, rec_mol, rec_ann, rec_lev]
                diag = {
                    "sigma": sigma,
                    "shift_max": float(shift.max()),
                    "dpsi_dn_mean": float(dpsi.mean()),
                    "A_v": v.A.A,
                    "D": D,
                    "attempts": attempts,
                    "margins": {
                        "tilt_mass": m_in + D / 4 - m_s,
                        "annihilate_mass": m_s + D / 4 - m_tilde,
                        "annihilate_H": float((shift / 2 - np.abs(H_tilde - H_c)).min()),
                        "leveldown_mass": m_tilde - D / 2 - m_hat,
                    },
                }
                return MassReport(stages, diag, g_hat)
            if not brackets["tilt_mass"] or not brackets["bridge_H"]:
                ok_s = False
                break
            delta /= 2
        if ok_s:
            raise StageError("mollify", NonConvergent("delta halvings exhausted"))
        s /= 2
    raise StageError("tilt", NonConvergent("s halvings exhausted"))


def validate_corner_pmt(domain, extension, inner_R_min=0.0, tol=1e-4):
    """Positive mass with corners: ``m(g_+) >= 0``, and ``> 0`` if the mean
    curvature jump is somewhere strict.  The positive margin is measured."""
    if inner_R_min < -1e-8 or extension.scalar_curvature.min() < -1e-8:
        raise PreconditionViolated("scalar curvature must be non-negative on both sides")
    Hm = domain.H_minus.values
    Hp = extension.boundary_H().values
    if np.any(Hm < Hp - 1e-8):
        raise PreconditionViolated("H_minus must dominate H_plus")
    m = extension.mass()
    strict = bool(np.any(Hm - Hp > 1e-8))
    ok = m >= -tol and (not strict or m > 0)
    return {"mass": m, "strict_jump": strict, "jump_max": float((Hm - Hp).max()),
            "passes": bool(ok)}


def penrose_check(ext, tol=1e-4):
    """Minimal-area scan over the leaves; compares ``m`` with
    ``sqrt(A_min / 16 pi)``."""
    fm = ext.metric
    area = fm.grid.integrate(fm.area_elements())
    k = int(np.argmin(area))
    A_min = float(area[k])
    if 0 < k < len(area) - 1:
        t = fm.slices[k - 1:k + 2]
        c = np.polyfit(t, area[k - 1:k + 2], 2)
        A_min = float(np.polyval(c, -c[1] / (2 * c[0])))
    m = ext.mass()
    bound = math.sqrt(A_min / (16 * math.pi))
    interior = 0 < k < len(area) - 1
    # without an interior minimal sphere the inequality says nothing here
    return {"mass": m, "A_min": A_min, "bound": bound, "interior_minimum": interior,
            "passes": bool(m >= bound - tol) if interior else True}


def minimizing_sequence_experiment(domain, family, epsilons, params=None, chain=True):
    """Repeated mass reduction with shrinking ``epsilons``.

    ``family`` is an ExteriorManifold or a sequence of them.  With ``chain``
    each run starts from the previous run's output, so masses cannot
    increase.  Rows report mass, boundary mean curvature range and the Hawking
    mass of Sigma for every iterate together with class diagnostics.
    """
    members = [family] if isinstance(family, ExteriorManifold) else list(family)
    rows = []
    current = members[0]
    dA = domain.induced_metric.area_element()
    area = float(domain.grid.integrate(dA))
    for i, eps in enumerate(epsilons):
        ext = current if chain else members[min(i, len(members) - 1)]
        Hc = ext.boundary_H().values
        if np.all(np.abs(Hc - domain.H_minus.values) <= 1e-10 * np.abs(Hc)):
            rows.append(_sequence_row(i, eps, ext, domain, area, dA, stationary=True))
            continue
        report = run_mass_reduction(domain, ext, eps, params)
        out = report.final
        rows.append(_sequence_row(i, eps, out, domain, area, dA, report=report))
        current = out
    return rows


def _sequence_row(i, eps, ext, domain, area, dA, report=None, stationary=False):
    H = ext.boundary_H().values
    g0 = ext.metric.components[0]
    return {
        "iteration": i,
        "epsilon": float(eps),
        "mass": float(report.stages[-1]["mass"] if report else ext.mass()),
        "H_min": float(H.min()),
        "H_max": float(H.max()),
        "hawking_mass": hawking_mass(area, float(domain.grid.integrate(H**2 * dA))),
        "R_min": float(ext.scalar_curvature.min()),
        "boundary_metric_gap": float(np.abs(g0 - domain.induced_metric.components).max()),
        "verdict": report.verdict if report else None,
        "stationary": stationary,
    }
