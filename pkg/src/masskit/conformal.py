"""Linear elliptic problems on an exterior region and conformal metric changes.

The exterior manifold is one radial foliation ``g_t + U^2 dt^2`` over
``[r0, r_max]`` whose leaf coordinate is the asymptotic chart radius.  The
equation ``Lap w + q w = 0`` is discretized by finite volumes in ``t``
(geometric-mean face conductances, exact for radial harmonic functions of the
flat metric) and spectrally on the leaves.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .errors import (
    MasskitError,
    NonPositiveFactor,
    PreconditionViolated,
    QuadratureUnderResolved,
    SolverDiverged,
)
from .geometry import (
    DIMENSION,
    Field,
    FoliatedMetric,
    _inverse,
    _laplacian,
    ambient_scalar_curvature,
    fd_derivative,
    omega,
    slice_mean_curvature,
)
from .mass import adm_flux_mass, chart_from_foliation, fit_expansion_coefficient
from .models import flat_foliation, schwarzschild_foliation

log = logging.getLogger(__name__)

__all__ = [
    "ExteriorManifold",
    "EllipticProblem",
    "EllipticSolution",
    "IndefinitePotential",
    "conformal_constant",
    "default_radii",
    "solve_elliptic",
    "energy_identity_A",
    "conformal_transform",
    "tilt_metric",
    "interpolate_conformal",
    "static_descent",
    "foliated_laplacian",
]

R_MAX = 400.0


class IndefinitePotential(UserWarning):
    """The zeroth-order coefficient changes sign; no maximum principle."""


def conformal_constant(n=DIMENSION):
    """``c_n = (n-2) / (4 (n-1))``."""
    return (n - 2) / (4.0 * (n - 1))


def conformal_power(n=DIMENSION):
    return 4.0 / (n - 2)


def default_radii(r0=1.0, r_max=R_MAX, ratio=1.0125):
    """Geometrically spaced leaf radii from ``r0`` to ``r_max`` inclusive."""
    k = int(math.ceil(math.log(r_max / r0) / math.log(ratio)))
    return r0 * (r_max / r0) ** (np.arange(k + 1) / k)


def _values(f):
    if isinstance(f, EllipticSolution):
        return f.u
    return f.values if isinstance(f, Field) else np.asarray(f, float)


@dataclass(frozen=True, eq=False)
class ExteriorManifold:
    """Asymptotically flat region outside ``Sigma`` (the leaf at ``t = r0``).

    ``infinity_factor`` is the constant ``lambda^2`` with ``g -> lambda^2 delta``
    in the chart ``x = t * (unit vector)``; masses are evaluated for the
    renormalized chart and rescaled.
    """

    metric: FoliatedMetric
    scalar_curvature: np.ndarray = None
    infinity_factor: float = 1.0
    label: str = ""
    n: int = DIMENSION
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scalar_curvature is None:
            R = ambient_scalar_curvature(self.metric).values
        else:
            R = np.broadcast_to(np.asarray(self.scalar_curvature, float),
                                (self.metric.n_slices,) + self.metric.grid.shape).copy()
        object.__setattr__(self, "scalar_curvature", R)
        if not self.infinity_factor > 0:
            raise NonPositiveFactor("infinity factor must be positive")

    # factories -----------------------------------------------------------

    @classmethod
    def flat(cls, grid, r0=1.0, r_max=R_MAX, ratio=1.0125):
        fm = flat_foliation(grid, default_radii(r0, r_max, ratio))
        return cls(fm, 0.0, label="flat")

    @classmethod
    def schwarzschild(cls, grid, m, r0=1.0, r_max=R_MAX, ratio=1.0125):
        """Area-radius Schwarzschild exterior of the sphere ``r = r0``."""
        fm = schwarzschild_foliation(grid, m, default_radii(r0, r_max, ratio))
        return cls(fm, 0.0, label=f"schwarzschild(m={m})")

    @classmethod
    def quasi_spherical(cls, grid, u0, r0=1.0, r_max=R_MAX, ratio=1.0125, target_R=None,
                        **solve_kw):
        """Graft ``u^2 dr^2 + r^2 g_S2`` solving the quasi-spherical equation
        from ``u(r0) = u0`` over the flat background, with scalar curvature
        ``target_R(r)`` (a callable; zero by default)."""
        from .quasispherical import QSProblem, qs_solve

        r = default_radii(r0, r_max, ratio)
        bg = flat_foliation(grid, r)
        R = np.zeros(len(r)) if target_R is None else np.asarray(target_R(r), float)
        if R.ndim == 1:
            R = R[:, None, None]
        R = np.broadcast_to(R, (len(r),) + grid.shape)
        sol = qs_solve(QSProblem(bg, u0, R), strict=True, **solve_kw)
        return cls(bg.with_lapse(sol.total_lapse), R, label="quasi-spherical")

    # geometry --------------------------------------------------------------

    @property
    def grid(self):
        return self.metric.grid

    @property
    def radii(self):
        return self.metric.slices

    def boundary_metric(self):
        return self.metric.surface(0)

    def boundary_H(self):
        return slice_mean_curvature(self.metric, 0)

    def with_metric(self, metric, scalar_curvature, **kw):
        return replace(self, metric=metric, scalar_curvature=scalar_curvature, **kw)

    def mass_shells(self, r_min=50.0, n_shells=8):
        t = self.radii
        r_min = min(r_min, t[-1] / 8.0)
        target = np.geomspace(r_min, t[-1], n_shells)
        idx = np.unique(np.abs(t[:, None] - target[None]).argmin(axis=0))
        return idx

    def mass(self, r_min=50.0, n_shells=8, check_decay=True):
        """ADM mass from flux integrals on coordinate spheres of radius in
        ``[r_min, r_max]``, corrected for the factor at infinity."""
        lam2 = self.infinity_factor
        chart = chart_from_foliation(self.metric, self.mass_shells(r_min, n_shells), lam2)
        return math.sqrt(lam2) * adm_flux_mass(chart, check_decay=check_decay).mass


def foliated_laplacian(fm, w):
    """``Lap_g w`` for ``g = g_t + U^2 dt^2`` with finite differences in t."""
    t, br = fm.slices, fm.breaks
    U = fm.lapse
    ae = fm.area_elements()
    a = ae / U
    dw = fd_derivative(w, t, 1, br)
    radial = fd_derivative(a * dw, t, 1, br) / (U * ae)
    return radial + _leaf_operator(fm.grid, fm.components, U, w)


def _leaf_operator(grid, comp, U, w):
    """``Lap_h w + U^-1 <dU, dw>_h`` on every leaf."""
    inv, _ = _inverse(comp)
    Ut, Up = grid.d_theta(U, 1), grid.d_phi(U)
    wt, wp = grid.d_theta(w, 1), grid.d_phi(w)
    drift = ((inv[..., 0, :, :] * Ut + inv[..., 1, :, :] * Up) * wt
             + (inv[..., 1, :, :] * Ut + inv[..., 2, :, :] * Up) * wp) / U
    return _laplacian(grid, comp, w) + drift


@dataclass(frozen=True, eq=False)
class EllipticProblem:
    """``Lap_g w + q w = 0``, ``w = boundary_value`` on Sigma, ``w -> value_at_infinity``."""

    manifold: ExteriorManifold
    potential: np.ndarray = 0.0
    boundary_value: float = 1.0
    value_at_infinity: float = 1.0

    def __post_init__(self):
        M = self.manifold
        q = np.broadcast_to(_values(self.potential),
                            (M.metric.n_slices,) + M.grid.shape).astype(float)
        if not np.all(np.isfinite(q)):
            raise PreconditionViolated("potential must be finite")
        object.__setattr__(self, "potential", q)
        if q.max() > 0 and q.min() < 0:
            warnings.warn("potential changes sign", IndefinitePotential, stacklevel=2)


@dataclass(frozen=True, eq=False)
class EllipticSolution:
    problem: EllipticProblem
    u: np.ndarray
    A: object
    normal_derivative: Field
    residual: float

    @property
    def values(self):
        return self.u


def _reducible(M, q):
    fm = M.metric
    if fm.grid.n_phi == 1 or np.any(fm.components[:, 1] != 0):
        return False
    return all(np.ptp(a, axis=-1).max() <= 1e-14 * max(1.0, np.abs(a).max())
               for a in (fm.components, fm.lapse, q))


def _far_integral(t, a):
    """``int_{t_K}^inf dt / a`` with ``a = alpha t^2 + beta t`` fitted to the last
    two leaves (per node)."""
    t1, t2 = t[-2], t[-1]
    a1, a2 = a[-2], a[-1]
    det = t1**2 * t2 - t2**2 * t1
    alpha = (a1 * t2 - a2 * t1) / det
    beta = (a2 * t1**2 - a1 * t2**2) / det
    x = beta / (alpha * t2)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    series = (1 - x / 2 + x**2 / 3) / (alpha * t2)
    return np.where(small, series, np.log1p(safe) / np.where(small, 1.0, beta))


def solve_elliptic(p, r_fit_min=50.0, n_terms=3):
    """Finite-volume solve of ``p``; returns the solution at every leaf node,
    its expansion coefficient A and the normal derivative on Sigma."""
    M = p.manifold
    fm = M.metric
    q = p.potential
    reduce = _reducible(M, q)
    cut = (lambda a: a[..., :1]) if reduce else (lambda a: a)
    grid = fm.grid.axisymmetric() if reduce else fm.grid
    comp, U, q = cut(fm.components), cut(fm.lapse), cut(q)
    t = fm.slices
    K, N = len(t), grid.size
    if K < 4:
        raise MasskitError("need at least four leaves")
    inv, det = _inverse(comp)
    ae = np.sqrt(det) / grid.sin[:, None]
    a = (ae / U).reshape(K, N)
    h = np.diff(t)
    C = np.sqrt(a[:-1] * a[1:]) / h[:, None]
    vol = np.zeros(K)
    vol[:-1] += h / 2
    vol[1:] += h / 2
    V = (U * ae).reshape(K, N) * vol[:, None]

    eye = np.eye(N).reshape((N,) + grid.shape)
    Lap = _laplacian(grid, comp[:, None], eye[None]).reshape(K, N, N).transpose(0, 2, 1)
    Ut = grid.d_theta(U, 1).reshape(K, N)
    Up = grid.d_phi(U).reshape(K, N)
    inv = inv.reshape(K, 3, N)
    ct = (inv[:, 0] * Ut + inv[:, 1] * Up) / U.reshape(K, N)
    cp = (inv[:, 1] * Ut + inv[:, 2] * Up) / U.reshape(K, N)
    Dt, Dp = grid.dtheta_matrix, grid.dphi_matrix
    L = Lap + ct[:, :, None] * Dt[None] + cp[:, :, None] * Dp[None]
    L -= np.einsum("kij->ki", L)[:, :, None] * np.eye(N)[None]   # constants map to 0
    Qd = q.reshape(K, N)

    b_val, w_inf = float(p.boundary_value), float(p.value_at_infinity)
    I_far = _far_integral(t, a)
    diag_blocks = []
    rhs = np.zeros((K - 1, N))
    for k in range(1, K):
        B = V[k][:, None] * L[k] + np.diag(V[k] * Qd[k])
        d = -C[k - 1].copy()
        if k < K - 1:
            d -= C[k]
        else:
            d -= 1.0 / I_far
            rhs[-1] -= w_inf / I_far
        diag_blocks.append(B + np.diag(d))
    rhs[0] -= C[0] * b_val
    A_mat = sp.block_diag(diag_blocks, format="lil")
    for k in range(1, K - 1):
        i, j = (k - 1) * N, k * N
        A_mat[i:i + N, j:j + N] = sp.diags(C[k])
        A_mat[j:j + N, i:i + N] = sp.diags(C[k])
    A_mat = A_mat.tocsc()
    try:
        sol = splu(A_mat).solve(rhs.ravel())
    except RuntimeError as exc:
        raise SolverDiverged(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SolverDiverged("non-finite solution")
    res = np.abs(A_mat @ sol - rhs.ravel()).max() / max(1.0, np.abs(rhs).max())
    if res > 1e-8:
        raise SolverDiverged(f"linear residual {res:.3g}")
    w = np.empty((K, N))
    w[0] = b_val
    w[1:] = sol.reshape(K - 1, N)

    # boundary flux with the half-cell source correction
    S0 = L[0] @ w[0] + Qd[0] * w[0]
    F0 = C[0] * (w[1] - w[0]) + V[0] * S0
    dn = (F0 / ae.reshape(K, N)[0]).reshape(grid.shape)

    shape = (K,) + grid.shape
    w = w.reshape(shape)
    if reduce:
        w = np.broadcast_to(w, (K,) + fm.grid.shape).copy()
        dn = np.broadcast_to(dn, fm.grid.shape).copy()
    sel = t >= min(r_fit_min, t[-1] / 8.0)
    fit = fit_expansion_coefficient(w[sel], t[sel], M.n, fm.grid, n_terms, w_inf, tol=1e-6)
    return EllipticSolution(p, w, fit, Field(fm.grid, dn, "1/length"), float(res))


def _radial_integral(t, f, breaks=()):
    """Cumulative integral of ``f`` (leading axis over ``t``), piecewise cubic
    between breaks."""
    edges = [0] + [b for b in breaks] + [len(t) - 1]
    out = np.zeros_like(f)
    acc = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo < 3:
            raise QuadratureUnderResolved("need at least four leaves per smooth segment")
        cs = CubicSpline(t[lo:hi + 1], f[lo:hi + 1], axis=0).antiderivative()
        seg = cs(t[lo:hi + 1]) - cs(t[lo])
        out[lo:hi + 1] = acc + seg
        acc = out[hi]
    return out


def energy_identity_A(sol, p=None, r_min=50.0):
    """Expansion coefficient from integration by parts,

        -(n-2) omega_{n-1} w_inf A
            = int (|grad w|^2 - q w^2) dV + w(Sigma) oint_Sigma dw/dn dmu,

    evaluated on truncated regions ``r <= rho`` and extrapolated in ``1/rho``.
    """
    p = sol.problem if p is None else p
    M = p.manifold
    fm = M.metric
    grid, t = fm.grid, fm.slices
    w, q, U = sol.u, p.potential, fm.lapse
    dA = fm.area_elements()
    dw = fd_derivative(w, t, 1, fm.breaks)
    inv, _ = _inverse(fm.components)
    wt, wp = grid.d_theta(w, 1), grid.d_phi(w)
    grad2 = (dw / U) ** 2 + inv[:, 0] * wt**2 + 2 * inv[:, 1] * wt * wp + inv[:, 2] * wp**2
    dens = grid.integrate((grad2 - q * w**2) * U * dA)
    vol = _radial_integral(t, dens, fm.breaks)
    bdry = p.boundary_value * grid.integrate(sol.normal_derivative.values * dA[0])
    F = vol + bdry
    sel = t >= min(r_min, t[-1] / 8.0)
    V = np.vander(1.0 / t[sel], 3, increasing=True)
    coef, *_ = np.linalg.lstsq(V, F[sel], rcond=None)
    denom = -(M.n - 2) * omega(M.n - 1) * p.value_at_infinity
    if denom == 0:
        raise QuadratureUnderResolved("identity degenerate for zero value at infinity")
    return float(coef[0] / denom)


def conformal_transform(g, w, n=DIMENSION, laplacian=None):
    """``w^(4/(n-2)) g`` with the scalar curvature
    ``w^-(n+2)/(n-2) (-(4(n-1)/(n-2)) Lap w + R w)``.

    ``w`` is an EllipticSolution (then ``Lap w = -q w``) or node values, whose
    Laplacian is either given or computed by finite differences.
    """
    wv = _values(w)
    fm = g.metric
    wv = np.broadcast_to(wv, (fm.n_slices,) + fm.grid.shape)
    if np.any(wv <= 0):
        raise NonPositiveFactor("conformal factor must be positive")
    if np.all(wv == 1.0):
        return replace(g, meta=dict(g.meta))
    if laplacian is None:
        if isinstance(w, EllipticSolution):
            laplacian = -w.problem.potential * wv
        else:
            laplacian = foliated_laplacian(fm, wv)
    k = conformal_power(n)
    t, br = fm.slices, fm.breaks
    d1, d2, du = fm.jets()
    w1 = fd_derivative(wv, t, 1, br)
    w2 = fd_derivative(wv, t, 2, br)
    f = wv**k
    f1 = k * wv ** (k - 1) * w1
    f2 = k * (k - 1) * wv ** (k - 2) * w1**2 + k * wv ** (k - 1) * w2
    comp = f[:, None] * fm.components
    dcomp = f1[:, None] * fm.components + f[:, None] * d1
    d2comp = f2[:, None] * fm.components + 2 * f1[:, None] * d1 + f[:, None] * d2
    lapse = wv ** (k / 2) * fm.lapse
    dlapse = (k / 2) * wv ** (k / 2 - 1) * w1 * fm.lapse + wv ** (k / 2) * du
    new = FoliatedMetric(fm.grid, t, comp, lapse, dcomp, d2comp, dlapse, br, fm.u_min,
                         dict(fm.meta))
    cn = 4.0 * (n - 1) / (n - 2)
    R = wv ** (-(n + 2) / (n - 2)) * (-cn * laplacian + g.scalar_curvature * wv)
    w_inf = _value_at_infinity(w, wv, fm)
    return replace(g, metric=new, scalar_curvature=R,
                   infinity_factor=g.infinity_factor * w_inf**k, meta=dict(g.meta))


def _value_at_infinity(w, wv, fm, r_min=50.0):
    """Limit of ``w`` at infinity: exact for solutions, else a fit in 1/r."""
    if isinstance(w, EllipticSolution):
        return w.problem.value_at_infinity
    t = fm.slices
    sel = t >= min(r_min, t[-1] / 8.0)
    means = fm.grid.integrate(wv[sel]) / (4 * np.pi)
    V = np.vander(1.0 / t[sel], 3, increasing=True)
    coef, *_ = np.linalg.lstsq(V, means, rcond=None)
    return float(coef[0])


def boundary_shift(n=DIMENSION):
    """``H`` changes by ``2(n-1)/(n-2) dw/dn`` under ``w^(4/(n-2)) g`` when
    ``w = 1`` on Sigma."""
    return 2.0 * (n - 1) / (n - 2)


def tilt_metric(g, s, n=DIMENSION):
    """``(1 - s psi)^(4/(n-2)) g`` with ``psi`` harmonic, 0 on Sigma, 1 at infinity.

    The result carries ``meta['tilt']`` with ``psi`` (EllipticSolution),
    ``dpsi_dn`` and the predicted boundary mean curvature.
    """
    if not 0 <= s < 1:
        raise PreconditionViolated("s must lie in [0, 1)")
    psi = solve_elliptic(EllipticProblem(g, 0.0, 0.0, 1.0))
    H0 = g.boundary_H().values
    dpsi = psi.normal_derivative.values
    if s == 0:
        out = replace(g, meta=dict(g.meta))
    else:
        w = 1.0 - s * psi.u
        out = conformal_transform(g, w, n, laplacian=np.zeros_like(w))
        out = replace(out, infinity_factor=g.infinity_factor * (1.0 - s) ** conformal_power(n))
    out.meta["tilt"] = {
        "s": float(s),
        "psi": psi,
        "dpsi_dn": Field(g.grid, dpsi, "1/length"),
        "H_predicted": H0 - boundary_shift(n) * s * dpsi,
    }
    return out


def interpolate_conformal(g_tilde, v, t, n=DIMENSION):
    """``(1 + t (v - 1))^(4/(n-2)) g_tilde``."""
    if not 0 <= t <= 1:
        raise PreconditionViolated("t must lie in [0, 1]")
    if t == 0:
        return replace(g_tilde, meta=dict(g_tilde.meta))
    if t == 1:
        return conformal_transform(g_tilde, v, n)
    vv = v.u
    vt = 1.0 + t * (vv - 1.0)
    if np.any(vt <= 0):
        raise NonPositiveFactor("interpolated factor must be positive")
    lap = -t * v.problem.potential * vv
    out = conformal_transform(g_tilde, vt, n, laplacian=lap)
    w_inf = 1.0 + t * (v.problem.value_at_infinity - 1.0)
    return replace(out, infinity_factor=g_tilde.infinity_factor * w_inf ** conformal_power(n))


def static_descent(g, ts=(0.0, 0.25, 0.5, 0.75, 1.0), n=DIMENSION, tol=1e-12):
    """Conformal descent ``v_t = (1 - t) + t u`` with ``Lap u - c_n R u = 0``.

    Returns a dict with ``A`` (fitted), ``A_identity``, ``dudn``, the sampled
    ``t`` and the flux masses of ``v_t^(4/(n-2)) g`` with the predicted line
    ``m(g) + (n-1) t A``.
    """
    R = g.scalar_curvature
    if R.min() < -tol:
        raise PreconditionViolated("static descent needs R >= 0")
    m0 = g.mass()
    if np.abs(R).max() <= tol:
        ones = np.ones(g.grid.shape)
        return {"A": 0.0, "A_identity": 0.0, "dudn": Field(g.grid, 0 * ones, "1/length"),
                "t": list(ts), "mass": [m0] * len(ts), "predicted": [m0] * len(ts),
                "solution": None}
    prob = EllipticProblem(g, -conformal_constant(n) * R, 1.0, 1.0)
    sol = solve_elliptic(prob)
    masses, pred = [], []
    for t in ts:
        gt = interpolate_conformal(g, sol, t, n)
        masses.append(gt.mass())
        pred.append(m0 + (n - 1) * t * sol.A.A)
    return {"A": sol.A.A, "A_identity": energy_identity_A(sol), "dudn": sol.normal_derivative,
            "t": list(ts), "mass": masses, "predicted": pred, "solution": sol}


def _encode_exterior(ext):
    fm = ext.metric
    arrays = {
        "slices": fm.slices, "components": fm.components, "lapse": fm.lapse,
        "d_components": fm.d_components, "d2_components": fm.d2_components,
        "d_lapse": fm.d_lapse, "scalar_curvature": ext.scalar_curvature,
    }
    meta = {"breaks": list(fm.breaks), "u_min": fm.u_min, "label": ext.label, "n": ext.n,
            "infinity_factor": ext.infinity_factor,
            "meta": {k: v for k, v in ext.meta.items() if snapshot._jsonable(v)}}
    return fm.grid, arrays, meta


def _decode_exterior(grid, arrays, meta):
    fm = FoliatedMetric(grid, arrays["slices"], arrays["components"], arrays["lapse"],
                        arrays.get("d_components"), arrays.get("d2_components"),
                        arrays.get("d_lapse"), tuple(meta["breaks"]), meta["u_min"])
    return ExteriorManifold(fm, arrays["scalar_curvature"], meta["infinity_factor"],
                            meta["label"], meta["n"], dict(meta["meta"]))


from . import snapshot  # noqa: E402

snapshot.register("exterior_manifold", ExteriorManifold, _encode_exterior, _decode_exterior)
