"""Mass functionals: ADM flux mass, conformal-expansion mass, Hawking mass."""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DecayViolation, MasskitError, NonConvergent, NonPositiveArea
from .geometry import (
    DIMENSION,
    SphereGrid,
    fd_derivative,
    omega,
    slice_mean_curvature,
)

__all__ = [
    "AsymptoticChart",
    "ExpansionFit",
    "FluxMass",
    "adm_flux_mass",
    "expansion_mass",
    "fit_expansion_coefficient",
    "hawking_mass",
    "leaf_hawking_mass",
    "chart_from_foliation",
    "mass_record",
]


def _frame(grid):
    th, ph = grid.mesh()
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    n = np.stack([st * cp, st * sp, ct])
    e_t = np.stack([ct * cp, ct * sp, -st])
    e_p = np.stack([-sp, cp, np.zeros_like(th)])
    return n, e_t, e_p


@dataclass(frozen=True, eq=False)
class AsymptoticChart:
    """Cartesian metric samples on coordinate spheres ``|x| = rho``.

    ``g`` has shape ``(S, 3, 3, n_theta, n_phi)`` and ``dg[s, k, i, j]`` is
    the partial derivative of ``g_ij`` along ``x^k``.
    """

    grid: SphereGrid
    shell_radii: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    n: int = DIMENSION

    def __post_init__(self):
        r = np.asarray(self.shell_radii, float)
        object.__setattr__(self, "shell_radii", r)
        if np.any(np.diff(r) <= 0):
            raise MasskitError("shell radii must increase")

    @classmethod
    def from_callable(cls, grid, radii, metric, h=1e-4):
        """Sample ``metric(x) -> g_ij`` (x of shape (3, ...)); derivatives by
        fourth-order central differences in each Cartesian direction."""
        n, _, _ = _frame(grid)
        gs, dgs = [], []
        for rho in radii:
            x = rho * n
            gs.append(metric(x))
            d = []
            for k in range(3):
                e = np.zeros((3, 1, 1))
                e[k] = 1.0
                s = h * rho
                d.append((-metric(x + 2 * s * e) + 8 * metric(x + s * e)
                          - 8 * metric(x - s * e) + metric(x - 2 * s * e)) / (12 * s))
            dgs.append(np.stack(d))
        return cls(grid, np.asarray(radii, float), np.stack(gs), np.stack(dgs))

    @classmethod
    def conformally_flat(cls, grid, radii, u, du):
        """``g = u^4 delta`` for a radial factor ``u(rho)`` with derivative ``du``."""
        n, _, _ = _frame(grid)
        eye = np.eye(3)[:, :, None, None]
        gs, dgs = [], []
        for rho in radii:
            gs.append(u(rho) ** 4 * eye * np.ones(grid.shape))
            grad = 4 * u(rho) ** 3 * du(rho) * n
            dgs.append(grad[:, None, None] * eye[None])
        return cls(grid, np.asarray(radii, float), np.stack(gs), np.stack(dgs))


def decay_exponent(chart):
    """Fitted p in ``max |g_ij - delta_ij| ~ C rho^-p`` (inf for exactly flat)."""
    eye = np.eye(3)[:, :, None, None]
    dev = np.array([np.abs(g - eye).max() for g in chart.g])
    if np.all(dev < 1e-14):
        return math.inf
    if np.any(dev <= 0):
        return math.inf
    slope = np.polyfit(np.log(chart.shell_radii), np.log(dev), 1)[0]
    return -slope


@dataclass(frozen=True)
class FluxMass:
    mass: float
    per_shell: np.ndarray
    residual: float
    decay_p: float

    def __float__(self):
        return self.mass


def adm_flux_mass(chart, tol=1e-3, check_decay=True):
    """ADM mass from flux integrals on the chart's shells, extrapolated in 1/rho.

    Each shell value is ``(1 / 4 omega_{n-1}) * oint (g_ij,i - g_ii,j) nu^j dmu``;
    the limit is a least-squares polynomial fit in ``1/rho`` (degree up to 2).
    """
    r = chart.shell_radii
    if len(r) < 3 or r[-1] / r[0] < 4.0 - 1e-12:
        raise MasskitError("need >= 3 shells spanning a factor of 4 in radius")
    nvec, _, _ = _frame(chart.grid)
    vals = []
    for s, rho in enumerate(r):
        dg = chart.dg[s]
        div = np.einsum("iij...->j...", dg)          # sum_i d_i g_ij
        grad_tr = np.einsum("jii...->j...", dg)      # d_j sum_i g_ii
        integrand = np.einsum("j...,j...->...", div - grad_tr, nvec)
        vals.append(rho**2 * chart.grid.integrate(integrand) / (4 * omega(chart.n - 1)))
    vals = np.array(vals)
    p = decay_exponent(chart)
    if check_decay and p <= (chart.n - 2) / 2:
        raise DecayViolation(f"fitted decay exponent {p:.3g} <= {(chart.n - 2) / 2}")
    deg = min(2, len(r) - 1)
    V = np.vander(1.0 / r, deg + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, vals, rcond=None)
    resid = float(np.sqrt(np.mean((V @ coef - vals) ** 2)))
    if resid > tol * max(1.0, abs(coef[0])):
        raise NonConvergent(f"flux extrapolation residual {resid:.3g}")
    return FluxMass(float(coef[0]), vals, resid, p)


def expansion_mass(A, n=DIMENSION):
    """Mass of a scalar-flat conformally flat metric from ``u = 1 + A |x|^(2-n)``."""
    if n < 3:
        raise ValueError("n must be >= 3")
    return (n - 1) * A


@dataclass(frozen=True)
class ExpansionFit:
    A: float
    residual: float
    shells_used: tuple
    coefficients: tuple = ()


def fit_expansion_coefficient(u_on_shells, radii, n=DIMENSION, grid=None, n_terms=2,
                              value_at_infinity=1.0, tol=1e-6):
    """Least-squares fit of shell means of ``u - u_inf`` to ``sum_j c_j rho^(2-n-j)``.

    ``u_on_shells`` is either shell means (1-D) or node values of shape
    ``(S, n_theta, n_phi)`` averaged with ``grid``'s quadrature.
    """
    u = np.asarray(u_on_shells, float)
    radii = np.asarray(radii, float)
    if u.ndim > 1:
        if grid is None:
            raise ValueError("grid needed to average node values")
        u = grid.integrate(u) / (4 * np.pi)
    if abs(u[-1] - value_at_infinity) > 0.2:
        raise MasskitError("u is not close to its value at infinity on the outer shell")
    y = u - value_at_infinity
    V = np.stack([radii ** (2 - n - j) for j in range(n_terms)], axis=1)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = float(np.sqrt(np.mean((V @ coef - y) ** 2)))
    if resid > tol:
        raise NonConvergent(f"expansion fit residual {resid:.3g}")
    return ExpansionFit(float(coef[0]), resid, tuple(radii.tolist()), tuple(coef.tolist()))


def hawking_mass(area, integral_H2):
    """``sqrt(area) / (16 pi)^(3/2) * (16 pi - int H^2)``."""
    if area <= 0:
        raise NonPositiveArea("area must be positive")
    return math.sqrt(area) / (16 * math.pi) ** 1.5 * (16 * math.pi - integral_H2)


def leaf_hawking_mass(fm, k):
    """Hawking mass of leaf ``k`` of a foliated metric."""
    dA = fm.area_elements()[k]
    H = slice_mean_curvature(fm, k).values
    area = float(fm.grid.integrate(dA))
    return hawking_mass(area, float(fm.grid.integrate(H**2 * dA)))


def chart_from_foliation(fm, indices, scale2=1.0):
    """Cartesian chart with ``x = t * (unit vector)`` from a foliated metric.

    The leaf coordinate must be the chart radius on the selected leaves.
    ``scale2`` is the metric's limit factor at infinity; the chart returned is
    for ``g / scale2``.
    """
    grid = fm.grid
    if grid.reduced:
        full = SphereGrid(grid.n_theta, 8)
        comp = np.broadcast_to(fm.components, fm.components.shape[:-1] + (8,))
        lapse = np.broadcast_to(fm.lapse, fm.lapse.shape[:-1] + (8,))
    else:
        full, comp, lapse = grid, fm.components, fm.lapse
    indices = np.asarray(indices)
    lo, hi = max(indices.min() - 3, 0), min(indices.max() + 3, fm.n_slices - 1)
    ks = np.arange(lo, hi + 1)
    t = fm.slices[ks]
    nvec, e_t, e_p = _frame(full)
    s = full.sin[:, None]
    r = t[:, None, None]
    U2 = lapse[ks] ** 2 / scale2
    c = comp[ks] / scale2
    outer = lambda a, b: a[:, None] * b[None, :]
    nn, tt, pp = outer(nvec, nvec), outer(e_t, e_t), outer(e_p, e_p)
    tp = outer(e_t, e_p) + outer(e_p, e_t)
    g = (U2[:, None, None] * nn[None] + (c[:, 0] / r**2)[:, None, None] * tt[None]
         + (c[:, 1] / (r**2 * s))[:, None, None] * tp[None]
         + (c[:, 2] / (r**2 * s**2))[:, None, None] * pp[None])
    dr = fd_derivative(g, t, 1, tuple(b - lo for b in fm.breaks if lo < b < hi))
    pick = indices - lo
    gs = g[pick]
    dgs = []
    for j, q in enumerate(pick):
        rho = t[q]
        gt = full.d_theta(gs[j], 1)
        gp = full.d_phi(gs[j])
        d = (nvec[:, None, None] * dr[q][None] + (e_t / rho)[:, None, None] * gt[None]
             + (e_p / (rho * s))[:, None, None] * gp[None])
        dgs.append(d)
    return AsymptoticChart(full, fm.slices[indices], gs, np.stack(dgs))


def mass_record(stage, m, A=None, residual=None, **extra):
    """JSON-ready record ``{stage, m, A, residual}``."""
    rec = {"stage": stage, "m": m, "A": A, "residual": residual}
    rec.update(extra)
    return rec


def dumps_records(records):
    return json.dumps(records, indent=2, sort_keys=True)
