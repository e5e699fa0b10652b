"""Closed-form foliated metrics used as extensions and test backgrounds."""

import numpy as np

from .errors import PreconditionViolated
from .geometry import FoliatedMetric


def flat_foliation(grid, r):
    """Euclidean space outside a ball, ``dr^2 + r^2 g_S2``."""
    r = np.asarray(r, float)
    return FoliatedMetric.from_radius(grid, r, r, 1.0, np.ones_like(r), np.zeros_like(r),
                                      d_lapse=np.zeros((len(r),) + grid.shape))


def schwarzschild_lapse(m, r):
    """``(1 - 2m/r)^(-1/2)`` and its r-derivative."""
    r = np.asarray(r, float)
    f = 1.0 - 2.0 * m / r
    if np.any(f <= 0):
        raise PreconditionViolated("radii must lie outside the horizon r = 2m")
    U = f ** -0.5
    return U, -m / r**2 * f ** -1.5


def schwarzschild_foliation(grid, m, r):
    """Schwarzschild in area-radius form, ``(1-2m/r)^-1 dr^2 + r^2 g_S2``."""
    r = np.asarray(r, float)
    U, dU = schwarzschild_lapse(m, r)
    ones = np.ones((len(r),) + grid.shape)
    fm = FoliatedMetric.from_radius(grid, r, r, U[:, None, None] * ones, np.ones_like(r),
                                    np.zeros_like(r), d_lapse=dU[:, None, None] * ones)
    fm.meta.update(model="schwarzschild", m=float(m))
    return fm


def _radius_jets(m, r):
    dr = np.sqrt(1.0 - 2.0 * m / r)
    return dr, m / r**2


def flat_gaussian(grid, r0, t):
    """Flat metric in Gaussian coordinates about the sphere of radius ``r0``:
    ``dt^2 + (r0 + t)^2 g_S2``."""
    t = np.asarray(t, float)
    r = r0 + t
    if np.any(r <= 0):
        raise PreconditionViolated("leaves must have positive radius")
    return FoliatedMetric.from_radius(grid, t, r, 1.0, np.ones_like(t), np.zeros_like(t),
                                      d_lapse=np.zeros((len(t),) + grid.shape))


def schwarzschild_gaussian(grid, m, r0, t):
    """Schwarzschild in Gaussian coordinates, ``dt^2 + r(t)^2 g_S2`` with
    ``dr/dt = sqrt(1 - 2m/r)`` and ``r(0) = r0``."""
    from scipy.integrate import solve_ivp

    t = np.asarray(t, float)
    if r0 <= 2 * m:
        raise PreconditionViolated("r0 must lie outside the horizon")
    rhs = lambda s, r: np.sqrt(1.0 - 2.0 * m / r)
    r = np.empty_like(t)
    neg, pos = t < 0, t >= 0
    for mask in (neg, pos):
        if not mask.any():
            continue
        ts = t[mask]
        span = (0.0, ts.min() if ts[0] < 0 else ts.max())
        sol = solve_ivp(rhs, span, [r0], method="DOP853", t_eval=ts, rtol=1e-13, atol=1e-14)
        r[mask] = sol.y[0]
    if np.any(r <= 2 * m):
        raise PreconditionViolated("leaves reach the horizon")
    dr, d2r = _radius_jets(m, r)
    fm = FoliatedMetric.from_radius(grid, t, r, 1.0, dr, d2r,
                                    d_lapse=np.zeros((len(t),) + grid.shape))
    fm.meta.update(model="schwarzschild", m=float(m))
    return fm
