"""Smoothing a corner metric across the matching surface.

The Lipschitz metric ``g`` equals ``g_-`` for ``t < t_c`` and ``g_+`` for
``t >= t_c``.  Writing ``g = G + J`` with the explicit kink
``J = H(t_c - t) (c0 + a tau + b tau^2)`` (``tau = t - t_c``, coefficients
the one-sided jumps of value, first and half second derivative) leaves ``G``
of class C^2.  Only ``J`` is convolved, at scale ``eps = delta^2 / 100``, and
the correction is blended out by a C^2 cutoff supported in ``|tau| < delta/2``:

    g_delta = g + chi(tau) * ((J * phi_eps) - J).

The convolution of a piecewise quadratic with a polynomial kernel is closed
form, so ``g_delta`` and its first two t-derivatives are exact.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DeltaTooLarge, GridMismatch, KernelInvalid, PreconditionViolated
from .geometry import (
    Field,
    FoliatedMetric,
    ambient_scalar_curvature,
    fd_derivative,
    slice_mean_curvature,
)

__all__ = [
    "MollifierKernel",
    "CornerMetric",
    "mollify_corner",
    "curvature_concentration_profile",
    "corner_from_foliation",
]


class MollifierKernel:
    """Even polynomial bump on [-1, 1], normalized to unit mass.

    ``coefficients`` are monomial coefficients in ``s`` (lowest first); the
    default is ``(1 - s^2)^3``.  The profile must vanish with its first
    derivative at ``s = +-1`` so that the mollified metric is C^2.
    """

    def __init__(self, coefficients=None):
        p = Polynomial([1, 0, -3, 0, 3, 0, -1] if coefficients is None else coefficients)
        if np.any(np.abs(p.coef[1::2]) > 0):
            raise KernelInvalid("kernel must be even")
        mass = p.integ()(1.0) - p.integ()(-1.0)
        if not mass > 0:
            raise KernelInvalid("kernel must have positive mass")
        p = p / mass
        s = np.linspace(-1, 1, 2001)
        if np.any(p(s) < -1e-14):
            raise KernelInvalid("kernel must be non-negative")
        if abs(p(1.0)) > 1e-12 or abs(p.deriv()(1.0)) > 1e-12:
            raise KernelInvalid("kernel and its derivative must vanish at the support edge")
        self.poly = p
        self._dpoly = p.deriv()
        self._anti = [(Polynomial.basis(k) * p).integ() for k in range(3)]
        if abs(self.moment(0, -1.0) - 1.0) > 1e-12:
            raise KernelInvalid("kernel normalization failed")

    def __call__(self, s):
        s = np.asarray(s, float)
        return np.where(np.abs(s) < 1, self.poly(s), 0.0)

    def derivative(self, s):
        s = np.asarray(s, float)
        return np.where(np.abs(s) < 1, self._dpoly(s), 0.0)

    def moment(self, k, z):
        """``int_z^1 s^k phi(s) ds`` with ``z`` clipped to [-1, 1]."""
        z = np.clip(z, -1.0, 1.0)
        F = self._anti[k]
        return F(1.0) - F(z)


@dataclass(frozen=True, eq=False)
class CornerMetric:
    """Two foliated metrics meeting along the leaf ``t = t_c``.

    ``inner`` ends and ``outer`` starts at ``t_c``.  Lapses need not be 1; the
    fiber coordinate is whatever ``t`` both foliations use.
    """

    inner: FoliatedMetric
    outer: FoliatedMetric
    tol: float = 1e-10

    def __post_init__(self):
        if self.inner.grid != self.outer.grid:
            raise GridMismatch("inner and outer grids differ")
        if self.inner.slices[-1] != self.outer.slices[0]:
            raise PreconditionViolated("inner must end where outer starts")
        gap = np.abs(self.inner.components[-1] - self.outer.components[0]).max()
        if gap > self.tol:
            raise PreconditionViolated(f"induced metrics differ by {gap:.3g} on the corner")

    @property
    def grid(self):
        return self.inner.grid

    @property
    def t_corner(self):
        return float(self.outer.slices[0])

    @property
    def epsilon(self):
        span = min(self.inner.slices[-1] - self.inner.slices[0],
                   self.outer.slices[-1] - self.outer.slices[0])
        return 0.5 * float(span)

    @property
    def H_minus(self):
        return slice_mean_curvature(self.inner, self.inner.n_slices - 1)

    @property
    def H_plus(self):
        return slice_mean_curvature(self.outer, 0)

    def jump(self):
        return Field(self.grid, self.H_minus.values - self.H_plus.values, "1/length")

    def metric(self):
        """The Lipschitz metric as one foliation with a break at the corner."""
        a, b = self.inner, self.outer
        k = a.n_slices - 1
        cat = lambda x, y: None if x is None or y is None else np.concatenate([x[:-1], y])
        return FoliatedMetric(a.grid, np.concatenate([a.slices[:-1], b.slices]),
                              cat(a.components, b.components), cat(a.lapse, b.lapse),
                              cat(a.d_components, b.d_components),
                              cat(a.d2_components, b.d2_components),
                              cat(a.d_lapse, b.d_lapse), (k,), a.u_min)


def corner_from_foliation(fm, k):
    """Split a foliation at slice ``k`` into a corner."""
    return CornerMetric(fm.restrict(0, k), fm.restrict(k, fm.n_slices - 1))


# quintic Hermite basis: rows give monomial coefficients of
# (y0, h y0', h^2 y0'', y1, h y1', h^2 y1'')
_HERMITE5 = np.array([
    [1, 0, 0, -10, 15, -6],
    [0, 1, 0, -6, 8, -3],
    [0, 0, 0.5, -1.5, 1.5, -0.5],
    [0, 0, 0, 10, -15, 6],
    [0, 0, 0, -4, 7, -3],
    [0, 0, 0, 0.5, -1, 0.5],
])


def _hermite5(nodes, y, dy, d2y, t):
    """Value and two derivatives of the C^2 quintic Hermite interpolant."""
    k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, len(nodes) - 2)
    h = nodes[k + 1] - nodes[k]
    s = (t - nodes[k]) / h
    ex = (slice(None),) + (None,) * (y.ndim - 1)
    hh = h[ex]
    data = np.stack([y[k], hh * dy[k], hh**2 * d2y[k],
                     y[k + 1], hh * dy[k + 1], hh**2 * d2y[k + 1]])
    c = np.einsum("ij,i...->j...", _HERMITE5, data)
    sp = [np.ones_like(s)] + [s**j for j in range(1, 6)]
    v = sum(c[j] * sp[j][ex] for j in range(6))
    d1 = sum(j * c[j] * sp[j - 1][ex] for j in range(1, 6)) / hh
    d2 = sum(j * (j - 1) * c[j] * sp[j - 2][ex] for j in range(2, 6)) / hh**2
    return v, d1, d2


class _Side:
    """Two-jet model of one side: metric components and ``W = u^2``."""

    def __init__(self, fm):
        d1, d2, du = fm.jets()
        U = fm.lapse
        d2u = fd_derivative(du, fm.slices, 1, fm.breaks)
        self.t = fm.slices
        self.Y = np.concatenate([fm.components, (U**2)[:, None]], axis=1)
        self.dY = np.concatenate([d1, (2 * U * du)[:, None]], axis=1)
        self.d2Y = np.concatenate([d2, (2 * du**2 + 2 * U * d2u)[:, None]], axis=1)

    def at(self, t):
        return _hermite5(self.t, self.Y, self.dY, self.d2Y, np.asarray(t, float))

    def end_jet(self, k):
        return self.Y[k], self.dY[k], self.d2Y[k]


def _cutoff(tau, delta):
    """C^2 cutoff: 1 on |tau| <= delta/4, 0 on |tau| >= delta/2."""
    q = delta / 4.0
    x = np.clip((np.abs(tau) - q) / q, 0.0, 1.0)
    S = x**3 * (10 - 15 * x + 6 * x**2)
    dS = 30 * x**2 * (1 - x) ** 2
    d2S = 60 * x * (1 - x) * (1 - 2 * x)
    return 1.0 - S, -np.sign(tau) * dS / q, -d2S / q**2


class _Mollified:
    def __init__(self, c, delta, kernel):
        if not delta > 0:
            raise PreconditionViolated("delta must be positive")
        if delta > c.epsilon + 1e-15:
            raise DeltaTooLarge(f"delta {delta} exceeds epsilon {c.epsilon}")
        self.c, self.delta, self.k = c, float(delta), kernel
        self.eps = delta**2 / 100.0
        self.inner, self.outer = _Side(c.inner), _Side(c.outer)
        ym, dym, d2ym = self.inner.end_jet(-1)
        yp, dyp, d2yp = self.outer.end_jet(0)
        self.c0, self.a, self.b = ym - yp, dym - dyp, 0.5 * (d2ym - d2yp)

    def correction(self, tau):
        """``chi (J*phi - J)`` and its first two derivatives at ``tau`` (1-D)."""
        eps, k = self.eps, self.k
        z = tau / eps
        M0, M1, M2 = (k.moment(j, z) for j in range(3))
        phi, dphi = k(z), k.derivative(z)
        ex = (slice(None),) + (None,) * self.c0.ndim
        tau_, M0, M1, M2, phi, dphi = (v[ex] for v in (tau, M0, M1, M2, phi, dphi))
        c0, a, b = self.c0[None], self.a[None], self.b[None]
        p = c0 + a * tau_ + b * tau_**2
        dp = a + 2 * b * tau_
        Jp = p * M0 - eps * dp * M1 + eps**2 * b * M2
        dJp = dp * M0 - 2 * b * eps * M1 - c0 / eps * phi
        d2Jp = 2 * b * M0 - a / eps * phi - c0 / eps**2 * dphi
        left = (tau_ < 0).astype(float)
        E, dE, d2E = Jp - left * p, dJp - left * dp, d2Jp - left * 2 * b
        chi, dchi, d2chi = (v[ex] for v in _cutoff(tau, self.delta))
        return chi * E, dchi * E + chi * dE, d2chi * E + 2 * dchi * dE + chi * d2E

    def evaluate(self, t):
        """Mollified ``(Y, dY, d2Y)`` at leaf coordinates ``t`` inside the band."""
        t = np.asarray(t, float)
        tau = t - self.c.t_corner
        Y, dY, d2Y = (np.empty((len(t),) + self.c0.shape) for _ in range(3))
        for side, mask in ((self.inner, tau < 0), (self.outer, tau >= 0)):
            if mask.any():
                Y[mask], dY[mask], d2Y[mask] = side.at(t[mask])
        D, dD, d2D = self.correction(tau)
        return Y + D, dY + dD, d2Y + d2D

    def foliation(self, t):
        Y, dY, d2Y = self.evaluate(t)
        U = np.sqrt(Y[:, 3])
        return FoliatedMetric(self.c.grid, t, Y[:, :3], U, dY[:, :3], d2Y[:, :3],
                              dY[:, 3] / (2 * U), (), self.c.inner.u_min)

    def band_nodes(self, n_core=41, ratio=1.25):
        eps, half = self.eps, 0.5 * self.delta
        core = np.linspace(-eps, eps, n_core)
        geo = [eps]
        while geo[-1] * ratio < half:
            geo.append(geo[-1] * ratio)
        geo = np.array(geo[1:] + [0.5 * (geo[-1] + half)])
        return self.c.t_corner + np.concatenate([-geo[::-1], core, geo])

    def pieces(self):
        e, q, h = self.eps, self.delta / 4, self.delta / 2
        return [-h, -q, -e, 0.0, e, q, h]


def mollify_corner(c, delta, k=None, n_core=41, ratio=1.25):
    """C^2 metric ``g_delta`` equal to ``g`` (bit for bit) outside the band
    ``|t - t_c| < delta/2``.

    Leaves of the corner outside the band are kept with their data; inside the
    band the leaves are replaced by nodes clustered at the kernel scale.
    """
    k = MollifierKernel() if k is None else k
    mol = _Mollified(c, delta, k)
    half = 0.5 * delta
    keep_in = c.inner.slices <= c.t_corner - half
    keep_out = c.outer.slices >= c.t_corner + half
    band = mol.foliation(mol.band_nodes(n_core, ratio))
    parts = []
    for fm, keep in ((c.inner, keep_in), (None, None), (c.outer, keep_out)):
        if fm is None:
            parts.append(band)
            continue
        d1, d2, du = fm.jets()
        parts.append(FoliatedMetric(fm.grid, fm.slices[keep], fm.components[keep],
                                    fm.lapse[keep], d1[keep], d2[keep], du[keep], (),
                                    fm.u_min))
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    out = FoliatedMetric(c.grid, cat("slices"), cat("components"), cat("lapse"),
                         cat("d_components"), cat("d2_components"), cat("d_lapse"),
                         (), c.inner.u_min)
    n0 = int(keep_in.sum())
    out.meta.update(delta=float(delta), kernel_scale=mol.eps, t_corner=c.t_corner,
                    band=(n0, n0 + band.n_slices))
    return out


def curvature_concentration_profile(c, delta, k=None, n_gauss=24):
    """``I_delta(x) = int R_delta u dt`` over the band (proper-length fiber
    integral), by Gauss-Legendre quadrature on the smooth pieces of ``g_delta``.

    With the contracted Gauss equation the term ``-2 u^-1 d_t(H/u)`` integrates
    to ``2 (H_- - H_+)``; all other terms are bounded and contribute O(delta).
    """
    k = MollifierKernel() if k is None else k
    mol = _Mollified(c, delta, k)
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    edges = mol.pieces()
    t, wt = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        t.append(c.t_corner + 0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wt.append(0.5 * (hi - lo) * w)
    t, wt = np.concatenate(t), np.concatenate(wt)
    fm = mol.foliation(t)
    R = ambient_scalar_curvature(fm).values
    I = np.einsum("k,k...->...", wt, R * fm.lapse)
    return Field(c.grid, I, "1/length")
