"""Discretization of the 2-sphere and curvature operators for surface and
foliated metrics.

Angular derivatives are pseudo-spectral: Fourier in longitude and Legendre
collocation in ``x = cos(theta)`` on the Gauss-Legendre nodes.  Each Fourier
mode of a field is either even or odd in theta when continued across the
poles; odd modes are divided by ``sin(theta)`` before differentiating in
``x`` so both cases are smooth polynomials-in-x to spectral accuracy.  The
parity of a field is +1 for scalars and the ``theta-theta`` / ``phi-phi``
metric components, -1 for ``theta-phi`` components and ``sqrt(det g)``.

Derivatives across leaves of a foliation use Fornberg finite-difference
weights on the (generally non-uniform) slice coordinates, never crossing a
declared corner slice.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DerivativeBlowup,
    GridMismatch,
    InsufficientSlices,
    MasskitError,
    NonPositiveDefinite,
)

__all__ = [
    "SphereGrid",
    "SurfaceMetric",
    "FoliatedMetric",
    "Field",
    "fd_weights",
    "fd_derivative",
    "gauss_scalar_curvature",
    "laplace_beltrami",
    "slice_mean_curvature",
    "ambient_scalar_curvature",
    "omega",
]

DIMENSION = 3
MAX_DERIVATIVE = 1e10


def omega(k):
    """Volume of the unit k-sphere."""
    from math import gamma, pi

    return 2.0 * pi ** ((k + 1) / 2.0) / gamma((k + 1) / 2.0)


# ---------------------------------------------------------------------------
# sphere grid


def _legendre_diff_matrix(x):
    # barycentric differentiation on arbitrary distinct nodes
    n = len(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    D[np.arange(n), np.arange(n)] = -D.sum(axis=1)
    return D


class SphereGrid:
    """Gauss-Legendre (in cos theta) by uniform longitude grid on the sphere.

    Node values are stored as arrays of shape ``(n_theta, n_phi)`` with theta
    increasing from the north pole.  ``weights`` integrate against the round
    unit-sphere measure.
    """

    def __init__(self, n_theta, n_phi, _reduced=False):
        n_theta, n_phi = int(n_theta), int(n_phi)
        if not _reduced:
            if n_theta < 4:
                raise ValueError("n_theta must be >= 4")
            if n_phi < 8 or n_phi % 2:
                raise ValueError("n_phi must be even and >= 8")
        self.n_theta = n_theta
        self.n_phi = n_phi
        self.reduced = _reduced
        x, w = np.polynomial.legendre.leggauss(n_theta)
        order = np.argsort(-x)
        self.x = x[order]
        self._glw = w[order]
        self.theta = np.arccos(self.x)
        self.phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        self.sin = np.sqrt(1.0 - self.x**2)
        self.weights = np.outer(self._glw, np.full(n_phi, 2.0 * np.pi / n_phi))

    def __repr__(self):
        kind = "axisymmetric " if self.reduced else ""
        return f"SphereGrid({kind}{self.n_theta}x{self.n_phi})"

    def __eq__(self, other):
        return (
            isinstance(other, SphereGrid)
            and self.n_theta == other.n_theta
            and self.n_phi == other.n_phi
        )

    def __hash__(self):
        return hash((self.n_theta, self.n_phi))

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    @property
    def size(self):
        return self.n_theta * self.n_phi

    def mesh(self):
        return np.meshgrid(self.theta, self.phi, indexing="ij")

    def axisymmetric(self):
        """The single-longitude grid used for rotationally symmetric data."""
        if self.reduced:
            return self
        return SphereGrid(self.n_theta, 1, _reduced=True)

    def integrate(self, f):
        """Integral over the round unit sphere, reduced over the last two axes."""
        return np.einsum("...ij,ij->...", f, self.weights)

    @cached_property
    def _dx(self):
        return _legendre_diff_matrix(self.x)

    def d_phi(self, f):
        if self.n_phi == 1:
            return np.zeros_like(f)
        F = np.fft.rfft(f, axis=-1)
        m = np.arange(F.shape[-1])
        ik = 1j * m
        if self.n_phi % 2 == 0:
            ik[-1] = 0.0
        return np.fft.irfft(F * ik, n=self.n_phi, axis=-1)

    def d_theta(self, f, parity=1):
        """Theta derivative of a field with the given pole parity."""
        F = np.fft.rfft(f, axis=-1) if self.n_phi > 1 else f.astype(complex)
        m = np.arange(F.shape[-1])
        even = (parity * (-1.0) ** m) > 0
        s = self.sin[:, None]
        c = self.x[:, None]
        out = np.empty_like(F)
        if even.any():
            Fe = F[..., even]
            out[..., even] = -s * np.einsum("ij,...jm->...im", self._dx, Fe)
        if (~even).any():
            G = F[..., ~even] / s
            out[..., ~even] = c * G - s**2 * np.einsum("ij,...jm->...im", self._dx, G)
        if self.n_phi > 1:
            return np.fft.irfft(out, n=self.n_phi, axis=-1)
        return out.real

    def _operator_matrix(self, op):
        eye = np.eye(self.size).reshape(self.size, self.n_theta, self.n_phi)
        return op(eye).reshape(self.size, self.size).T

    @cached_property
    def dtheta_matrix(self):
        """Dense matrix of ``d_theta`` on parity +1 fields (flattened nodes)."""
        return self._operator_matrix(lambda f: self.d_theta(f, 1))

    @cached_property
    def dphi_matrix(self):
        return self._operator_matrix(self.d_phi)


def _check_same_grid(a, b):
    if a != b:
        raise GridMismatch(f"{a!r} vs {b!r}")


@dataclass(frozen=True, eq=False)
class Field:
    """Node values on a sphere grid, optionally stacked over leaves."""

    grid: SphereGrid
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-2:] != self.grid.shape:
            raise GridMismatch(f"values of shape {v.shape} on {self.grid!r}")
        if not np.all(np.isfinite(v)):
            raise MasskitError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())


# ---------------------------------------------------------------------------
# surface metrics


def _as_components(grid, comp):
    comp = np.asarray(comp, dtype=float)
    if comp.shape[-2:] != grid.shape:
        comp = np.broadcast_to(comp, comp.shape[:-2] + grid.shape).copy()
    return comp


@dataclass(frozen=True, eq=False)
class SurfaceMetric:
    """A Riemannian 2-metric on the sphere in (theta, phi) coordinates."""

    grid: SphereGrid
    g_tt: np.ndarray
    g_tp: np.ndarray
    g_pp: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        shape = self.grid.shape
        for name in ("g_tt", "g_tp", "g_pp"):
            a = np.broadcast_to(np.asarray(getattr(self, name), float), shape).copy()
            object.__setattr__(self, name, a)
        det = self.g_tt * self.g_pp - self.g_tp**2
        if np.any(self.g_tt <= 0) or np.any(det <= 0):
            raise NonPositiveDefinite("surface metric is not positive definite")
        if self.symmetric:
            for a in (self.g_tt, self.g_pp):
                if np.ptp(a, axis=1).max() > 1e-12 * max(1.0, np.abs(a).max()):
                    raise MasskitError("symmetric metric depends on phi")
            if np.abs(self.g_tp).max() > 0:
                raise MasskitError("symmetric metric has g_tp != 0")

    @classmethod
    def round(cls, grid, radius=1.0):
        s2 = np.broadcast_to((grid.sin**2)[:, None], grid.shape)
        return cls(grid, radius**2 * np.ones(grid.shape), np.zeros(grid.shape),
                   radius**2 * s2, symmetric=True)

    @classmethod
    def ellipsoid(cls, grid, a, b, c):
        """Metric induced on the ellipsoid with semi-axes ``a, b, c``."""
        th, ph = grid.mesh()
        xt = np.stack([a * np.cos(th) * np.cos(ph), b * np.cos(th) * np.sin(ph),
                       -c * np.sin(th)])
        xp = np.stack([-a * np.sin(th) * np.sin(ph), b * np.sin(th) * np.cos(ph),
                       np.zeros_like(th)])
        E = (xt * xt).sum(0)
        F = (xt * xp).sum(0)
        G = (xp * xp).sum(0)
        sym = a == b
        if sym:
            F = np.zeros_like(F)
            E = np.broadcast_to(E[:, :1], grid.shape)
            G = np.broadcast_to(G[:, :1], grid.shape)
        return cls(grid, E, F, G, symmetric=sym)

    def scaled(self, c2):
        return SurfaceMetric(self.grid, c2 * self.g_tt, c2 * self.g_tp,
                             c2 * self.g_pp, self.symmetric)

    @property
    def components(self):
        return np.stack([self.g_tt, self.g_tp, self.g_pp])

    def area_element(self):
        """sqrt(det g) / sin(theta): density against the round measure."""
        det = self.g_tt * self.g_pp - self.g_tp**2
        return np.sqrt(det) / self.grid.sin[:, None]

    def area(self):
        return float(self.grid.integrate(self.area_element()))


def _inverse(comp):
    E, F, G = comp[..., 0, :, :], comp[..., 1, :, :], comp[..., 2, :, :]
    det = E * G - F**2
    return np.stack([G / det, -F / det, E / det], axis=-3), det


def _gauss_curvature(grid, comp, max_derivative=MAX_DERIVATIVE):
    E, F, G = comp[..., 0, :, :], comp[..., 1, :, :], comp[..., 2, :, :]
    det = E * G - F**2
    if np.any(det <= 0) or np.any(E <= 0):
        raise NonPositiveDefinite("metric is not positive definite")
    sq = np.sqrt(det)
    Et, Ep = grid.d_theta(E, 1), grid.d_phi(E)
    Ft, Gt = grid.d_theta(F, -1), grid.d_theta(G, 1)
    for d in (Et, Ep, Ft, Gt):
        if not np.all(np.isfinite(d)) or np.abs(d).max() > max_derivative:
            raise DerivativeBlowup("metric derivatives exceed bound; refine the grid")
    gam_tt = (-F * Et / 2.0 + E * (Ft - Ep / 2.0)) / det
    gam_tp = (-F * Ep / 2.0 + E * Gt / 2.0) / det
    P = sq / E * gam_tt
    Q = sq / E * gam_tp
    return (grid.d_phi(P) - grid.d_theta(Q, 1)) / sq


def _laplacian(grid, comp, f):
    inv, det = _inverse(comp)
    sq = np.sqrt(det)
    f = f - f[..., :1, :1]
    ft, fp = grid.d_theta(f, 1), grid.d_phi(f)
    vt = inv[..., 0, :, :] * ft + inv[..., 1, :, :] * fp
    vp = inv[..., 1, :, :] * ft + inv[..., 2, :, :] * fp
    return (grid.d_theta(sq * vt, 1) + grid.d_phi(sq * vp)) / sq


def gauss_scalar_curvature(m, max_derivative=MAX_DERIVATIVE):
    """Scalar curvature (twice the Gauss curvature) of a surface metric."""
    K = _gauss_curvature(m.grid, m.components, max_derivative)
    return Field(m.grid, 2.0 * K, "1/length^2")


def laplace_beltrami(m, f):
    """Laplace-Beltrami operator of ``m`` applied to a field."""
    values = f.values if isinstance(f, Field) else np.asarray(f, float)
    if isinstance(f, Field):
        _check_same_grid(m.grid, f.grid)
    if values.shape[-2:] != m.grid.shape:
        raise GridMismatch(f"field of shape {values.shape} on {m.grid!r}")
    return Field(m.grid, _laplacian(m.grid, m.components, values), "1/length^2")


# ---------------------------------------------------------------------------
# finite differences in the leaf coordinate


def fd_weights(z, x, m):
    """Fornberg weights for derivatives 0..m at ``z`` from nodes ``x``."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


def _segments(n, breaks):
    edges = [0] + sorted(b for b in breaks if 0 < b < n - 1) + [n - 1]
    return list(zip(edges[:-1], edges[1:]))


def fd_derivative(y, t, order=1, breaks=(), width=5):
    """Derivative along axis 0 of samples ``y`` at coordinates ``t``.

    Stencils stay inside each smooth segment delimited by ``breaks``; a break
    node takes the derivative of the segment to its right.
    """
    y = np.asarray(y, float)
    t = np.asarray(t, float)
    n = len(t)
    if n < 2:
        raise InsufficientSlices("need at least two slices")
    out = np.empty_like(y)
    segs = _segments(n, breaks)
    for si, (a, b) in enumerate(segs):
        idx = np.arange(a, b + 1)
        w = min(width, len(idx))
        if w <= order:
            raise InsufficientSlices("segment too short for the requested derivative")
        last = si == len(segs) - 1
        for i in idx:
            if i == b and not last:
                continue
            lo = min(max(i - w // 2, a), b + 1 - w)
            sten = np.arange(lo, lo + w)
            c = fd_weights(t[i], t[sten], order)[:, order]
            out[i] = np.tensordot(c, y[sten], axes=(0, 0))
    return out


# ---------------------------------------------------------------------------
# foliated metrics


@dataclass(frozen=True, eq=False)
class FoliatedMetric:
    """The metric ``g_t(x) dx^i dx^j + u(x, t)^2 dt^2`` on sphere x interval.

    ``components`` has shape ``(K, 3, n_theta, n_phi)`` holding
    ``(g_tt, g_tp, g_pp)`` per leaf and ``lapse`` has shape
    ``(K, n_theta, n_phi)``.  Optional ``d_components``, ``d2_components`` and
    ``d_lapse`` carry exact leaf-coordinate derivatives; when absent they are
    obtained by finite differences that never straddle an index in
    ``breaks``.
    """

    grid: SphereGrid
    slices: np.ndarray
    components: np.ndarray
    lapse: np.ndarray
    d_components: np.ndarray = None
    d2_components: np.ndarray = None
    d_lapse: np.ndarray = None
    breaks: tuple = ()
    u_min: float = 1e-8
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.slices, float)
        object.__setattr__(self, "slices", t)
        K = len(t)
        comp = np.asarray(self.components, float)
        if comp.shape != (K, 3) + self.grid.shape:
            comp = np.broadcast_to(comp, (K, 3) + self.grid.shape).copy()
        object.__setattr__(self, "components", comp)
        lapse = np.broadcast_to(np.asarray(self.lapse, float), (K,) + self.grid.shape).copy()
        object.__setattr__(self, "lapse", lapse)
        if K > 1 and np.any(np.diff(t) <= 0):
            raise MasskitError("slice coordinates must be strictly increasing")
        if np.any(lapse < self.u_min):
            raise MasskitError("lapse must stay above u_min")
        object.__setattr__(self, "breaks", tuple(int(b) for b in self.breaks))

    @classmethod
    def from_radius(cls, grid, t, radius, lapse=1.0, d_radius=None, d2_radius=None, **kw):
        """Warped product ``radius(t)^2 g_S2 + lapse^2 dt^2``."""
        t = np.asarray(t, float)
        r = np.asarray(radius, float).reshape(-1)
        round_ = SurfaceMetric.round(grid).components
        comp = r[:, None, None, None] ** 2 * round_[None]
        if d_radius is not None:
            dr = np.asarray(d_radius, float).reshape(-1)
            kw["d_components"] = (2 * r * dr)[:, None, None, None] * round_[None]
            if d2_radius is not None:
                d2r = np.asarray(d2_radius, float).reshape(-1)
                kw["d2_components"] = (2 * dr**2 + 2 * r * d2r)[:, None, None, None] * round_[None]
        return cls(grid, t, comp, lapse, **kw)

    @property
    def n_slices(self):
        return len(self.slices)

    def surface(self, k):
        sym = bool(np.all(self.components[k, 1] == 0)
                   and np.ptp(self.components[k], axis=-1).max() == 0)
        return SurfaceMetric(self.grid, *self.components[k], symmetric=sym)

    def with_lapse(self, lapse, d_lapse=None):
        return FoliatedMetric(self.grid, self.slices, self.components, lapse,
                              self.d_components, self.d2_components, d_lapse,
                              self.breaks, self.u_min, dict(self.meta))

    def restrict(self, k0, k1):
        """Leaves ``k0..k1`` inclusive."""
        sl = slice(k0, k1 + 1)
        pick = lambda a: None if a is None else a[sl]
        br = tuple(b - k0 for b in self.breaks if k0 < b < k1)
        return FoliatedMetric(self.grid, self.slices[sl], self.components[sl],
                              self.lapse[sl], pick(self.d_components),
                              pick(self.d2_components), pick(self.d_lapse), br,
                              self.u_min, dict(self.meta))

    def jets(self):
        """``(d_components, d2_components, d_lapse)`` in the leaf coordinate."""
        t, br = self.slices, self.breaks
        if self.n_slices < 2:
            raise InsufficientSlices("need at least two slices")
        d1 = self.d_components
        if d1 is None:
            d1 = fd_derivative(self.components, t, 1, br)
        d2 = self.d2_components
        if d2 is None:
            if self.d_components is not None:
                d2 = fd_derivative(self.d_components, t, 1, br)
            else:
                if self.n_slices < 3:
                    raise InsufficientSlices("need at least three slices")
                d2 = fd_derivative(self.components, t, 2, br)
        du = self.d_lapse
        if du is None:
            du = fd_derivative(self.lapse, t, 1, br)
        return d1, d2, du

    def raw_mean_curvature(self, d1=None):
        """Mean curvature of every leaf for unit lapse."""
        if d1 is None:
            d1 = self.jets()[0] if self.d_components is None else self.d_components
        inv, _ = _inverse(self.components)
        return 0.5 * (inv[:, 0] * d1[:, 0] + 2 * inv[:, 1] * d1[:, 1] + inv[:, 2] * d1[:, 2])

    def area_elements(self):
        det = self.components[:, 0] * self.components[:, 2] - self.components[:, 1] ** 2
        return np.sqrt(det) / self.grid.sin[:, None]


def _leaf_invariants(comp, d1, d2):
    """Raw mean curvature H, its t-derivative, and |K|^2 for unit lapse."""
    inv, _ = _inverse(comp)

    def mat(a):
        return np.stack([np.stack([a[:, 0], a[:, 1]], 1), np.stack([a[:, 1], a[:, 2]], 1)], 1)

    Ginv, D1, D2 = mat(inv), mat(d1), mat(d2)
    M = np.einsum("kab...,kbc...->kac...", Ginv, D1)
    trM = M[:, 0, 0] + M[:, 1, 1]
    trM2 = M[:, 0, 0] ** 2 + 2 * M[:, 0, 1] * M[:, 1, 0] + M[:, 1, 1] ** 2
    N = np.einsum("kab...,kba...->k...", Ginv, D2)
    H = 0.5 * trM
    dH = 0.5 * (N - trM2)
    K2 = 0.25 * trM2
    return H, dH, K2


def slice_mean_curvature(g, k=None):
    """Mean curvature of leaf ``k`` (all leaves if None) w.r.t. d/dt.

    For a general lapse this is the unit-lapse value divided by the lapse.
    """
    if g.n_slices < 2:
        raise InsufficientSlices("need at least two slices")
    H = g.raw_mean_curvature() / g.lapse
    if k is None:
        return Field(g.grid, H, "1/length")
    return Field(g.grid, H[k], "1/length")


def ambient_scalar_curvature(g):
    """Scalar curvature of ``g_t + u^2 dt^2`` on every leaf.

    Uses the contracted Gauss equation
    ``R = R(g_t) - |K|^2 - H^2 - 2 u^-1 d_t(H) - 2 u^-1 Lap(u)`` with
    ``K = d_t g_t / (2u)`` and ``H = tr K``.
    """
    if g.n_slices < 3 and g.d2_components is None:
        raise InsufficientSlices("need at least three slices")
    d1, d2, du = g.jets()
    H0, dH0, K20 = _leaf_invariants(g.components, d1, d2)
    u = g.lapse
    Rt = 2.0 * _gauss_curvature(g.grid, g.components)
    Hu = H0 / u
    dHu = dH0 / u - H0 * du / u**2
    lap_u = _laplacian(g.grid, g.components, u)
    R = Rt - K20 / u**2 - Hu**2 - 2.0 * dHu / u - 2.0 * lap_u / u
    return Field(g.grid, R, "1/length^2")


def leaf_source_terms(g):
    """Per-leaf ``(H, P, R(g_t))`` with ``P = |K|^2 + H^2 + 2 dH/dt`` (unit lapse).

    For a unit-lapse foliation ``P = R(g_t) - R(g)``; the quasi-spherical
    equation is written in terms of ``P`` so backgrounds with any lapse work.
    """
    d1, d2, _ = g.jets()
    H0, dH0, K20 = _leaf_invariants(g.components, d1, d2)
    Rt = 2.0 * _gauss_curvature(g.grid, g.components)
    return H0, K20 + H0**2 + 2.0 * dH0, Rt
