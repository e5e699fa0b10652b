"""Numerical tools for boundary effects on ADM mass: quasi-spherical bridges,
corner smoothing, conformal mass bookkeeping and the mass-reduction pipeline."""

from .conformal import (
    EllipticProblem,
    EllipticSolution,
    ExteriorManifold,
    conformal_transform,
    energy_identity_A,
    interpolate_conformal,
    solve_elliptic,
    static_descent,
    tilt_metric,
)
from .errors import MasskitError
from .geometry import (
    Field,
    FoliatedMetric,
    SphereGrid,
    SurfaceMetric,
    ambient_scalar_curvature,
    gauss_scalar_curvature,
    laplace_beltrami,
    slice_mean_curvature,
)
from .mass import (
    AsymptoticChart,
    adm_flux_mass,
    expansion_mass,
    fit_expansion_coefficient,
    hawking_mass,
)
from .mollifier import (
    CornerMetric,
    MollifierKernel,
    curvature_concentration_profile,
    mollify_corner,
)
from .pipeline import (
    DomainBoundaryData,
    MassReport,
    minimizing_sequence_experiment,
    run_mass_reduction,
    validate_corner_pmt,
)
from .quasispherical import QSProblem, QSSolution, build_bridge, build_tilted_bridge, qs_solve

__version__ = "0.1.0"

__all__ = [
    "AsymptoticChart",
    "CornerMetric",
    "DomainBoundaryData",
    "EllipticProblem",
    "EllipticSolution",
    "ExteriorManifold",
    "Field",
    "FoliatedMetric",
    "MassReport",
    "MasskitError",
    "MollifierKernel",
    "QSProblem",
    "QSSolution",
    "SphereGrid",
    "SurfaceMetric",
    "adm_flux_mass",
    "ambient_scalar_curvature",
    "build_bridge",
    "build_tilted_bridge",
    "conformal_transform",
    "curvature_concentration_profile",
    "energy_identity_A",
    "expansion_mass",
    "fit_expansion_coefficient",
    "gauss_scalar_curvature",
    "hawking_mass",
    "interpolate_conformal",
    "laplace_beltrami",
    "minimizing_sequence_experiment",
    "mollify_corner",
    "qs_solve",
    "run_mass_reduction",
    "slice_mean_curvature",
    "solve_elliptic",
    "static_descent",
    "tilt_metric",
    "validate_corner_pmt",
]
