"""Semi-parametric angular-radial modelling of multivariate extremes."""

__version__ = "0.1.0"

from .geometry import PolarSample, SphereGrid, from_polar, sphere_grid, to_polar  # noqa: E402
from .angular import KdeModel, kde_log_density, optimize_bandwidth, sample_kde  # noqa: E402
from .model import SparModel, contour_cloud, contour_radius, fit_spar, load, log_joint_density, save, simulate  # noqa: E402

__all__ = [
    "PolarSample",
    "SphereGrid",
    "to_polar",
    "from_polar",
    "sphere_grid",
    "KdeModel",
    "kde_log_density",
    "optimize_bandwidth",
    "sample_kde",
    "SparModel",
    "fit_spar",
    "log_joint_density",
    "contour_radius",
    "contour_cloud",
    "simulate",
    "save",
    "load",
]
