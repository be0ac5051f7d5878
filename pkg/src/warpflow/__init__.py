"""Ricci flow of doubly-warped product metrics near a Ricci-flat cone.

Modules:

* ``core_geometry``: cone constants, profile types, curvature, chart changes;
* ``flow_engine``: flow equations in four charts and time stepping;
* ``spectral``: eigenvalues, eigenfunctions, semigroups of the linearisation;
* ``barriers``: sub/supersolution residual checks and region membership;
* ``initial_data``: perturbed initial metrics and their mode projection;
* ``diagnostics``: blow-up fits, curvature checks and monitors;
* ``experiments``: reproducible runs used by the CLI and tests.
"""

from .core_geometry import ConeParams, RescaledProfile, SidewaysProfile, WarpedProfile, cone_constants

__all__ = ["ConeParams", "RescaledProfile", "SidewaysProfile", "WarpedProfile", "cone_constants"]
__version__ = "0.1.0"
