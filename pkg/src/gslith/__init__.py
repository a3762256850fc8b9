"""Grayscale e-beam lithography dose compiler.

Turns a target resist-height map into a proximity-corrected dose map, checks
it with a forward exposure model, and ships the metrology and statistics used
to qualify airbridge processes.
"""

from .contrast import ContrastCurve, ContrastSample, dose_for_height, fit_contrast, height_for_dose
from .grids import DoseMap, EnergyMap, HeightMap, read_grid, write_grid
from .kernel import (
    DiscreteKernel,
    PointSpreadFunction,
    default_psf,
    discretize,
    make_double_gaussian,
    radial_energy_cdf,
)
from .metrology import circle_fit, fit_resonance, power_shift, profile_error
from .pec import DoseLayers, forward_simulate, quantize, solve_dose
from .profile import BridgeSpec, arc_bridge_height_map, compose
from .stats import ecdf, kde, posterior_operable, yield_summary

__version__ = "0.1.0"
FORMAT_VERSIONS = ("gslgrid 1", "gsllayers 1")
