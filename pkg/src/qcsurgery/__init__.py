"""Quasiconformal surgery toolkit: a tiled quasiregular model map, its straightening,
circle-map renormalization, the hyperbolic metric of C minus {0, 1}, and the
dynamics used to exhibit large Fatou components."""

from .tiling import Tiling, TilingError, OutsideModel, build_tiling, locate
from .model_map import eval_F, LogPolarValue, critical_points, winding_degree
from .dilatation import mu_analytic, mu_grid, dilatation_stats, ComplexGrid
from .straightening import SolverConfig, solve_mrmt, straighten, invert_map, exterior_map
from .hyperbolic import density_X, hyp_length, contraction_witness
from .dynamics import iterate_classify, render_basin, component_metrics, plan_diameters, whyburn_report

__version__ = "0.1.0"
