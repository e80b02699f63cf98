"""Generalized additive models: penalized splines, smoothness selection,
posterior simulation, tidy inspection and residual diagnostics."""
from .basis import (BasisSystem, apply_constraint, basis_tidy, build_smooth, cr_basis,
                    penalty_tidy, tprs_basis)
from .diagnostics import appraise_data, qq_data, qq_normal, residuals
from .engine import (FitControl, FittedGam, edf, fit, inv_link_of, model_constant, model_edf,
                     overview)
from .family import Family
from .formula import ModelFormula, SmoothSpec, parse_formula, print_formula
from .inspect import add_confint, data_slice, evenly, fitted_values, smooth_estimates
from .io import load_model, read_csv, save_model, write_csv
from .posterior import (coef_draws, fitted_samples, median_qi, posterior_samples,
                        predicted_samples)
from .render import PlotSpec, render_svg

__version__ = "0.1.0"

__all__ = [
    "BasisSystem", "apply_constraint", "basis_tidy", "build_smooth", "cr_basis", "penalty_tidy",
    "tprs_basis", "appraise_data", "qq_data", "qq_normal", "residuals", "FitControl",
    "FittedGam", "edf", "fit", "inv_link_of", "model_constant", "model_edf", "overview",
    "Family", "ModelFormula", "SmoothSpec", "parse_formula", "print_formula", "add_confint",
    "data_slice", "evenly", "fitted_values", "smooth_estimates", "load_model", "read_csv",
    "save_model", "write_csv", "coef_draws", "fitted_samples", "median_qi",
    "posterior_samples", "predicted_samples", "PlotSpec", "render_svg",
]
