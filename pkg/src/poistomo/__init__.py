"""Bayesian reconstruction of positive images from Poisson count data.

The pieces fit together as: a pixel grid and Karhunen-Loeve basis describe a
Gaussian reference field; a pointwise error-function map squashes it into a
strictly positive intensity band; a ray-transform operator predicts Poisson
means; the posterior combines the count likelihood with an optional total
variation penalty.  MAP estimates come from an operator-splitting solver,
samples from preconditioned Crank-Nicolson chains (plain, likelihood-informed,
or anchored at the MAP splitting), and the smoothing weight is calibrated by
posterior-predictive goodness of fit.  Credible-level maps screen candidate
images for unsupported structure.
"""

from .admm import AdmmConfig, MapResult, offset_direction, solve_map
from .artifacts import (CredibleLevelMap, credible_level, credible_level_map,
                        inject_artifact)
from .calibrate import (CalibrationResult, SelectionResult,
                        admissible_interval, admissible_search, chi2_cdf,
                        chi2_discrepancy, chi2_sf, classical_p,
                        posterior_predictive_p, select_lambda,
                        stochastic_approximation)
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import (acf, acf_matrix, ess, ess_matrix, hpdi_sorted,
                          integrated_time, intensity_samples,
                          pointwise_hpdi, posterior_mean)
from .fields import (Grid, ScalarField, VectorField, divergence, field_dot,
                     field_norm, gradient, psnr, read_field_csv, read_pgm,
                     tv_seminorm, write_field_csv, write_pgm)
from .forward import (RadonOperator, Reparam, Sinogram, build_radon_operator,
                      potential_bounds, potential_phi, potential_phi_grad,
                      read_sinogram_bin, read_sinogram_csv, simulate_data,
                      write_sinogram_bin, write_sinogram_csv)
from .klbasis import (CovarianceSpec, KLBasis, build_kl_basis, load_basis,
                      save_basis)
from .phantom import brain_phantom, load_band_image
from .posterior import TGPosterior
from .samplers import (Chain, ChainDivergence, SamplerConfig, anchor_from_map,
                       load_chain, pcn_step, pcnl_step, pdpcn_step, run_chain,
                       save_chain, tune_stepsize)

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "MapResult", "offset_direction", "solve_map",
    "CredibleLevelMap", "credible_level", "credible_level_map",
    "inject_artifact",
    "CalibrationResult", "SelectionResult", "admissible_interval",
    "admissible_search", "chi2_cdf", "chi2_discrepancy", "chi2_sf",
    "classical_p", "posterior_predictive_p", "select_lambda",
    "stochastic_approximation",
    "ConfigError", "RunConfig", "parse_config",
    "acf", "acf_matrix", "ess", "ess_matrix", "hpdi_sorted",
    "integrated_time", "intensity_samples", "pointwise_hpdi",
    "posterior_mean",
    "Grid", "ScalarField", "VectorField", "divergence", "field_dot",
    "field_norm", "gradient", "psnr", "read_field_csv", "read_pgm",
    "tv_seminorm", "write_field_csv", "write_pgm",
    "RadonOperator", "Reparam", "Sinogram", "build_radon_operator",
    "potential_bounds", "potential_phi", "potential_phi_grad",
    "read_sinogram_bin", "read_sinogram_csv", "simulate_data",
    "write_sinogram_bin", "write_sinogram_csv",
    "CovarianceSpec", "KLBasis", "build_kl_basis", "load_basis",
    "save_basis",
    "brain_phantom", "load_band_image",
    "TGPosterior",
    "Chain", "ChainDivergence", "SamplerConfig", "anchor_from_map",
    "load_chain", "pcn_step", "pcnl_step", "pdpcn_step", "run_chain",
    "save_chain", "tune_stepsize",
    "__version__",
]
