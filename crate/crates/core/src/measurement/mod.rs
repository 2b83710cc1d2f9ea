//! Association-based data-cell measurement model.

mod contribution;
mod grid;
mod swerling;

pub use contribution::{
    marginal_contribution_prob, mean_contributions, CellContribution, Component, ContributionTable, MEMBER_MASS_FLOOR,
};
pub use grid::{CellGrid, Frame};
pub use swerling::{
    contribution_limit_oracle, contribution_pmf_swerling, contribution_pmf_thresholded, detection_probability,
    detection_probability_for_sigma, likelihood_ratio, noise_likelihood, psf, rayleigh_ln_pdf, rayleigh_pdf, sigma_m,
    signal_likelihood, NoiseModel, LIMIT_ORACLE_ETAS,
};
