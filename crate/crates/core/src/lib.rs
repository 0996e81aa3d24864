//! Uncertainty propagation for dense coordinate-regression image
//! registration.
//!
//! Per-voxel Gaussian predictions of atlas coordinates ([`MeanStdField`])
//! are turned into transformation posteriors by weighted least squares over
//! affine or B-spline bases ([`wls`]) or by kernel smoothing ([`demons`]).
//! Posteriors can be sampled, decomposed into modes and pushed through atlas
//! label warping to obtain label entropy maps ([`downstream`]).

pub mod basis;
pub mod config;
pub mod demons;
pub mod downstream;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod wls;

pub use basis::{affine_basis, bspline_basis, joint_basis, BSplineLattice, BasisSpec, DesignMatrix};
pub use demons::{demons_fit, demons_sample, DemonsMode, NonParamPosterior, SmoothingKernel, VarianceFormula};
pub use downstream::{ensemble_labels, entropy_map, majority_vote, warp_labels, LabelDistribution};
pub use error::{Error, Result};
pub use grid::{CoordField, Grid, LabelVolume, Mask, MeanStdField, ScalarVolume};
pub use wls::{
    coefficient_variance, fit_unweighted, fit_weighted, leading_modes, mode_displacement, most_likely_field,
    sample_coefficients, sample_fields, NoiseModel, TransformPosterior,
};
