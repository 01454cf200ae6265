//! Numerical toolkit and experiment harness for perturbed linear independent
//! component analysis and approximate-isometry diagnostics.
//!
//! The crate measures how far a mixing map is from a local isometry
//! (`Theta_p`), recovers independent sources from slightly nonlinear
//! mixtures via contrast-function extrema on the sphere, and verifies the
//! quantitative robustness rates empirically: recovery error scaling like
//! `eta` against the unperturbed extremum and like `eta^2` against the
//! second-order prediction, an MCC deficit scaling like `eta^2`, and
//! isometry deviation of random high-dimensional Jacobians scaling like
//! `D^{-1/2}`.

pub mod error;
pub mod experiments;
pub mod ica;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod whiten;

pub use error::{Error, Result};
pub use experiments::{
    BoundSweepConfig, BoundSweepReport, DimScalingConfig, EtaScalingConfig, IsoIcaConfig,
    ScalingReport, SlopeRecord, SweepVar,
};
pub use ica::{ContrastFunction, IcaEstimate, ReferenceVectors, SolveOptions, SolverKind};
pub use linalg::SvdFactors;
pub use metrics::{BoundCertificate, MccReport};
pub use model::{
    JacobianField, MixingModel, Perturbation, SourceFamily, SourceSpec, ThetaEstimate,
};
pub use whiten::Whitener;
