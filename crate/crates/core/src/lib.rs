//! Population-averaged multi-state estimation for clustered, right-censored and
//! left-truncated event histories.
//!
//! The numerical core is generic over the scalar type; the aliases below fix
//! it to `f64` (or `f32`) for everyday use.

pub mod bands;
pub mod error;
pub mod estim;
pub mod infl;
pub mod io;
pub mod ks;
pub mod model;
pub mod panel;
pub mod resample;
pub mod scalar;
pub mod sim;

pub use bands::{band_for_target, pointwise_ci, simultaneous_band, Band, BandSpec, Transform};
pub use error::{Error, Result};
pub use estim::{
    aalen_johansen, estimate_target, nelson_aalen, state_occupation, CumulativeIntensityPath,
    OccupationCurve, Target, TargetCurve, TransitionCurve,
};
pub use infl::{covariance_at, target_influence, CovarianceEstimate, InfluenceSet};
pub use io::{parse_transitions, read_transitions, write_transitions, CurveOutput};
pub use ks::{ks_two_sample, TestResult, TestSpec, WeightKind};
pub use model::{
    validate_dataset, validate_two_sample, Arm, Cluster, ClusteredDataset, StateSpace, SubjectPath,
    Terminus, TerminusKind, Transition, ValidationReport, Violation, ViolationKind,
};
pub use panel::{
    build_panel, build_panel_on_grid, landmark_restrict, LandmarkSpec, RiskPanel, Weighting,
};
pub use resample::{Method, ReplicateMatrix, SeedSpec};
pub use scalar::Scalar;
pub use sim::{simulate_trial, true_occupation, SimConfig};

pub type Dataset = ClusteredDataset<f64>;
pub type Panel = RiskPanel<f64>;
pub type Curve = TargetCurve<f64>;
pub type Influence = InfluenceSet<f64>;

pub type DatasetF32 = ClusteredDataset<f32>;
pub type PanelF32 = RiskPanel<f32>;
pub type CurveF32 = TargetCurve<f32>;
