//! Nested-logit demand estimation for differentiated products with
//! reputation and advertising stocks: panel handling, decay-weighted
//! scores, share algebra, IV/GMM estimation, elasticities, Bertrand
//! pricing, counterfactual simulation and a synthetic data generator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterfactual;
pub mod elasticity;
pub mod equilibrium;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod panel;
pub mod shares;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use estimator::{estimate, first_stage_report, DemandEstimate, DemandSpec};
pub use kernels::{attach_scores, ScoreConfig};
pub use panel::{compute_shares, load_panel, PanelDataset};
pub use shares::{ModelKind, UtilityParams};
