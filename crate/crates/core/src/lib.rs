//! Pseudo minimum φ-divergence estimation for multinomial logistic regression
//! under complex survey designs, with sandwich covariance, Wald-type tests,
//! power and sample-size planning, influence-function diagnostics, overdispersed
//! multinomial samplers and a Monte Carlo harness.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod model;
pub mod par;
pub mod robustness;
pub mod samplers;
pub mod sim;
pub mod stats;
pub mod survey;

pub use divergence::CressieReadLambda;
pub use error::{Error, Result};
pub use estimator::{fit, FitConfig, FitResult, GScore, Init};
pub use inference::{LinearHypothesis, WaldReport};
pub use model::{BetaMatrix, CategoryProbs};
pub use par::Execution;
pub use robustness::{influence, ContaminationPoint, InfluenceReport};
pub use samplers::{ContaminationSpec, Design, Family, OverdispersionSpec};
pub use sim::{run_experiment, CellResult, ExperimentPlan};
pub use survey::{ClusterRecord, CsvSchema, SurveyDataset};
