//! Safe learning-based pricing for users with unknown linear price response.
//!
//! A coordinator broadcasts prices to `n` users, observes their noisy
//! consumption and must keep every linear network constraint satisfied at
//! every step while learning. Two policies are provided: [`spr`] for
//! coordinator-designed utilities and [`sum`] for utilities implied by
//! profit-maximizing users. [`dr`] supplies the demand-response scenario and
//! [`harness`] the oracle, metrics, persistence and CLI driver.

pub mod dr;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod response;
pub mod safety;
pub mod scalar;
pub mod spr;
pub mod sum;

pub use error::{Error, Result};
pub use estimator::{min_eig, BetaSchedule, ConfidenceEllipsoid, RlsState};
pub use response::{Basis, BasisRef, NoiseSource, Observation, PriceDomain, ResponseModel};
pub use safety::{ConstraintSet, JointPrice, PriceGrid, SafetyCertificate};
pub use scalar::Real;
pub use harness::{cli_run, oracle_optimal, regret_series, violation_count, write_outputs, ExperimentTrace};
pub use spr::{exploration_horizon, explore_step, optimistic_step, run_spr, LearnerConfig, SprConfig};
pub use sum::{inverse_response, optimistic_step_sum, run_sum, select_theta_check, utility_eval, SumConfig};

pub type RlsState64 = RlsState<f64>;
pub type ConfidenceEllipsoid64 = ConfidenceEllipsoid<f64>;
pub type BetaSchedule64 = BetaSchedule<f64>;
pub type ResponseModel64 = ResponseModel<f64>;
pub type ConstraintSet64 = ConstraintSet<f64>;
pub type PriceGrid64 = PriceGrid<f64>;
pub type DrScenario64 = dr::DrScenario<f64>;
pub type ExperimentTrace64 = ExperimentTrace<f64>;
pub type SprConfig64 = SprConfig<f64>;
pub type SumConfig64 = SumConfig<f64>;
