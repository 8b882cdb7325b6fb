//! Defensive forecasting for prediction with expert advice.
//!
//! The crate is organised around the pieces of a defensive-forecasting
//! learner:
//!
//! - [`game`]: games, decisions, outcomes, the repeated-play bookkeeping and
//!   ε-quantile regret.
//! - [`potential`]: Hoeffding-supermartingale potentials (fixed rate, η-mixture
//!   and the time-varying "capacity" construction), all in log space.
//! - [`solver`]: the min-max step that finds a decision whose worst-case
//!   potential stays below the current ceiling, and [`levin`], a brute-force
//!   grid search for a distribution that clears a relation's level.
//! - [`learners`]: the three defensive-forecasting learners and two
//!   exponential-weights baselines behind one online-learner trait.
//! - [`bounds`]: closed-form regret bounds and the crossover analysis.
//! - [`harness`]: environments, the experiment runner, trace emission and the
//!   pieces used by the `defcast` command-line tool.

pub mod bounds;
pub mod error;
pub mod game;
pub mod harness;
pub mod learners;
pub mod levin;
pub mod numerics;
pub mod par;
pub mod potential;
pub mod solver;

pub use error::{Error, Result};
pub use learners::{Learner, LearnerConfig, LearnerVariant};
pub use game::{Decision, ExpertPool, GameSpec, Outcome, ProtocolState};

pub use potential::{EtaNode, PotentialMode, PotentialState};
pub use solver::{Certificate, InnerOracle, SolveOptions};
