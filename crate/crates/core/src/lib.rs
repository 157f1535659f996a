//! Controlled SIS epidemics in a Markov-switching environment, solved by
//! Markov chain approximation and value iteration, with Monte Carlo
//! cross-checks.

pub mod chain;
pub mod chain1d;
pub mod chain2d;
pub mod config;
pub mod error;
pub mod model;
pub mod simulate;
pub mod solver;
pub mod verify;

pub use chain::{ControlledChain, TransitionLaw};
pub use chain1d::{Grid1D, SisChain};
pub use chain2d::{Grid2D, SivChain};
pub use config::{parse_config, parse_config_str};
pub use error::{Error, Result};
pub use model::{Control, ControlSets, CostModel, CostPreset, ProblemSpec, RegimeSpec, SwitchingGenerator};
pub use solver::{evaluate_policy, value_iterate, Solution, SolverConfig, Sweep};
