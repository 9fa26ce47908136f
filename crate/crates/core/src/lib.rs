//! Solver for Stackelberg pricing games between one price-setting leader and
//! an aggregative game of quadratic followers.
//!
//! The pipeline is: [`nash::solve_nash`] for the followers' equilibrium at a
//! fixed price, [`sensitivity::nash_sensitivities`] for its price Jacobians,
//! and [`leader::solve_stackelberg`] for the leader's projected descent.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod game;
pub mod grid;
pub mod io;
pub mod leader;
pub mod linalg;
pub mod nash;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod projection;
pub mod scenario;
pub mod sensitivity;
pub mod validate;

pub use error::{Error, Result};
pub use game::{FollowerSpec, JointStrategy, LeaderObjective, PricingGame};
pub use grid::{grid_search, GridResult};
pub use io::{load_game, parse_game_file, write_game_file, write_trace, GameFile, TraceFormat};
pub use leader::{solve_stackelberg, LeaderConfig, LeaderTrace, StackelbergResult, Termination};
pub use nash::{solve_nash, verify_nash, NashConfig, NashResult, NashSolver};
pub use projection::Polyhedron;
pub use scenario::{build_game_from_scenario, ChargingScenario};
pub use sensitivity::{follower_jacobian, nash_sensitivities, SensitivityResult};
pub use validate::{validate_game, ValidationReport};
