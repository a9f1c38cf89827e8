//! Capacity allocation for a healthcare fluid network with strategic patients.
//!
//! The network has a two-class emergency department (HPED for severe, LPED
//! for medium and mild patients) and two appointment clinics (Covid and
//! non-Covid). Patients join a facility only while its queue is below a
//! tolerance threshold; the rest wait in repositories, re-enter, worsen or
//! leave. [`single_period::solve`] finds the capacity split that minimises
//! the weighted exit rate by enumerating the extreme points of sixteen
//! efficiency patterns; [`multi_period`] chains periods through carryover,
//! and [`oracle`] integrates the dynamics forward to check the results.

pub mod combinations;
pub mod model;
pub mod multi_period;
pub mod oracle;
pub mod single_period;

pub use combinations::{classify, Candidate, Combination, CombinationId, Label, Level, Status, CATALOG};
pub use model::{
    flow_residuals, period_objective, validate_params, Allocation, ParamError, PeriodInput, PeriodParams,
    StationaryState, Thresholds,
};
pub use multi_period::{greedy_horizon, solve_horizon, Buffers, Plan, PlanError};
pub use oracle::{simulate, verify, OracleError, SimOptions, Trajectory};
pub use single_period::{capacity_sweep, solve, SolveError, SolverOptions, SweepRecord, TieBreak};
