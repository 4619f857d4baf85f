//! Asynchronous nonlinear MPC for motion planning.
//!
//! The crate compares three ways of feeding optimal-control solutions to a
//! vehicle: full-update-rate MPC, low-update-rate MPC with pinned inputs, and
//! an asynchronous scheme that starts each solve from a predicted state on the
//! current reference, stitches the result in at that future instant and tracks
//! the stitched reference with a linear state-feedback controller.
//!
//! * [`dynamics`] quadrotor and truck-trailer models, RK4 integration
//! * [`ocp`] direct multiple-shooting transcription with penalty inequalities
//! * [`solver`] Gauss-Newton SQP with a structured Riccati KKT solve
//! * [`schemes`] FUR / LUR / ASAP / naive-stitch update logic
//! * [`tracking`] LQR gain design and the feedback law
//! * [`simulator`] deterministic virtual-time event loop
//! * [`harness`] scenarios, metrics, CSV/JSON export and the CLI

pub mod dynamics;
pub mod harness;
pub mod ocp;
pub mod schemes;
pub mod simulator;
pub mod solver;
pub mod tracking;
