//! Sparse feedback control of multi-agent and kinetic interaction models.
//!
//! The crate covers the whole pipeline: interaction kernels, closed-form
//! instantaneous feedback, a semi-Lagrangian solver for the infinite-horizon
//! binary problem, a binary-interaction Monte Carlo engine for the kinetic
//! density, a direct N-agent integrator for cross-validation, and the
//! diagnostics used to judge the outcome.

pub mod analysis;
pub mod hjb;
pub mod kernels;
pub mod kinetic;
pub mod microscopic;
pub mod sparse_feedback;

pub use analysis::{
    control_metrics, histogram, moments, peak_count, wasserstein1, AnalysisError, ControlMetrics, DensityFrame,
    DensitySeries, MomentRow, Peaks,
};
pub use hjb::{
    bellman_update, solve_policy_iteration, solve_value_iteration, BellmanModel, FeedbackTable, GridGeometry,
    HjbError, HjbParams, Solution, StageCost, ValueGrid,
};
pub use kernels::{InteractionKernel, KernelError};
pub use kinetic::{
    bci_run, bci_step, binary_interact, BinaryFeedback, Checkpoint, EnsembleError, ParticleEnsemble, Snapshot,
};
pub use microscopic::{binary_feedback_step, binary_step, micro_run, micro_step, AgentSystem, AgentSystemError};
pub use sparse_feedback::{
    instantaneous_control, running_cost, shrink, soft_threshold, ControlBox, ControlError, InstantaneousParams,
    Penalty,
};
