//! Demand estimation on the linearized loader.
//!
//! Each epoch runs a forward pass (route choice, path flows, loading, DAR
//! extraction), back-propagates observation residuals through the DAR
//! matrices to a demand gradient and takes a projected step.

mod demand;
mod loss;
mod metrics;
mod operators;
mod solver;

pub use demand::DemandTensor;
pub use loss::{
    compute_gradient, compute_loss, compute_loss_states, linearized_gradient, linearized_loss, Linearization,
    LossBreakdown, LossWeights, ModelStates, TravelTimeGradient,
};
pub use metrics::{compute_metrics, FitMetrics};
pub use operators::{
    build_aggregation, AggregationOperator, AggregationSpec, Cell, Combine, GroupSpec, ObservationSet,
    ObservationStream, Stream,
};
pub use solver::{
    default_route_proportions, forward_pass, line_search_step, random_demand, solve_dode, solve_dode_from,
    ConvergenceTrace, EstimatorConfig, ForwardPass, OptimizerKind, TraceRecord,
};
