//! Network data model, flow functions and residual evaluation.

pub mod case;
pub mod eval;
pub mod flows;
pub mod pwl;
pub mod state;

pub use case::{
    Bus, BranchRef, ContingencyDef, ElementKind, Generator, Line, NetworkCase, PenaltyTables, StateId, Transformer,
};
pub use eval::{
    branch_limit_residuals, disjunction_violation, generation_cost, nodal_residuals, objective, projected_response,
    reactive_distance, rebalance_slacks, state_flows, state_penalty, ReactiveBox,
};
pub use flows::{line_flow, transformer_flow, BranchFlow, End, EndCoefficients, FlowParams};
pub use pwl::{eval_pwl, PwlCost};
pub use state::{flat_bounds, StateLayout, StateVector};
