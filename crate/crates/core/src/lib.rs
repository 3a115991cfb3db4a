//! Security-constrained AC optimal power flow.
//!
//! The crate covers the whole pipeline: the network model and its residuals
//! ([`model`]), softplus smoothing of the generator response disjunctions
//! ([`smoothing`]), a dense primal-dual interior-point solver ([`nlp`]), the
//! two-level ADMM base-case solver ([`admm`]), contingency screening
//! ([`screening`]), per-contingency recourse ([`recourse`]) and the
//! manager-worker-writer pipeline with its file formats ([`orchestrator`]).
//!
//! ```
//! use scopf::bundled;
//! use scopf::model::{StateId, StateLayout, StateVector, nodal_residuals};
//!
//! let case = bundled::five_bus();
//! let layout = StateLayout::new(&case, StateId::Base).unwrap();
//! let sv = StateVector::flat_start(&case, &layout);
//! let (dp, _dq) = nodal_residuals(&case, StateId::Base, &sv).unwrap();
//! assert_eq!(dp.len(), 5);
//! ```

pub mod admm;
pub mod bundled;
mod error;
pub mod formulation;
pub mod model;
pub mod nlp;
pub mod orchestrator;
pub mod recourse;
pub mod screening;
pub mod smoothing;

pub use error::{Error, Result};
