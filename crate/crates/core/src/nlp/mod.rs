//! Smooth nonlinear programming: problem interface, a dense primal-dual
//! interior-point solver and derivative checks.
//!
//! Problems have the form
//!
//! ```text
//! min f(x)  s.t.  cl ≤ c(x) ≤ cu,  xl ≤ x ≤ xu
//! ```
//!
//! ```
//! use scopf::nlp::{solve, Model, NlpOptions, NlpStatus, Tag, Term};
//!
//! let mut m = Model::new();
//! let x = m.add_var(f64::NEG_INFINITY, f64::INFINITY);
//! let y = m.add_var(f64::NEG_INFINITY, f64::INFINITY);
//! m.add_objective(Term::Product { a: x, b: x, coef: 1.0 });
//! m.add_objective(Term::Product { a: y, b: y, coef: 1.0 });
//! m.add_eq(vec![Term::linear(x, 1.0), Term::linear(y, 1.0)], 1.0, Tag::Generic);
//! let r = solve(&m, &[0.0, 0.0], &NlpOptions::default(), None);
//! assert_eq!(r.status, NlpStatus::Converged);
//! assert!((r.x[0] - 0.5).abs() < 1e-6);
//! ```

pub mod fd;
mod ipm;
pub mod ldl;
mod model;

use std::time::Duration;

pub use ipm::solve;
pub use model::{Constraint, Model, Scalar, Tag, Term};

/// Smooth NLP with dense derivatives.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_cons(&self) -> usize;
    /// Variable bounds; infinite entries are absent bounds.
    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Constraint bounds; `cl == cu` marks an equality.
    fn con_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    fn constraints(&self, x: &[f64], c: &mut [f64]);
    /// Row-major `m × n` Jacobian.
    fn jacobian(&self, x: &[f64], jac: &mut [f64]);
    /// Row-major `n × n` Hessian of `obj_factor·f + Σ λⱼ cⱼ`. Returns `false`
    /// when not provided, in which case differences of gradients are used.
    fn hessian(&self, _x: &[f64], _obj_factor: f64, _lambda: &[f64], _h: &mut [f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub time_limit: Option<Duration>,
    pub mu_init: f64,
    /// Fixed objective scale; computed from the starting gradient when `None`.
    pub obj_scale: Option<f64>,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500, time_limit: None, mu_init: 0.1, obj_scale: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Converged,
    IterationLimit,
    TimeLimit,
    NumericalFailure,
}

/// Internal solver state that lets a re-solve of a structurally identical
/// problem start from the previous multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub(crate) obj_scale: f64,
    pub(crate) con_scale: Vec<f64>,
    pub(crate) lambda: Vec<f64>,
    pub(crate) z_lo: Vec<f64>,
    pub(crate) z_hi: Vec<f64>,
    pub(crate) mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Scaled dual infeasibility of the Lagrangian including bound multipliers.
    pub stationarity: f64,
    /// Largest violation of the original constraints and bounds.
    pub violation: f64,
    pub status: NlpStatus,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Multipliers of the constraints in the original scaling.
    pub lambda: Vec<f64>,
    pub warm: Option<WarmStart>,
}

impl NlpResult {
    pub fn converged(&self) -> bool {
        self.status == NlpStatus::Converged
    }
}

/// Descent test `after ≤ before + 1e-10·(1 + |before|)`.
pub fn check_descent(before: f64, after: f64) -> bool {
    after <= before + 1e-10 * (1.0 + before.abs())
}

/// Largest bound or constraint violation of `x`.
pub fn violation<P: NlpProblem + ?Sized>(p: &P, x: &[f64]) -> f64 {
    let (xl, xu) = p.var_bounds();
    let (cl, cu) = p.con_bounds();
    let mut c = vec![0.0; p.num_cons()];
    p.constraints(x, &mut c);
    let mut v: f64 = 0.0;
    for i in 0..x.len() {
        v = v.max(xl[i] - x[i]).max(x[i] - xu[i]);
    }
    for j in 0..c.len() {
        v = v.max(cl[j] - c[j]).max(c[j] - cu[j]);
    }
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descent_band() {
        assert!(check_descent(5.0, 4.0));
        assert!(check_descent(5.0, 5.0 + 1e-12));
        assert!(!check_descent(5.0, 6.0));
    }
}
