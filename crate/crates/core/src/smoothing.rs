//! Softplus smoothing of the generator response disjunctions.
//!
//! `F^ε(x) = ε·ln(1 + exp(x/ε))` overestimates `max(0, x)` by at most `ε·ln 2`.
//! The active response `proj[p̲, p̄](p0 + αΔ)` is replaced by a nested softplus,
//! and the PV/PQ switching set by a relaxation using two auxiliary voltage
//! deviations `v⁺`, `v⁻`.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::eval::{reactive_distance, ReactiveBox};

/// Smoothing scale and recourse violation threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub epsilon: f64,
    pub mu: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self { epsilon: 1e-6, mu: 1e-4 }
    }
}

impl SmoothingParams {
    pub fn new(epsilon: f64, mu: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid("smoothing epsilon and mu must be positive"));
        }
        Ok(Self { epsilon, mu })
    }
}

/// Logistic function `1 / (1 + exp(-t))`, stable for all `t`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ε·ln(1 + exp(x/ε))`.
pub fn softplus(x: f64, eps: f64) -> f64 {
    let t = x / eps;
    if t > 0.0 {
        x + eps * (-t).exp().ln_1p()
    } else {
        eps * t.exp().ln_1p()
    }
}

/// First derivative of [`softplus`] in `x`.
pub fn softplus_d1(x: f64, eps: f64) -> f64 {
    sigmoid(x / eps)
}

/// Second derivative of [`softplus`] in `x`.
pub fn softplus_d2(x: f64, eps: f64) -> f64 {
    let s = sigmoid(x / eps);
    let c = sigmoid(-x / eps);
    s * c / eps
}

/// Value and first two derivatives of the smoothed active response as a
/// function of `u = p0 + αΔ`.
pub fn response_full_u(u: f64, p_lo: f64, p_hi: f64, eps: f64) -> (f64, f64, f64) {
    let w = p_hi - u;
    let inner = p_hi - softplus(w, eps);
    let s1 = sigmoid(w / eps);
    let inner_d1 = s1;
    let inner_d2 = -s1 * sigmoid(-w / eps) / eps;
    let a = inner - p_lo;
    let value = p_lo + softplus(a, eps);
    let s2 = sigmoid(a / eps);
    let d1 = s2 * inner_d1;
    let d2 = s2 * sigmoid(-a / eps) / eps * inner_d1 * inner_d1 + s2 * inner_d2;
    (value, d1, d2)
}

/// Value and derivatives of the upper-only variant as a function of `u`.
pub fn response_upper_u(u: f64, p_hi: f64, eps: f64) -> (f64, f64, f64) {
    let w = p_hi - u;
    (p_hi - softplus(w, eps), softplus_d1(w, eps), -softplus_d2(w, eps))
}

/// Smooth approximation of `proj[p̲, p̄](p0 + αΔ)`; error at most `2ε·ln 2`.
pub fn smooth_response_full(p0: f64, alpha: f64, delta: f64, p_lo: f64, p_hi: f64, eps: f64) -> f64 {
    response_full_u(p0 + alpha * delta, p_lo, p_hi, eps).0
}

/// Smooth approximation of `min(p̄, p0 + αΔ)`; error at most `ε·ln 2`.
pub fn smooth_response_upper(p0: f64, alpha: f64, delta: f64, p_hi: f64, eps: f64) -> f64 {
    response_upper_u(p0 + alpha * delta, p_hi, eps).0
}

/// Residuals of the reactive relaxation: the voltage split equality and the two
/// switching inequalities (feasible when both are `<= 0`).
pub fn reactive_relaxation_residuals(
    q: f64,
    v: f64,
    v_plus: f64,
    v_minus: f64,
    b: &ReactiveBox,
    eps: f64,
) -> (f64, f64, f64) {
    let eq = v - b.v0 - v_plus + v_minus;
    let up = v_plus - softplus(v_plus - q + b.q_lo, eps) - eps * LN_2;
    let dn = v_minus - softplus(v_minus + q - b.q_hi, eps) - eps * LN_2;
    (eq, up, dn)
}

/// Whether `(q, v, v⁺, v⁻)` satisfies every relaxed constraint, including the
/// variable boxes, with an absolute tolerance `tol` on the equality.
pub fn in_relaxed_set(q: f64, v: f64, v_plus: f64, v_minus: f64, b: &ReactiveBox, eps: f64, tol: f64) -> bool {
    let span = b.v_hi - b.v_lo;
    let boxes = (b.q_lo..=b.q_hi).contains(&q)
        && (b.v_lo..=b.v_hi).contains(&v)
        && (0.0..=span).contains(&v_plus)
        && (0.0..=span).contains(&v_minus);
    let (eq, up, dn) = reactive_relaxation_residuals(q, v, v_plus, v_minus, b, eps);
    boxes && eq.abs() <= tol && up <= 0.0 && dn <= 0.0
}

/// One-sided Hausdorff distance from the relaxed set to the exact PV/PQ set,
/// estimated on a `res × res × res` grid over `(q, v, v⁺)`.
pub fn hausdorff_gap_estimate(b: &ReactiveBox, eps: f64, res: usize) -> Result<f64> {
    if res < 10 {
        return Err(Error::invalid("grid resolution must be at least 10 per axis"));
    }
    let span = b.v_hi - b.v_lo;
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (res - 1) as f64;
    let mut gap: f64 = 0.0;
    for iq in 0..res {
        let q = step(b.q_lo, b.q_hi, iq);
        for iv in 0..res {
            let v = step(b.v_lo, b.v_hi, iv);
            let dist = reactive_distance(b, q, v);
            if dist <= gap {
                continue;
            }
            for ip in 0..res {
                let vp = step(0.0, span, ip);
                let vm = b.v0 + vp - v;
                if in_relaxed_set(q, v, vp, vm, b, eps, 1e-12) {
                    gap = dist;
                    break;
                }
            }
        }
    }
    Ok(gap)
}
