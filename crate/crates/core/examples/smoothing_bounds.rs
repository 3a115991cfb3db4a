//! Softplus gap against max(0, x) and the smoothed projection response for
//! a range of smoothing scales.
//!
//! cargo run --example smoothing_bounds

use scopf::model::projected_response;
use scopf::smoothing::{smooth_response_full, softplus};

fn main() {
    let ln2 = std::f64::consts::LN_2;
    for eps in [1.0, 1e-2, 1e-4, 1e-6] {
        let worst = (-2000..=2000)
            .map(|i| i as f64 * 1e-3)
            .map(|x| softplus(x, eps) - x.max(0.0))
            .fold(0.0f64, f64::max);
        let resp = (-200..=200)
            .map(|i| i as f64 * 1e-2)
            .map(|d| (smooth_response_full(0.5, 1.0, d, 0.1, 0.9, eps) - projected_response(0.1, 0.9, 0.5, 1.0, d)).abs())
            .fold(0.0f64, f64::max);
        println!("ε {eps:>6.0e}  softplus gap {worst:.3e} (bound {:.3e})  response gap {resp:.3e} (bound {:.3e})", eps * ln2, 2.0 * eps * ln2);
    }
}
