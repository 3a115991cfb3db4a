//! Recourse solve of every contingency: smoothed model, violation check,
//! restricted model when needed, and snapping onto the disjunctions.
//!
//! cargo run --example recourse [-- epsilon]

use scopf::bundled;
use scopf::formulation::solve_base_acopf;
use scopf::model::{disjunction_violation, state_penalty};
use scopf::nlp::NlpOptions;
use scopf::recourse::solve_contingency;
use scopf::smoothing::SmoothingParams;

fn main() -> scopf::Result<()> {
    let eps: f64 = std::env::args().nth(1).map_or(Ok(1e-6), |s| s.parse()).expect("epsilon must be a number");
    let case = bundled::five_bus();
    let base = solve_base_acopf(&case, None, &NlpOptions::default())?.state;
    let params = SmoothingParams::new(eps, 1e-4)?;
    for k in 0..case.contingencies.len() {
        let sol = solve_contingency(&case, k, &base, &params, &NlpOptions::default())?;
        let (a, r) = disjunction_violation(&case, k, &base, &sol.state)?;
        println!(
            "{:<8} {:?}  Δ {:>9.5}  penalty {:>14.6}  recomputed {:>14.6}  violation {:.1e}/{:.1e}  smoothed {:.1e}/{:.1e}  {:.0?}",
            sol.contingency,
            sol.path,
            sol.state.delta,
            sol.penalty,
            state_penalty(&case, &sol.state)?,
            a,
            r,
            sol.smoothed_violation.0,
            sol.smoothed_violation.1,
            sol.wall_time
        );
    }
    Ok(())
}
