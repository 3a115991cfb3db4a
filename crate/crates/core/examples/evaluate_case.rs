//! Loads a case, solves the base ACOPF and prints residuals, flows and the
//! objective split.
//!
//! cargo run --example evaluate_case [-- path/to/case.json]

use scopf::formulation::solve_base_acopf;
use scopf::model::{generation_cost, nodal_residuals, state_flows, state_penalty, NetworkCase, StateId, StateLayout};
use scopf::nlp::NlpOptions;
use scopf::bundled;

fn main() -> scopf::Result<()> {
    let case = match std::env::args().nth(1) {
        Some(p) => NetworkCase::load(p)?,
        None => bundled::five_bus(),
    };
    let sol = solve_base_acopf(&case, None, &NlpOptions::default())?;
    let sv = &sol.state;
    println!("status {:?} after {} iterations", sol.result.status, sol.result.iterations);
    let (dp, dq) = nodal_residuals(&case, StateId::Base, sv)?;
    for (i, b) in case.buses.iter().enumerate() {
        println!("bus {:>4}  v {:.5}  θ {:>8.5}  residual {:.1e} {:.1e}", b.id, sv.v[i], sv.theta[i], dp[i], dq[i]);
    }
    let layout = StateLayout::new(&case, StateId::Base)?;
    for (br, f) in layout.branches.iter().zip(state_flows(&case, &layout, sv)) {
        println!("branch {:>4}  p {:>8.4} {:>8.4}  q {:>8.4} {:>8.4}", case.branch_id(*br), f.p_o, f.p_d, f.q_o, f.q_d);
    }
    println!("generation cost {:.4}", generation_cost(&case, sv)?);
    println!("base penalty    {:.4e}", state_penalty(&case, sv)?);
    Ok(())
}
