//! Two-level ADMM on the five-bus case with three contingency blocks,
//! printing one line per inner iteration and the round summaries.
//!
//! cargo run --example admm_base_case [-- smoothed|bigm]

use scopf::admm::{build_relaxation, run, AdmmConfig, CouplingMode};
use scopf::bundled;
use scopf::model::generation_cost;
use scopf::orchestrator::render_diagnostics;

fn main() -> scopf::Result<()> {
    let coupling: CouplingMode = std::env::args().nth(1).as_deref().unwrap_or("bigm").parse()?;
    let case = bundled::five_bus();
    let config = AdmmConfig { coupling, workers: Some(1), ..AdmmConfig::default() };
    let sub = build_relaxation(&case, &[0, 1, 2], &config)?;
    let res = run(&sub, &config)?;
    print!("{}", render_diagnostics(&res.iterations));
    for r in &res.rounds {
        println!(
            "round {:>2}: {} inner, β {:.2e}, consensus {:.2e}, T bound {:.3e}, certificates {}",
            r.r, r.iterations, r.beta, r.consensus, r.t_bound, r.certificates_hold
        );
    }
    let base = sub.base_state(&res.state.x0)?;
    println!("{:?} after {} inner iterations in {:.2?}", res.status, res.total_inner, res.wall_time);
    println!("consensus {:.3e}, generation cost {:.4}", res.consensus(), generation_cost(&case, &base)?);
    Ok(())
}
