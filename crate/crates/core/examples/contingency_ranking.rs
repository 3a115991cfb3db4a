//! Severity ranking of every contingency at the base ACOPF solution and the
//! subset the base-case ADMM would carry for a few worker counts.
//!
//! cargo run --example contingency_ranking [-- path/to/case.json]

use scopf::bundled;
use scopf::formulation::solve_base_acopf;
use scopf::model::NetworkCase;
use scopf::nlp::NlpOptions;
use scopf::screening::{lost_injections, rank, select_subset};

fn main() -> scopf::Result<()> {
    let case = match std::env::args().nth(1) {
        Some(p) => NetworkCase::load(p)?,
        None => bundled::five_bus(),
    };
    let base = solve_base_acopf(&case, None, &NlpOptions::default())?.state;
    let ranked = rank(&case, &base)?;
    for r in &ranked {
        let lost: Vec<String> = lost_injections(&case, &base, r.index)?
            .iter()
            .map(|(bus, p, q)| format!("{}: {p:.4}/{q:.4}", case.buses[*bus].id))
            .collect();
        println!("{:<10} {:?} severity {:>16.3}  lost {}", r.id, r.kind, r.severity, lost.join(", "));
    }
    for w in [1, 2, 8] {
        let sel = select_subset(&ranked, w, case.num_buses())?;
        println!("{w} workers -> {} contingencies", sel.len());
    }
    Ok(())
}
