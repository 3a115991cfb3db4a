//! Interior-point solve of a small nonconvex problem, with a derivative
//! check against central differences.
//!
//! cargo run --example nlp_solve

use scopf::nlp::fd::check_derivatives;
use scopf::nlp::{solve, Model, NlpOptions, Tag, Term};

fn main() {
    // min x² + y² − xy  s.t.  xy ≥ 1,  0 ≤ x ≤ 3
    let mut m = Model::new();
    let x = m.add_var(0.0, 3.0);
    let y = m.add_var(f64::NEG_INFINITY, f64::INFINITY);
    m.add_objective(Term::Product { a: x, b: x, coef: 1.0 });
    m.add_objective(Term::Product { a: y, b: y, coef: 1.0 });
    m.add_objective(Term::Product { a: x, b: y, coef: -1.0 });
    m.add_constraint(vec![Term::Product { a: x, b: y, coef: 1.0 }], 1.0, f64::INFINITY, Tag::Generic);

    let r = solve(&m, &[2.0, 2.0], &NlpOptions::default(), None);
    println!("{:?} in {} iterations: x = {:.6}, y = {:.6}, f = {:.6}", r.status, r.iterations, r.x[0], r.x[1], r.objective);
    println!("violation {:.1e}, stationarity {:.1e}", r.violation, r.stationarity);
    let rep = check_derivatives(&m, &[0.7, 1.3], &[0.5]);
    println!("largest relative derivative error {:.2e}", rep.max());
}
