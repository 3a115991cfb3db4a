//! Residuals and objective terms of the security-constrained problem.

use super::case::{BranchRef, NetworkCase, StateId};
use super::flows::BranchFlow;
use super::state::{StateLayout, StateVector};
use crate::error::{Error, Result};

/// End flows of every in-service branch, layout order.
pub fn state_flows(case: &NetworkCase, layout: &StateLayout, sv: &StateVector) -> Vec<BranchFlow> {
    layout
        .branches
        .iter()
        .map(|&br| {
            let (o, d) = case.branch_ends(br);
            case.branch_params(br).flow(sv.v[o], sv.v[d], sv.theta[o], sv.theta[d])
        })
        .collect()
}

/// Injection minus load minus outgoing flows, before slacks.
fn raw_imbalance(case: &NetworkCase, layout: &StateLayout, sv: &StateVector) -> (Vec<f64>, Vec<f64>) {
    let nb = case.num_buses();
    let mut dp: Vec<f64> = case.buses.iter().map(|b| -b.load_p).collect();
    let mut dq: Vec<f64> = case.buses.iter().map(|b| -b.load_q).collect();
    for (pos, &g) in layout.gens.iter().enumerate() {
        let bus = case.generators[g].bus;
        dp[bus] += sv.p[pos];
        dq[bus] += sv.q[pos];
    }
    for (br, f) in layout.branches.iter().zip(state_flows(case, layout, sv)) {
        let (o, d) = case.branch_ends(*br);
        dp[o] -= f.p_o;
        dq[o] -= f.q_o;
        dp[d] -= f.p_d;
        dq[d] -= f.q_d;
    }
    debug_assert_eq!(dp.len(), nb);
    (dp, dq)
}

/// Per-bus active and reactive balance residuals (zero at feasibility).
pub fn nodal_residuals(case: &NetworkCase, state: StateId, sv: &StateVector) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = StateLayout::new(case, state)?;
    sv.check_dims(case, &layout)?;
    let (mut dp, mut dq) = raw_imbalance(case, &layout, sv);
    for i in 0..case.num_buses() {
        dp[i] += -sv.sp_plus[i] + sv.sp_minus[i];
        dq[i] += -sv.sq_plus[i] + sv.sq_minus[i];
    }
    Ok((dp, dq))
}

/// Apparent-power capacity of one branch end before slack.
fn end_capacity(case: &NetworkCase, layout: &StateLayout, br: BranchRef, v_end: f64) -> f64 {
    let limit = layout.branch_limit(case, br);
    match br {
        BranchRef::Line(_) => limit * v_end,
        BranchRef::Transformer(_) => limit,
    }
}

/// Per-branch `(origin, destination)` limit violations after slack.
pub fn branch_limit_residuals(case: &NetworkCase, state: StateId, sv: &StateVector) -> Result<Vec<(f64, f64)>> {
    let layout = StateLayout::new(case, state)?;
    sv.check_dims(case, &layout)?;
    let flows = state_flows(case, &layout, sv);
    Ok(layout
        .branches
        .iter()
        .enumerate()
        .map(|(pos, &br)| {
            let (o, d) = case.branch_ends(br);
            let f = flows[pos];
            let s = sv.s_branch[pos];
            let vo = (f.p_o.hypot(f.q_o) - end_capacity(case, &layout, br, sv.v[o]) - s).max(0.0);
            let vd = (f.p_d.hypot(f.q_d) - end_capacity(case, &layout, br, sv.v[d]) - s).max(0.0);
            (vo, vd)
        })
        .collect())
}

fn slack_arg(x: f64) -> f64 {
    // Tiny negative values from solver round-off are treated as zero.
    if x < 0.0 && x > -1e-9 {
        0.0
    } else {
        x
    }
}

/// Slack penalty `c_k^σ` of a state.
pub fn state_penalty(case: &NetworkCase, sv: &StateVector) -> Result<f64> {
    let pen = case.penalties(sv.state);
    let mut total = 0.0;
    for i in 0..sv.v.len() {
        total += pen.p.eval(slack_arg(sv.sp_plus[i] + sv.sp_minus[i]))?;
        total += pen.q.eval(slack_arg(sv.sq_plus[i] + sv.sq_minus[i]))?;
    }
    for &s in &sv.s_branch {
        total += pen.s.eval(slack_arg(s))?;
    }
    Ok(total)
}

/// Generation cost of the base state.
pub fn generation_cost(case: &NetworkCase, base: &StateVector) -> Result<f64> {
    if base.state != StateId::Base || base.p.len() != case.generators.len() {
        return Err(Error::dim("generation cost needs a base-state vector"));
    }
    case.generators
        .iter()
        .zip(&base.p)
        .map(|(g, &p)| g.cost.eval(p.clamp(0.0, g.cost.total_length())))
        .sum()
}

/// Total objective: generation cost, base penalty and the mean contingency penalty.
pub fn objective(case: &NetworkCase, base: &StateVector, ctg_penalties: &[f64]) -> Result<f64> {
    if ctg_penalties.len() != case.contingencies.len() {
        return Err(Error::dim(format!(
            "expected {} contingency penalties, got {}",
            case.contingencies.len(),
            ctg_penalties.len()
        )));
    }
    let mut total = generation_cost(case, base)? + state_penalty(case, base)?;
    if !ctg_penalties.is_empty() {
        total += ctg_penalties.iter().sum::<f64>() / ctg_penalties.len() as f64;
    }
    Ok(total)
}

/// Reactive response data of one generator in one contingency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactiveBox {
    pub q_lo: f64,
    pub q_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub v0: f64,
}

/// Euclidean distance of `(q, v)` from the union of the three PV/PQ disjuncts.
pub fn reactive_distance(b: &ReactiveBox, q: f64, v: f64) -> f64 {
    let d1 = (q - q.clamp(b.q_lo, b.q_hi)).hypot(v - b.v0);
    let d2 = (q - b.q_hi).hypot(v - v.clamp(b.v_lo.min(b.v0), b.v0));
    let d3 = (q - b.q_lo).hypot(v - v.clamp(b.v0, b.v_hi.max(b.v0)));
    d1.min(d2).min(d3)
}

/// Projection of `p0 + αΔ` onto the generator box.
pub fn projected_response(p_lo: f64, p_hi: f64, p0: f64, alpha: f64, delta: f64) -> f64 {
    (p0 + alpha * delta).clamp(p_lo, p_hi)
}

/// Largest active-response and reactive-response violations of contingency `k`.
pub fn disjunction_violation(case: &NetworkCase, k: usize, base: &StateVector, ctg: &StateVector) -> Result<(f64, f64)> {
    let base_layout = StateLayout::new(case, StateId::Base)?;
    let layout = StateLayout::new(case, StateId::Contingency(k))?;
    base.check_dims(case, &base_layout)?;
    ctg.check_dims(case, &layout)?;
    let mut active: f64 = 0.0;
    let mut reactive: f64 = 0.0;
    for (pos, &g) in layout.gens.iter().enumerate() {
        let gen = &case.generators[g];
        let p0 = base.p[g];
        let target = projected_response(gen.p_lo, gen.p_hi, p0, gen.alpha, ctg.delta);
        active = active.max((ctg.p[pos] - target).abs());
        let bus = &case.buses[gen.bus];
        let rb = ReactiveBox { q_lo: gen.q_lo, q_hi: gen.q_hi, v_lo: bus.v_lo, v_hi: bus.v_hi, v0: base.v[gen.bus] };
        reactive = reactive.max(reactive_distance(&rb, ctg.q[pos], ctg.v[gen.bus]));
    }
    Ok((active, reactive))
}

/// Sets every slack to the smallest value that makes the state feasible for
/// its current voltages, angles and injections.
pub fn rebalance_slacks(case: &NetworkCase, sv: &mut StateVector) -> Result<()> {
    let layout = StateLayout::new(case, sv.state)?;
    sv.check_dims(case, &layout)?;
    let (dp, dq) = raw_imbalance(case, &layout, sv);
    for i in 0..case.num_buses() {
        sv.sp_plus[i] = dp[i].max(0.0);
        sv.sp_minus[i] = (-dp[i]).max(0.0);
        sv.sq_plus[i] = dq[i].max(0.0);
        sv.sq_minus[i] = (-dq[i]).max(0.0);
    }
    let flows = state_flows(case, &layout, sv);
    for (pos, &br) in layout.branches.iter().enumerate() {
        let (o, d) = case.branch_ends(br);
        let f = flows[pos];
        let need_o = f.p_o.hypot(f.q_o) - end_capacity(case, &layout, br, sv.v[o]);
        let need_d = f.p_d.hypot(f.q_d) - end_capacity(case, &layout, br, sv.v[d]);
        sv.s_branch[pos] = need_o.max(need_d).max(0.0);
    }
    Ok(())
}
