//! Per-contingency recourse.
//!
//! A contingency is first solved with the smoothed response constraints. When
//! the solution violates the exact disjunctions by more than `μ`, generators
//! close to a bound are pinned to it and the restricted model is solved. The
//! returned state always satisfies the exact disjunctions: the final `p` is
//! snapped onto the projected response, `(q, v)` onto the PV/PQ set, and the
//! slacks are rebalanced.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{
    add_coupling, add_state, polish, ActiveMode, BlockObjective, CouplingKind, CouplingSource, ReactiveMode,
};
use crate::model::{
    disjunction_violation, projected_response, rebalance_slacks, state_penalty, ElementKind, NetworkCase, StateId,
    StateLayout, StateVector,
};
use crate::nlp::{self, Model, NlpOptions, NlpResult, NlpStatus, WarmStart};
use crate::smoothing::SmoothingParams;

/// Generators pinned by the restricted model, by generator id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestrictionSets {
    pub p_minus: BTreeSet<String>,
    pub p_plus: BTreeSet<String>,
    pub q_minus: BTreeSet<String>,
    pub q_plus: BTreeSet<String>,
}

impl RestrictionSets {
    pub fn is_empty(&self) -> bool {
        self.p_minus.is_empty() && self.p_plus.is_empty() && self.q_minus.is_empty() && self.q_plus.is_empty()
    }
}

/// Which model produced a recourse solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoursePath {
    SmoothedOnly,
    Restricted,
    Fallback,
}

/// Outcome of one model solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSolve {
    pub state: StateVector,
    pub penalty: f64,
    pub status: NlpStatus,
    pub iterations: usize,
}

/// Final solution of one contingency.
#[derive(Debug, Clone, PartialEq)]
pub struct RecourseSolution {
    pub contingency: String,
    pub state: StateVector,
    pub penalty: f64,
    pub path: RecoursePath,
    /// Disjunction violation of the smoothed solution before snapping.
    pub smoothed_violation: (f64, f64),
    pub wall_time: Duration,
}

/// Imbalance guess: output of an outaged generator spread over the
/// participating generators.
pub fn initial_delta(case: &NetworkCase, k: usize, base: &StateVector) -> Result<f64> {
    let layout = StateLayout::new(case, StateId::Contingency(k))?;
    let c = &case.contingencies[k];
    let lost = match c.kind {
        ElementKind::Generator => base.p[c.element],
        _ => 0.0,
    };
    let total: f64 = layout.gens.iter().map(|&g| case.generators[g].alpha).sum();
    Ok(if total > 0.0 { lost / total } else { 0.0 })
}

/// Base values carried into state `k`: voltages and angles kept, `p` on the
/// projected response of the initial imbalance, `q` kept, slacks rebalanced.
/// Satisfies the exact disjunctions, so it doubles as the fallback solution.
pub fn warm_start(case: &NetworkCase, k: usize, base: &StateVector) -> Result<StateVector> {
    let base_layout = StateLayout::new(case, StateId::Base)?;
    base.check_dims(case, &base_layout)?;
    let layout = StateLayout::new(case, StateId::Contingency(k))?;
    let mut sv = StateVector::zeros(case, &layout);
    sv.v.copy_from_slice(&base.v);
    sv.theta.copy_from_slice(&base.theta);
    for &r in &layout.reference_buses {
        sv.theta[r] = 0.0;
    }
    sv.delta = initial_delta(case, k, base)?;
    for (pos, &g) in layout.gens.iter().enumerate() {
        let gen = &case.generators[g];
        sv.p[pos] = projected_response(gen.p_lo, gen.p_hi, base.p[g], gen.alpha, sv.delta);
        sv.q[pos] = base.q[g].clamp(gen.q_lo, gen.q_hi);
    }
    rebalance_slacks(case, &mut sv)?;
    Ok(sv)
}

struct Built {
    model: Model,
    vars: crate::formulation::StateVars,
    x0: Vec<f64>,
}

fn build(case: &NetworkCase, k: usize, base: &StateVector, kind: &CouplingKind) -> Result<Built> {
    let mut model = Model::new();
    let vars = add_state(&mut model, case, StateId::Contingency(k), BlockObjective { generation: 0.0, penalty: 1.0 })?;
    let source = CouplingSource::fixed(case, &vars.layout, base);
    let coupling = add_coupling(&mut model, case, &vars, &source, kind)?;
    let start = warm_start(case, k, base)?;
    let mut x0 = vec![0.0; model.lo.len()];
    vars.write_start(case, &start, &mut x0);
    coupling.write_start(case, &vars, &mut x0);
    for i in 0..x0.len() {
        x0[i] = x0[i].clamp(model.lo[i], model.hi[i]);
    }
    Ok(Built { model, vars, x0 })
}

fn run(case: &NetworkCase, b: &Built, x0: &[f64], opts: &NlpOptions, warm: Option<&WarmStart>) -> Result<(ModelSolve, NlpResult)> {
    let raw = nlp::solve(&b.model, x0, opts, warm);
    let mut result = raw.clone();
    let mut iterations = result.iterations;
    if result.converged() {
        if let Some(r) = polish(&b.model, &[&b.vars], &result.x, opts) {
            iterations += r.iterations;
            result = NlpResult { status: result.status, ..r };
        }
    }
    let state = b.vars.extract(case, &result.x)?;
    let penalty = state_penalty(case, &state)?;
    Ok((ModelSolve { state, penalty, status: result.status, iterations }, raw))
}

fn solve_with(case: &NetworkCase, k: usize, base: &StateVector, kind: &CouplingKind, opts: &NlpOptions) -> Result<ModelSolve> {
    let b = build(case, k, base, kind)?;
    Ok(run(case, &b, &b.x0, opts, None)?.0)
}

/// Smoothing width of the first continuation stage.
pub const CONTINUATION_EPSILON: f64 = 1e-4;

/// Minimizes the contingency penalty with the smoothed response constraints.
/// Widths below [`CONTINUATION_EPSILON`] start from the solution at that width.
pub fn solve_smoothed_recourse(
    case: &NetworkCase,
    k: usize,
    base: &StateVector,
    params: &SmoothingParams,
    opts: &NlpOptions,
) -> Result<ModelSolve> {
    let target = build(case, k, base, &CouplingKind::Smoothed { eps: params.epsilon })?;
    if params.epsilon >= CONTINUATION_EPSILON {
        return Ok(run(case, &target, &target.x0, opts, None)?.0);
    }
    let coarse = build(case, k, base, &CouplingKind::Smoothed { eps: CONTINUATION_EPSILON })?;
    let (first, raw) = run(case, &coarse, &coarse.x0, opts, None)?;
    if first.status != NlpStatus::Converged {
        return Ok(run(case, &target, &target.x0, opts, None)?.0);
    }
    let (mut second, _) = run(case, &target, &raw.x, opts, raw.warm.as_ref())?;
    second.iterations += first.iterations;
    Ok(second)
}

/// Whether `sol` violates the exact disjunctions by more than `mu`, and the
/// generators within `mu` of a bound.
pub fn violation_check(
    case: &NetworkCase,
    k: usize,
    base: &StateVector,
    sol: &StateVector,
    mu: f64,
) -> Result<(bool, RestrictionSets)> {
    let (active, reactive) = disjunction_violation(case, k, base, sol)?;
    let layout = StateLayout::new(case, StateId::Contingency(k))?;
    let mut sets = RestrictionSets::default();
    for (pos, &g) in layout.gens.iter().enumerate() {
        let gen = &case.generators[g];
        let u = base.p[g] + gen.alpha * sol.delta;
        if gen.alpha > 0.0 {
            if u <= gen.p_lo + mu {
                sets.p_minus.insert(gen.id.clone());
            }
            if u >= gen.p_hi - mu {
                sets.p_plus.insert(gen.id.clone());
            }
        }
        if sol.q[pos] <= gen.q_lo + mu {
            sets.q_minus.insert(gen.id.clone());
        }
        if sol.q[pos] >= gen.q_hi - mu {
            sets.q_plus.insert(gen.id.clone());
        }
    }
    Ok((active.max(reactive) > mu, sets))
}

/// Minimizes the contingency penalty with each generator pinned to one branch
/// of both disjunctions.
pub fn solve_restricted_recourse(
    case: &NetworkCase,
    k: usize,
    base: &StateVector,
    sets: &RestrictionSets,
    opts: &NlpOptions,
) -> Result<ModelSolve> {
    let layout = StateLayout::new(case, StateId::Contingency(k))?;
    let mut active = Vec::with_capacity(layout.gens.len());
    let mut reactive = Vec::with_capacity(layout.gens.len());
    for &g in &layout.gens {
        let gen = &case.generators[g];
        let (lo, hi) = (sets.p_minus.contains(&gen.id), sets.p_plus.contains(&gen.id));
        active.push(match (lo, hi) {
            (true, false) => ActiveMode::AtLower,
            (false, true) => ActiveMode::AtUpper,
            (false, false) => ActiveMode::Follow,
            (true, true) => return Err(Error::invalid(format!("generator {} pinned to both active bounds", gen.id))),
        });
        let (lo, hi) = (sets.q_minus.contains(&gen.id), sets.q_plus.contains(&gen.id));
        reactive.push(match (lo, hi) {
            (true, false) => ReactiveMode::AtLower,
            (false, true) => ReactiveMode::AtUpper,
            _ => ReactiveMode::HoldVoltage,
        });
    }
    solve_with(case, k, base, &CouplingKind::Restricted { active, reactive }, opts)
}

/// Moves `p` onto the projected response of the state's Δ, each `(q, v)` onto
/// the nearest PV/PQ disjunct, and rebalances the slacks. Returns the branch
/// of each disjunction the state ended up on.
pub fn snap_to_disjunctions(
    case: &NetworkCase,
    base: &StateVector,
    sv: &mut StateVector,
) -> Result<(Vec<ActiveMode>, Vec<ReactiveMode>)> {
    let layout = StateLayout::new(case, sv.state)?;
    sv.check_dims(case, &layout)?;
    let mut active = Vec::with_capacity(layout.gens.len());
    let mut reactive = Vec::with_capacity(layout.gens.len());
    for (pos, &g) in layout.gens.iter().enumerate() {
        let gen = &case.generators[g];
        let u = base.p[g] + gen.alpha * sv.delta;
        active.push(if gen.alpha > 0.0 && u <= gen.p_lo {
            ActiveMode::AtLower
        } else if gen.alpha > 0.0 && u >= gen.p_hi {
            ActiveMode::AtUpper
        } else {
            ActiveMode::Follow
        });
        sv.p[pos] = projected_response(gen.p_lo, gen.p_hi, base.p[g], gen.alpha, sv.delta);
        let bus = &case.buses[gen.bus];
        let (q, v, v0) = (sv.q[pos], sv.v[gen.bus], base.v[gen.bus]);
        let cands = [
            (q.clamp(gen.q_lo, gen.q_hi), v0, ReactiveMode::HoldVoltage),
            (gen.q_hi, v.clamp(bus.v_lo.min(v0), v0), ReactiveMode::AtUpper),
            (gen.q_lo, v.clamp(v0, bus.v_hi.max(v0)), ReactiveMode::AtLower),
        ];
        let dist = |c: &(f64, f64, ReactiveMode)| (c.0 - q).hypot(c.1 - v);
        let best = cands.iter().min_by(|a, b| dist(a).total_cmp(&dist(b))).copied().unwrap_or(cands[0]);
        sv.q[pos] = best.0;
        sv.v[gen.bus] = best.1;
        reactive.push(best.2);
    }
    rebalance_slacks(case, sv)?;
    Ok((active, reactive))
}

/// Smoothed solve, then the restricted solve when the smoothed solution
/// violates the disjunctions by more than `μ`; the base-derived warm start
/// when both fail. The chosen state is snapped onto the disjunctions and
/// re-solved with every generator held on the branch it snapped to.
pub fn solve_contingency(
    case: &NetworkCase,
    k: usize,
    base: &StateVector,
    params: &SmoothingParams,
    opts: &NlpOptions,
) -> Result<RecourseSolution> {
    let t0 = Instant::now();
    let id = case
        .contingencies
        .get(k)
        .ok_or_else(|| Error::invalid(format!("contingency index {k} out of range")))?
        .id
        .clone();
    let smoothed = solve_smoothed_recourse(case, k, base, params, opts)?;
    let smoothed_violation = disjunction_violation(case, k, base, &smoothed.state)?;
    let (violated, sets) = violation_check(case, k, base, &smoothed.state, params.mu)?;

    let mut chosen = None;
    if smoothed.status == NlpStatus::Converged && !violated {
        chosen = Some((smoothed.state, RecoursePath::SmoothedOnly));
    } else if let Ok(r) = solve_restricted_recourse(case, k, base, &sets, opts) {
        if r.status == NlpStatus::Converged {
            chosen = Some((r.state, RecoursePath::Restricted));
        }
    }
    let (mut state, path) = match chosen {
        Some(c) => c,
        None => (warm_start(case, k, base)?, RecoursePath::Fallback),
    };
    let (active, reactive) = snap_to_disjunctions(case, base, &mut state)?;
    let mut penalty = state_penalty(case, &state)?;
    if path != RecoursePath::Fallback {
        let kind = CouplingKind::Restricted { active, reactive };
        if let Ok(r) = solve_with(case, k, base, &kind, opts) {
            if r.status == NlpStatus::Converged {
                let mut cleaned = r.state;
                snap_to_disjunctions(case, base, &mut cleaned)?;
                let p = state_penalty(case, &cleaned)?;
                if p <= penalty {
                    state = cleaned;
                    penalty = p;
                }
            }
        }
    }
    Ok(RecourseSolution { contingency: id, state, penalty, path, smoothed_violation, wall_time: t0.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled::five_bus;
    use crate::formulation::solve_base_acopf;

    fn base() -> (NetworkCase, StateVector) {
        let case = five_bus();
        let sol = solve_base_acopf(&case, None, &NlpOptions::default()).unwrap();
        (case, sol.state)
    }

    #[test]
    fn warm_start_satisfies_disjunctions() {
        let (case, b) = base();
        for k in 0..case.contingencies.len() {
            let sv = warm_start(&case, k, &b).unwrap();
            let (a, r) = disjunction_violation(&case, k, &b, &sv).unwrap();
            assert!(a < 1e-12 && r < 1e-12);
        }
    }

    #[test]
    fn membership_rules() {
        let (case, b) = base();
        let k = case.contingency_index("L3-out").unwrap();
        let mut sv = warm_start(&case, k, &b).unwrap();
        let mu = 1e-4;
        let layout = StateLayout::new(&case, StateId::Contingency(k)).unwrap();
        let pos = 1;
        let gen = &case.generators[layout.gens[pos]];
        sv.q[pos] = gen.q_hi - mu / 2.0;
        let (_, sets) = violation_check(&case, k, &b, &sv, mu).unwrap();
        assert!(sets.q_plus.contains(&gen.id));
        assert!(!sets.q_minus.contains(&gen.id));
    }

    #[test]
    fn snapping_is_exact() {
        let (case, b) = base();
        let k = 0;
        let mut sv = warm_start(&case, k, &b).unwrap();
        sv.delta += 0.3;
        sv.v[0] += 0.01;
        sv.q[0] += 0.05;
        snap_to_disjunctions(&case, &b, &mut sv).unwrap();
        let (a, r) = disjunction_violation(&case, k, &b, &sv).unwrap();
        assert!(a < 1e-12 && r < 1e-12);
    }
}
