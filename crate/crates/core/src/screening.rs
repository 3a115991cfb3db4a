//! Contingency severity and ranking from a base solution.
//!
//! The severity of a contingency is the penalty the contingency state would
//! pay if the injections lost with the outaged element were shed at its
//! terminal buses: `c^p(|p|) + c^q(|q|)` of the generator for a generator
//! outage, and the same costs on the flows at both ends for a branch outage.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    state_flows, state_penalty, BranchRef, ElementKind, NetworkCase, StateId, StateLayout, StateVector,
};

/// Base slacks above this mark a [`SeverityRecord::warning`].
pub const SLACK_WARNING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityRecord {
    pub id: String,
    /// Index into the case's contingency list.
    pub index: usize,
    pub kind: ElementKind,
    pub severity: f64,
    /// The base solution has nonzero slacks.
    pub warning: bool,
}

/// Per-bus `(|p|, |q|)` lost with contingency `k` at the base solution.
pub fn lost_injections(case: &NetworkCase, base: &StateVector, k: usize) -> Result<Vec<(usize, f64, f64)>> {
    let c = case.contingencies.get(k).ok_or_else(|| Error::invalid(format!("contingency index {k} out of range")))?;
    let layout = StateLayout::new(case, StateId::Base)?;
    base.check_dims(case, &layout)?;
    Ok(match c.kind {
        ElementKind::Generator => {
            vec![(case.generators[c.element].bus, base.p[c.element].abs(), base.q[c.element].abs())]
        }
        ElementKind::Line | ElementKind::Transformer => {
            let br = if c.kind == ElementKind::Line { BranchRef::Line(c.element) } else { BranchRef::Transformer(c.element) };
            let pos = layout.branch_position(br).ok_or_else(|| Error::invalid("outaged branch missing from base"))?;
            let f = &state_flows(case, &layout, base)[pos];
            let (o, d) = case.branch_ends(br);
            vec![(o, f.p_o.abs(), f.q_o.abs()), (d, f.p_d.abs(), f.q_d.abs())]
        }
    })
}

fn base_has_slack(base: &StateVector) -> bool {
    [&base.sp_plus, &base.sp_minus, &base.sq_plus, &base.sq_minus, &base.s_branch]
        .iter()
        .any(|v| v.iter().any(|&s| s.abs() > SLACK_WARNING))
}

/// Severity of contingency `k`.
pub fn severity(case: &NetworkCase, base: &StateVector, k: usize) -> Result<SeverityRecord> {
    let pen = case.penalties(StateId::Contingency(k));
    let mut total = 0.0;
    for (_, p, q) in lost_injections(case, base, k)? {
        total += pen.p.eval(p)? + pen.q.eval(q)?;
    }
    let c = &case.contingencies[k];
    Ok(SeverityRecord { id: c.id.clone(), index: k, kind: c.kind, severity: total, warning: base_has_slack(base) })
}

/// Contingency state carrying the base values with the lost injections as
/// active and reactive slacks at their buses and every other slack zero.
pub fn severity_state(case: &NetworkCase, base: &StateVector, k: usize) -> Result<StateVector> {
    let lost = lost_injections(case, base, k)?;
    let layout = StateLayout::new(case, StateId::Contingency(k))?;
    let mut sv = StateVector::zeros(case, &layout);
    sv.v.copy_from_slice(&base.v);
    sv.theta.copy_from_slice(&base.theta);
    for (pos, &g) in layout.gens.iter().enumerate() {
        sv.p[pos] = base.p[g];
        sv.q[pos] = base.q[g];
    }
    for (bus, p, q) in lost {
        sv.sp_plus[bus] += p;
        sv.sq_plus[bus] += q;
    }
    Ok(sv)
}

/// `c_k^σ` of [`severity_state`].
pub fn severity_via_state(case: &NetworkCase, base: &StateVector, k: usize) -> Result<f64> {
    state_penalty(case, &severity_state(case, base, k)?)
}

/// Severities sorted descending, ties by id ascending.
pub fn rank(case: &NetworkCase, base: &StateVector) -> Result<Vec<SeverityRecord>> {
    let mut recs = (0..case.contingencies.len()).into_par_iter().map(|k| severity(case, base, k)).collect::<Result<Vec<_>>>()?;
    sort_ranking(&mut recs);
    Ok(recs)
}

pub fn sort_ranking(recs: &mut [SeverityRecord]) {
    recs.sort_by(|a, b| b.severity.total_cmp(&a.severity).then_with(|| a.id.cmp(&b.id)));
}

/// Contingencies per worker for a network of `num_buses` buses.
pub fn per_worker(num_buses: usize) -> usize {
    match num_buses {
        0..=1000 => 20,
        1001..=5000 => 15,
        5001..=10000 => 10,
        _ => 5,
    }
}

/// Top `min{W·n, |K|}` of `ranked`.
pub fn select_subset(ranked: &[SeverityRecord], workers: usize, num_buses: usize) -> Result<Vec<SeverityRecord>> {
    if workers == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    let n = workers.saturating_mul(per_worker(num_buses)).min(ranked.len());
    Ok(ranked[..n].to_vec())
}

/// Two columns per line: contingency id and severity.
pub fn write_ranking<W: Write>(ranked: &[SeverityRecord], mut w: W) -> Result<()> {
    for r in ranked {
        writeln!(w, "{} {}", r.id, r.severity)?;
    }
    Ok(())
}

/// Reads `(id, severity)` pairs written by [`write_ranking`].
pub fn read_ranking<R: BufRead>(r: R) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(id), Some(s), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::invalid(format!("ranking line {}: expected two columns", i + 1)));
        };
        let s: f64 = s.parse().map_err(|_| Error::invalid(format!("ranking line {}: bad severity {s:?}", i + 1)))?;
        out.push((id.to_string(), s));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled::five_bus;
    use crate::formulation::solve_base_acopf;
    use crate::nlp::NlpOptions;

    fn base() -> (NetworkCase, StateVector) {
        let case = five_bus();
        let sol = solve_base_acopf(&case, None, &NlpOptions::default()).unwrap();
        (case, sol.state)
    }

    #[test]
    fn idle_generator_has_zero_severity() {
        let (case, mut b) = base();
        let k = case.contingency_index("G2-out").unwrap();
        let g = case.contingencies[k].element;
        b.p[g] = 0.0;
        b.q[g] = 0.0;
        assert_eq!(severity(&case, &b, k).unwrap().severity, 0.0);
    }

    #[test]
    fn hand_evaluated_generator_severity() {
        let (case, mut b) = base();
        let k = case.contingency_index("G2-out").unwrap();
        let g = case.contingencies[k].element;
        b.p[g] = 1.0;
        b.q[g] = 0.2;
        // 0.02·1e5 + 0.5·5e5 + 0.48·1e8, then 0.02·1e5 + 0.18·5e5.
        let expect = 48_252_000.0 + 92_000.0;
        let s = severity(&case, &b, k).unwrap().severity;
        assert!((s - expect).abs() <= 1e-9 * expect);
    }

    #[test]
    fn matches_state_penalty() {
        let (case, b) = base();
        for k in 0..case.contingencies.len() {
            let s = severity(&case, &b, k).unwrap().severity;
            let t = severity_via_state(&case, &b, k).unwrap();
            assert!((s - t).abs() <= 1e-9 * s.abs().max(1.0));
        }
    }

    #[test]
    fn ties_break_by_id() {
        let rec = |id: &str, s: f64| SeverityRecord { id: id.into(), index: 0, kind: ElementKind::Line, severity: s, warning: false };
        let mut v = vec![rec("b", 1.0), rec("a", 1.0), rec("c", 5.0)];
        sort_ranking(&mut v);
        let ids: Vec<_> = v.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn subset_sizes() {
        let rec = |i: usize| SeverityRecord { id: format!("k{i}"), index: i, kind: ElementKind::Line, severity: 0.0, warning: false };
        let ranked: Vec<_> = (0..727).map(rec).collect();
        assert_eq!(select_subset(&ranked, 141, 500).unwrap().len(), 727);
        let ranked: Vec<_> = (0..10000).map(rec).collect();
        assert_eq!(select_subset(&ranked, 141, 12000).unwrap().len(), 705);
        assert_eq!(select_subset(&ranked, 1, 500).unwrap().len(), 20);
        assert!(select_subset(&ranked, 0, 500).is_err());
    }

    #[test]
    fn ranking_round_trips() {
        let (case, b) = base();
        let r = rank(&case, &b).unwrap();
        let mut buf = Vec::new();
        write_ranking(&r, &mut buf).unwrap();
        let back = read_ranking(&buf[..]).unwrap();
        assert_eq!(back.len(), r.len());
        for (a, (id, s)) in r.iter().zip(&back) {
            assert_eq!(&a.id, id);
            assert_eq!(a.severity, *s);
        }
    }
}
