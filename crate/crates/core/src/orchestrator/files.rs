//! Line-oriented solution files.
//!
//! `base_solution.txt`:
//!
//! ```text
//! bus <id> <v> <theta>
//! gen <id> <p> <q>
//! slack <bus id> <sp+> <sp-> <sq+> <sq->
//! branch <id> <s>
//! ```
//!
//! `ctg_solutions.txt` holds one block per contingency, in case order:
//!
//! ```text
//! contingency <id> delta <Δ> penalty <c> origin <origin>
//! bus <id> <v> <theta>
//! gen <id> <p> <q>
//! end
//! ```
//!
//! The outaged generator of a generator contingency has no `gen` line. Lines
//! starting with `#` and blank lines are ignored. Numbers use the shortest
//! representation that reads back to the same `f64`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rebalance_slacks, state_penalty, NetworkCase, StateId, StateLayout, StateVector};
use crate::recourse::RecoursePath;

pub const BASE_FILE: &str = "base_solution.txt";
pub const CTG_FILE: &str = "ctg_solutions.txt";
pub const RANKING_FILE: &str = "ranking.txt";
pub const DIAGNOSTICS_FILE: &str = "admm_diagnostics.jsonl";
pub const LOG_FILE: &str = "run_log.jsonl";
pub const PHASE1_REPORT: &str = "phase1_report.json";
pub const PHASE2_REPORT: &str = "phase2_report.json";

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) || id.starts_with('#') {
        return Err(Error::invalid(format!("id {id:?} cannot be written to a solution file")));
    }
    Ok(())
}

fn parse_num(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::invalid(format!("line {line}: missing number")))?;
    let x: f64 = tok.parse().map_err(|_| Error::invalid(format!("line {line}: bad number {tok:?}")))?;
    if !x.is_finite() {
        return Err(Error::invalid(format!("line {line}: non-finite number")));
    }
    Ok(x)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split_whitespace().collect()))
}

fn expect_len(tokens: &[&str], n: usize, line: usize) -> Result<()> {
    if tokens.len() != n {
        return Err(Error::invalid(format!("line {line}: expected {n} fields, found {}", tokens.len())));
    }
    Ok(())
}

/// Text of a base solution file.
pub fn format_base(case: &NetworkCase, sv: &StateVector) -> Result<String> {
    let layout = StateLayout::new(case, StateId::Base)?;
    sv.check_dims(case, &layout)?;
    let mut s = String::from("# bus id v theta\n");
    for (i, b) in case.buses.iter().enumerate() {
        check_id(&b.id)?;
        writeln!(s, "bus {} {} {}", b.id, sv.v[i], sv.theta[i]).unwrap();
    }
    s.push_str("# gen id p q\n");
    for (g, gen) in case.generators.iter().enumerate() {
        check_id(&gen.id)?;
        writeln!(s, "gen {} {} {}", gen.id, sv.p[g], sv.q[g]).unwrap();
    }
    s.push_str("# slack bus sp+ sp- sq+ sq-\n");
    for (i, b) in case.buses.iter().enumerate() {
        writeln!(s, "slack {} {} {} {} {}", b.id, sv.sp_plus[i], sv.sp_minus[i], sv.sq_plus[i], sv.sq_minus[i]).unwrap();
    }
    s.push_str("# branch id s\n");
    for (pos, &br) in layout.branches.iter().enumerate() {
        let id = case.branch_id(br);
        check_id(id)?;
        writeln!(s, "branch {} {}", id, sv.s_branch[pos]).unwrap();
    }
    Ok(s)
}

pub fn write_base(path: &Path, case: &NetworkCase, sv: &StateVector) -> Result<()> {
    write_atomic(path, format_base(case, sv)?.as_bytes())
}

fn fill_once(seen: &mut [bool], idx: usize, what: &str, id: &str, line: usize) -> Result<()> {
    if std::mem::replace(&mut seen[idx], true) {
        return Err(Error::invalid(format!("line {line}: duplicate {what} {id:?}")));
    }
    Ok(())
}

fn require_all(seen: &[bool], what: &str) -> Result<()> {
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("{what} #{i} missing from solution file")));
    }
    Ok(())
}

/// Parses a base solution file against `case`. Every bus, generator and
/// branch must appear exactly once.
pub fn parse_base(case: &NetworkCase, text: &str) -> Result<StateVector> {
    let layout = StateLayout::new(case, StateId::Base)?;
    let gens: HashMap<&str, usize> = case.generators.iter().enumerate().map(|(g, x)| (x.id.as_str(), g)).collect();
    let branches: HashMap<&str, usize> =
        layout.branches.iter().enumerate().map(|(pos, &br)| (case.branch_id(br), pos)).collect();
    let mut sv = StateVector::zeros(case, &layout);
    let nb = case.num_buses();
    let (mut bus_seen, mut slack_seen) = (vec![false; nb], vec![false; nb]);
    let mut gen_seen = vec![false; gens.len()];
    let mut br_seen = vec![false; branches.len()];
    let bus_of = |id: &str, line: usize| case.bus_index(id).ok_or_else(|| Error::invalid(format!("line {line}: unknown bus {id:?}")));
    for (line, t) in content_lines(text) {
        match t[0] {
            "bus" => {
                expect_len(&t, 4, line)?;
                let i = bus_of(t[1], line)?;
                fill_once(&mut bus_seen, i, "bus", t[1], line)?;
                sv.v[i] = parse_num(t.get(2).copied(), line)?;
                sv.theta[i] = parse_num(t.get(3).copied(), line)?;
            }
            "gen" => {
                expect_len(&t, 4, line)?;
                let g = *gens.get(t[1]).ok_or_else(|| Error::invalid(format!("line {line}: unknown generator {:?}", t[1])))?;
                fill_once(&mut gen_seen, g, "generator", t[1], line)?;
                sv.p[g] = parse_num(t.get(2).copied(), line)?;
                sv.q[g] = parse_num(t.get(3).copied(), line)?;
            }
            "slack" => {
                expect_len(&t, 6, line)?;
                let i = bus_of(t[1], line)?;
                fill_once(&mut slack_seen, i, "slack bus", t[1], line)?;
                sv.sp_plus[i] = parse_num(t.get(2).copied(), line)?;
                sv.sp_minus[i] = parse_num(t.get(3).copied(), line)?;
                sv.sq_plus[i] = parse_num(t.get(4).copied(), line)?;
                sv.sq_minus[i] = parse_num(t.get(5).copied(), line)?;
            }
            "branch" => {
                expect_len(&t, 3, line)?;
                let pos = *branches.get(t[1]).ok_or_else(|| Error::invalid(format!("line {line}: unknown branch {:?}", t[1])))?;
                fill_once(&mut br_seen, pos, "branch", t[1], line)?;
                sv.s_branch[pos] = parse_num(t.get(2).copied(), line)?;
            }
            other => return Err(Error::invalid(format!("line {line}: unknown record {other:?}"))),
        }
    }
    require_all(&bus_seen, "bus")?;
    require_all(&gen_seen, "generator")?;
    require_all(&slack_seen, "slack bus")?;
    require_all(&br_seen, "branch")?;
    Ok(sv)
}

pub fn read_base(path: &Path, case: &NetworkCase) -> Result<StateVector> {
    parse_base(case, &fs::read_to_string(path)?)
}

/// Producer of a contingency record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordOrigin {
    SmoothedOnly,
    Restricted,
    Fallback,
    /// Pre-written before any solve finished.
    Default,
}

impl From<RecoursePath> for RecordOrigin {
    fn from(p: RecoursePath) -> Self {
        match p {
            RecoursePath::SmoothedOnly => RecordOrigin::SmoothedOnly,
            RecoursePath::Restricted => RecordOrigin::Restricted,
            RecoursePath::Fallback => RecordOrigin::Fallback,
        }
    }
}

impl fmt::Display for RecordOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordOrigin::SmoothedOnly => "smoothed_only",
            RecordOrigin::Restricted => "restricted",
            RecordOrigin::Fallback => "fallback",
            RecordOrigin::Default => "default",
        })
    }
}

impl FromStr for RecordOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "smoothed_only" => RecordOrigin::SmoothedOnly,
            "restricted" => RecordOrigin::Restricted,
            "fallback" => RecordOrigin::Fallback,
            "default" => RecordOrigin::Default,
            _ => return Err(Error::invalid(format!("unknown record origin {s:?}"))),
        })
    }
}

/// One contingency solution.
#[derive(Debug, Clone, PartialEq)]
pub struct CtgRecord {
    pub index: usize,
    pub penalty: f64,
    pub origin: RecordOrigin,
    pub state: StateVector,
}

impl CtgRecord {
    pub fn new(case: &NetworkCase, state: StateVector, origin: RecordOrigin) -> Result<Self> {
        let StateId::Contingency(index) = state.state else {
            return Err(Error::invalid("contingency record needs a contingency state"));
        };
        Ok(Self { index, penalty: state_penalty(case, &state)?, origin, state })
    }
}

fn format_record(case: &NetworkCase, r: &CtgRecord, s: &mut String) -> Result<()> {
    let layout = StateLayout::new(case, StateId::Contingency(r.index))?;
    r.state.check_dims(case, &layout)?;
    let id = &case.contingencies[r.index].id;
    check_id(id)?;
    writeln!(s, "contingency {} delta {} penalty {} origin {}", id, r.state.delta, r.penalty, r.origin).unwrap();
    for (i, b) in case.buses.iter().enumerate() {
        check_id(&b.id)?;
        writeln!(s, "bus {} {} {}", b.id, r.state.v[i], r.state.theta[i]).unwrap();
    }
    for (pos, &g) in layout.gens.iter().enumerate() {
        let gid = &case.generators[g].id;
        check_id(gid)?;
        writeln!(s, "gen {} {} {}", gid, r.state.p[pos], r.state.q[pos]).unwrap();
    }
    s.push_str("end\n");
    Ok(())
}

/// Text of a contingency solution file; records are sorted by case index.
pub fn format_ctg(case: &NetworkCase, records: &[CtgRecord]) -> Result<String> {
    let mut sorted: Vec<&CtgRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let mut s = String::new();
    for r in sorted {
        format_record(case, r, &mut s)?;
    }
    Ok(s)
}

pub fn write_ctg(path: &Path, case: &NetworkCase, records: &[CtgRecord]) -> Result<()> {
    write_atomic(path, format_ctg(case, records)?.as_bytes())
}

/// Parses a contingency solution file. Slacks are not stored, so each state
/// gets the smallest slacks that balance its buses and branches; the
/// `penalty` field keeps the value read from the file.
pub fn parse_ctg(case: &NetworkCase, text: &str) -> Result<Vec<CtgRecord>> {
    let mut out = Vec::new();
    let mut seen = vec![false; case.contingencies.len()];
    let mut lines = content_lines(text);
    while let Some((line, t)) = lines.next() {
        if t[0] != "contingency" || t.len() != 8 || t[2] != "delta" || t[4] != "penalty" || t[6] != "origin" {
            return Err(Error::invalid(format!("line {line}: expected a contingency header")));
        }
        let k = case.contingency_index(t[1]).ok_or_else(|| Error::invalid(format!("line {line}: unknown contingency {:?}", t[1])))?;
        fill_once(&mut seen, k, "contingency", t[1], line)?;
        let layout = StateLayout::new(case, StateId::Contingency(k))?;
        let mut sv = StateVector::zeros(case, &layout);
        sv.delta = parse_num(Some(t[3]), line)?;
        let penalty = parse_num(Some(t[5]), line)?;
        let origin: RecordOrigin = t[7].parse()?;
        let mut bus_seen = vec![false; case.num_buses()];
        let mut gen_seen = vec![false; layout.gens.len()];
        loop {
            let (line, t) = lines.next().ok_or_else(|| Error::invalid(format!("record {:?} is not terminated", case.contingencies[k].id)))?;
            match t[0] {
                "end" => break,
                "bus" => {
                    expect_len(&t, 4, line)?;
                    let i = case.bus_index(t[1]).ok_or_else(|| Error::invalid(format!("line {line}: unknown bus {:?}", t[1])))?;
                    fill_once(&mut bus_seen, i, "bus", t[1], line)?;
                    sv.v[i] = parse_num(Some(t[2]), line)?;
                    sv.theta[i] = parse_num(Some(t[3]), line)?;
                }
                "gen" => {
                    expect_len(&t, 4, line)?;
                    let pos = layout
                        .gens
                        .iter()
                        .position(|&g| case.generators[g].id == t[1])
                        .ok_or_else(|| Error::invalid(format!("line {line}: generator {:?} not in service", t[1])))?;
                    fill_once(&mut gen_seen, pos, "generator", t[1], line)?;
                    sv.p[pos] = parse_num(Some(t[2]), line)?;
                    sv.q[pos] = parse_num(Some(t[3]), line)?;
                }
                other => return Err(Error::invalid(format!("line {line}: unknown record {other:?}"))),
            }
        }
        require_all(&bus_seen, "bus")?;
        require_all(&gen_seen, "generator")?;
        rebalance_slacks(case, &mut sv)?;
        out.push(CtgRecord { index: k, penalty, origin, state: sv });
    }
    Ok(out)
}

pub fn read_ctg(path: &Path, case: &NetworkCase) -> Result<Vec<CtgRecord>> {
    parse_ctg(case, &fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled::five_bus;
    use crate::recourse::warm_start;

    fn base(case: &NetworkCase) -> StateVector {
        let layout = StateLayout::new(case, StateId::Base).unwrap();
        let mut sv = StateVector::flat_start(case, &layout);
        sv.theta[1] = -0.1234567890123;
        rebalance_slacks(case, &mut sv).unwrap();
        sv
    }

    #[test]
    fn base_round_trips_exactly() {
        let case = five_bus();
        let sv = base(&case);
        let text = format_base(&case, &sv).unwrap();
        assert_eq!(parse_base(&case, &text).unwrap(), sv);
    }

    #[test]
    fn base_rejects_missing_and_duplicate_lines() {
        let case = five_bus();
        let text = format_base(&case, &base(&case)).unwrap();
        let missing: String = text.lines().filter(|l| !l.starts_with("gen ")).map(|l| format!("{l}\n")).collect();
        assert!(parse_base(&case, &missing).is_err());
        let dup = format!("{text}{}\n", text.lines().find(|l| l.starts_with("bus ")).unwrap());
        assert!(parse_base(&case, &dup).is_err());
    }

    #[test]
    fn ctg_round_trips_in_case_order() {
        let case = five_bus();
        let b = base(&case);
        let mut recs: Vec<_> = (0..case.contingencies.len())
            .rev()
            .map(|k| CtgRecord::new(&case, warm_start(&case, k, &b).unwrap(), RecordOrigin::Default).unwrap())
            .collect();
        let text = format_ctg(&case, &recs).unwrap();
        let back = parse_ctg(&case, &text).unwrap();
        recs.reverse();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.penalty, b.penalty);
            assert_eq!(a.state.v, b.state.v);
            assert_eq!(a.state.p, b.state.p);
            assert_eq!(a.state.delta, b.state.delta);
            assert!((state_penalty(&case, &b.state).unwrap() - a.penalty).abs() <= 1e-9 * a.penalty.max(1.0));
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert!(!dir.path().join("x.txt.tmp").exists());
    }
}
