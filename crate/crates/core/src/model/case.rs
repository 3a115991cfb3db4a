//! Network data and the JSON case format.
//!
//! Network quantities in the file are per unit on `s_base`. Cost and penalty
//! tables are given in MW-based units (piece widths in MW, slopes in $/MW) and
//! converted to per unit at load time.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flows::FlowParams;
use super::pwl::PwlCost;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub v_lo: f64,
    pub v_hi: f64,
    pub load_p: f64,
    pub load_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: usize,
    pub p_lo: f64,
    pub p_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub alpha: f64,
    pub cost: PwlCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub b_ch: f64,
    pub r_max_base: f64,
    pub r_max_ctg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub b_ch: f64,
    pub tap: f64,
    pub shift: f64,
    pub s_max_base: f64,
    pub s_max_ctg: f64,
}

impl Line {
    pub fn params(&self) -> FlowParams {
        FlowParams { g: self.g, b: self.b, b_ch: self.b_ch, tap: 1.0, shift: 0.0 }
    }
}

impl Transformer {
    pub fn params(&self) -> FlowParams {
        FlowParams { g: self.g, b: self.b, b_ch: self.b_ch, tap: self.tap, shift: self.shift }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Generator,
    Line,
    Transformer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyDef {
    pub id: String,
    pub kind: ElementKind,
    /// Index into the generator, line or transformer list.
    pub element: usize,
}

/// A branch is either a line or a transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchRef {
    Line(usize),
    Transformer(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTables {
    pub p: PwlCost,
    pub q: PwlCost,
    pub s: PwlCost,
}

impl PenaltyTables {
    /// The three-piece tables in per unit for a given `s_base`.
    pub fn standard(s_base: f64) -> Self {
        let lengths = [2.0, 50.0, f64::INFINITY];
        let make = || PwlCost::from_natural_units(&lengths, &[1e3, 5e3, 1e6], s_base).expect("valid table");
        Self { p: make(), q: make(), s: make() }
    }
}

/// Which state of the problem a vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateId {
    Base,
    Contingency(usize),
}

/// Immutable network case.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub s_base: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
    pub transformers: Vec<Transformer>,
    pub contingencies: Vec<ContingencyDef>,
    pub base_penalties: PenaltyTables,
    pub ctg_penalties: PenaltyTables,
    pub delta_weight: f64,
    bus_index: HashMap<String, usize>,
}

// ---- file format ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    pub s_base: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_weight: Option<f64>,
    pub buses: Vec<BusRecord>,
    pub generators: Vec<GeneratorRecord>,
    #[serde(default)]
    pub lines: Vec<LineRecord>,
    #[serde(default)]
    pub transformers: Vec<TransformerRecord>,
    #[serde(default)]
    pub contingencies: Vec<ContingencyRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalties: Option<PenaltyRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: String,
    pub v_lo: f64,
    pub v_hi: f64,
    #[serde(default)]
    pub load_p: f64,
    #[serde(default)]
    pub load_q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub id: String,
    pub bus: String,
    pub p_lo: f64,
    pub p_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub alpha: f64,
    /// Widths in MW, slopes in $/MW.
    pub cost: PwlCost,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub g: f64,
    pub b: f64,
    #[serde(default)]
    pub b_ch: f64,
    pub r_max_base: f64,
    pub r_max_ctg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub g: f64,
    pub b: f64,
    #[serde(default)]
    pub b_ch: f64,
    pub tap: f64,
    #[serde(default)]
    pub shift: f64,
    pub s_max_base: f64,
    pub s_max_ctg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContingencyRecord {
    pub id: String,
    pub kind: ElementKind,
    pub element: String,
}

/// Tables in MW-based units. Missing tables fall back to the standard ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyRecord {
    pub p: Option<PwlCost>,
    pub q: Option<PwlCost>,
    pub s: Option<PwlCost>,
    #[serde(default)]
    pub contingency: Option<Box<PenaltyRecord>>,
}

fn convert(c: &PwlCost, s_base: f64) -> Result<PwlCost> {
    PwlCost::from_natural_units(c.lengths(), c.slopes(), s_base)
}

fn tables(rec: Option<&PenaltyRecord>, fallback: &PenaltyTables, s_base: f64) -> Result<PenaltyTables> {
    let Some(rec) = rec else { return Ok(fallback.clone()) };
    let pick = |c: &Option<PwlCost>, d: &PwlCost| -> Result<PwlCost> {
        let t = match c {
            Some(c) => convert(c, s_base)?,
            None => d.clone(),
        };
        if !t.is_unbounded() {
            return Err(Error::invalid("penalty tables must end with an unbounded piece"));
        }
        Ok(t)
    };
    Ok(PenaltyTables {
        p: pick(&rec.p, &fallback.p)?,
        q: pick(&rec.q, &fallback.q)?,
        s: pick(&rec.s, &fallback.s)?,
    })
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Invalid(msg()))
    }
}

fn finite(vals: &[f64]) -> bool {
    vals.iter().all(|v| v.is_finite())
}

impl NetworkCase {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn from_file(f: CaseFile) -> Result<Self> {
        check(f.s_base.is_finite() && f.s_base > 0.0, || format!("s_base must be positive, got {}", f.s_base))?;
        check(!f.buses.is_empty(), || "case has no buses".into())?;
        let delta_weight = f.delta_weight.unwrap_or(0.5);
        check((0.0..=1.0).contains(&delta_weight), || "delta_weight must lie in [0, 1]".into())?;

        let mut bus_index = HashMap::new();
        let mut buses = Vec::with_capacity(f.buses.len());
        for b in &f.buses {
            check(bus_index.insert(b.id.clone(), buses.len()).is_none(), || format!("duplicate bus id {}", b.id))?;
            check(finite(&[b.v_lo, b.v_hi, b.load_p, b.load_q]), || format!("bus {} has non-finite data", b.id))?;
            check(0.0 < b.v_lo && b.v_lo <= b.v_hi, || format!("bus {} voltage bounds invalid", b.id))?;
            buses.push(Bus { id: b.id.clone(), v_lo: b.v_lo, v_hi: b.v_hi, load_p: b.load_p, load_q: b.load_q });
        }
        let bus = |id: &str, owner: &str| -> Result<usize> {
            bus_index.get(id).copied().ok_or_else(|| Error::Invalid(format!("{owner} references unknown bus {id}")))
        };

        let mut ids = HashMap::new();
        let mut generators = Vec::new();
        for g in &f.generators {
            check(ids.insert(g.id.clone(), generators.len()).is_none(), || format!("duplicate generator id {}", g.id))?;
            check(finite(&[g.p_lo, g.p_hi, g.q_lo, g.q_hi, g.alpha]), || format!("generator {} has non-finite data", g.id))?;
            check(g.p_lo <= g.p_hi && g.q_lo <= g.q_hi, || format!("generator {} bounds invalid", g.id))?;
            check(g.alpha >= 0.0, || format!("generator {} has negative participation factor", g.id))?;
            check(g.p_lo >= 0.0, || format!("generator {} must have p_lo >= 0", g.id))?;
            let cost = convert(&g.cost, f.s_base)?;
            check(g.p_hi <= cost.total_length() * (1.0 + 1e-12), || format!("generator {} cost does not cover p_hi", g.id))?;
            generators.push(Generator {
                id: g.id.clone(),
                bus: bus(&g.bus, &g.id)?,
                p_lo: g.p_lo,
                p_hi: g.p_hi,
                q_lo: g.q_lo,
                q_hi: g.q_hi,
                alpha: g.alpha,
                cost,
            });
        }
        let gen_ids = ids;

        let mut line_ids = HashMap::new();
        let mut lines = Vec::new();
        for l in &f.lines {
            check(line_ids.insert(l.id.clone(), lines.len()).is_none(), || format!("duplicate line id {}", l.id))?;
            check(finite(&[l.g, l.b, l.b_ch, l.r_max_base, l.r_max_ctg]), || format!("line {} has non-finite data", l.id))?;
            check(l.r_max_base >= 0.0 && l.r_max_ctg >= 0.0, || format!("line {} limits must be nonnegative", l.id))?;
            let (from, to) = (bus(&l.from, &l.id)?, bus(&l.to, &l.id)?);
            check(from != to, || format!("line {} connects a bus to itself", l.id))?;
            lines.push(Line {
                id: l.id.clone(),
                from,
                to,
                g: l.g,
                b: l.b,
                b_ch: l.b_ch,
                r_max_base: l.r_max_base,
                r_max_ctg: l.r_max_ctg,
            });
        }

        let mut xf_ids = HashMap::new();
        let mut transformers = Vec::new();
        for t in &f.transformers {
            check(xf_ids.insert(t.id.clone(), transformers.len()).is_none(), || format!("duplicate transformer id {}", t.id))?;
            check(
                finite(&[t.g, t.b, t.b_ch, t.tap, t.shift, t.s_max_base, t.s_max_ctg]),
                || format!("transformer {} has non-finite data", t.id),
            )?;
            check(t.tap > 0.0, || format!("transformer {} tap must be positive", t.id))?;
            check(t.s_max_base >= 0.0 && t.s_max_ctg >= 0.0, || format!("transformer {} limits must be nonnegative", t.id))?;
            let (from, to) = (bus(&t.from, &t.id)?, bus(&t.to, &t.id)?);
            check(from != to, || format!("transformer {} connects a bus to itself", t.id))?;
            transformers.push(Transformer {
                id: t.id.clone(),
                from,
                to,
                g: t.g,
                b: t.b,
                b_ch: t.b_ch,
                tap: t.tap,
                shift: t.shift,
                s_max_base: t.s_max_base,
                s_max_ctg: t.s_max_ctg,
            });
        }

        let mut ctg_ids = HashMap::new();
        let mut contingencies = Vec::new();
        for c in &f.contingencies {
            check(ctg_ids.insert(c.id.clone(), ()).is_none(), || format!("duplicate contingency id {}", c.id))?;
            let table = match c.kind {
                ElementKind::Generator => &gen_ids,
                ElementKind::Line => &line_ids,
                ElementKind::Transformer => &xf_ids,
            };
            let element = *table
                .get(&c.element)
                .ok_or_else(|| Error::Invalid(format!("contingency {} references unknown element {}", c.id, c.element)))?;
            contingencies.push(ContingencyDef { id: c.id.clone(), kind: c.kind, element });
        }

        let standard = PenaltyTables::standard(f.s_base);
        let base_penalties = tables(f.penalties.as_ref(), &standard, f.s_base)?;
        let ctg_rec = f.penalties.as_ref().and_then(|p| p.contingency.as_deref());
        let ctg_penalties = tables(ctg_rec, &base_penalties, f.s_base)?;

        Ok(Self {
            s_base: f.s_base,
            buses,
            generators,
            lines,
            transformers,
            contingencies,
            base_penalties,
            ctg_penalties,
            delta_weight,
            bus_index,
        })
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn contingency_index(&self, id: &str) -> Option<usize> {
        self.contingencies.iter().position(|c| c.id == id)
    }

    pub fn penalties(&self, state: StateId) -> &PenaltyTables {
        match state {
            StateId::Base => &self.base_penalties,
            StateId::Contingency(_) => &self.ctg_penalties,
        }
    }

    /// All branches, lines first.
    pub fn branches(&self) -> impl Iterator<Item = BranchRef> + '_ {
        (0..self.lines.len()).map(BranchRef::Line).chain((0..self.transformers.len()).map(BranchRef::Transformer))
    }

    pub fn branch_ends(&self, br: BranchRef) -> (usize, usize) {
        match br {
            BranchRef::Line(i) => (self.lines[i].from, self.lines[i].to),
            BranchRef::Transformer(i) => (self.transformers[i].from, self.transformers[i].to),
        }
    }

    pub fn branch_params(&self, br: BranchRef) -> FlowParams {
        match br {
            BranchRef::Line(i) => self.lines[i].params(),
            BranchRef::Transformer(i) => self.transformers[i].params(),
        }
    }

    pub fn branch_id(&self, br: BranchRef) -> &str {
        match br {
            BranchRef::Line(i) => &self.lines[i].id,
            BranchRef::Transformer(i) => &self.transformers[i].id,
        }
    }

    /// Copy of the case keeping only the listed contingencies.
    pub fn with_contingencies(&self, keep: &[usize]) -> Self {
        let mut c = self.clone();
        c.contingencies = keep.iter().map(|&k| self.contingencies[k].clone()).collect();
        c
    }

    /// Largest participation-weighted imbalance magnitude used to bound Δ.
    pub fn delta_bound(&self) -> f64 {
        let total: f64 = self.generators.iter().map(|g| g.p_hi).sum();
        let min_alpha = self.generators.iter().map(|g| g.alpha).filter(|a| *a > 0.0).fold(f64::INFINITY, f64::min);
        if min_alpha.is_finite() {
            total / min_alpha
        } else {
            0.0
        }
    }
}
