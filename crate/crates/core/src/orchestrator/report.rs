use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::files::{self, RecordOrigin, BASE_FILE, CTG_FILE, DIAGNOSTICS_FILE, RANKING_FILE};
use super::RunConfig;
use crate::admm::{read_diagnostics, IterationRecord};
use crate::error::Result;
use crate::formulation::solve_base_acopf;
use crate::model::{generation_cost, objective, state_penalty, NetworkCase};
use crate::screening::{self, SeverityRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub buses: usize,
    pub generators: usize,
    pub lines: usize,
    pub transformers: usize,
    pub contingencies: usize,
}

impl fmt::Display for CaseSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} buses, {} generators, {} lines, {} transformers, {} contingencies",
            self.buses, self.generators, self.lines, self.transformers, self.contingencies
        )
    }
}

/// Loads and checks a case file.
pub fn validate_case(path: &Path) -> Result<CaseSummary> {
    let case = NetworkCase::load(path)?;
    Ok(CaseSummary {
        buses: case.num_buses(),
        generators: case.generators.len(),
        lines: case.lines.len(),
        transformers: case.transformers.len(),
        contingencies: case.contingencies.len(),
    })
}

/// Ranks against the base file in the output directory, or a fresh base
/// ACOPF solve when there is none, and writes the ranking file.
pub fn rank_only(config: &RunConfig) -> Result<Vec<SeverityRecord>> {
    config.validate()?;
    let case = config.load_case()?;
    let base_path = config.out_file(BASE_FILE);
    let base = if base_path.exists() {
        files::read_base(&base_path, &case)?
    } else {
        solve_base_acopf(&case, None, &config.admm.nlp)?.state
    };
    let ranked = screening::rank(&case, &base)?;
    fs::create_dir_all(&config.out_dir)?;
    let mut buf = Vec::new();
    screening::write_ranking(&ranked, &mut buf)?;
    files::write_atomic(&config.out_file(RANKING_FILE), &buf)?;
    Ok(ranked)
}

/// Totals recomputed from the solution files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub generation_cost: f64,
    pub base_penalty: f64,
    /// Recomputed from the stored states, case order.
    pub ctg_penalties: Vec<f64>,
    /// As written in the solution file.
    pub file_penalties: Vec<f64>,
    pub origins: Vec<RecordOrigin>,
    pub ids: Vec<String>,
    pub objective: f64,
    pub diagnostics: Option<Vec<IterationRecord>>,
}

/// Reads the output directory of a run.
pub fn report(case: &NetworkCase, out_dir: &Path) -> Result<RunReport> {
    let base = files::read_base(&out_dir.join(BASE_FILE), case)?;
    let mut records = files::read_ctg(&out_dir.join(CTG_FILE), case)?;
    records.sort_by_key(|r| r.index);
    if records.len() != case.contingencies.len() {
        return Err(crate::Error::invalid(format!(
            "{} contingency records for {} contingencies",
            records.len(),
            case.contingencies.len()
        )));
    }
    let ctg_penalties = records.iter().map(|r| state_penalty(case, &r.state)).collect::<Result<Vec<_>>>()?;
    let diag = out_dir.join(DIAGNOSTICS_FILE);
    let diagnostics = if diag.exists() { Some(read_diagnostics(&fs::read_to_string(diag)?)?) } else { None };
    Ok(RunReport {
        generation_cost: generation_cost(case, &base)?,
        base_penalty: state_penalty(case, &base)?,
        objective: objective(case, &base, &ctg_penalties)?,
        file_penalties: records.iter().map(|r| r.penalty).collect(),
        origins: records.iter().map(|r| r.origin).collect(),
        ids: records.iter().map(|r| case.contingencies[r.index].id.clone()).collect(),
        ctg_penalties,
        diagnostics,
    })
}

/// One line per inner iteration.
pub fn render_diagnostics(records: &[IterationRecord]) -> String {
    let mut s = String::from("   t  r            AL        max_s        max_r           d0       max_dk         beta  cert\n");
    for r in records {
        writeln!(
            s,
            "{:>4} {:>2} {:>13.6e} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}  {}",
            r.t,
            r.r,
            r.al,
            r.max_s,
            r.max_r,
            r.d0,
            r.max_dk,
            r.beta,
            if r.certificates_hold() { "ok" } else { "FLAGGED" }
        )
        .unwrap();
    }
    s
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "generation cost   {:.6}", self.generation_cost)?;
        writeln!(f, "base penalty      {:.6}", self.base_penalty)?;
        for ((id, p), o) in self.ids.iter().zip(&self.ctg_penalties).zip(&self.origins) {
            writeln!(f, "  {id:<16} {p:>18.6} {o}")?;
        }
        let mean = if self.ctg_penalties.is_empty() { 0.0 } else { self.ctg_penalties.iter().sum::<f64>() / self.ctg_penalties.len() as f64 };
        writeln!(f, "mean contingency  {mean:.6}")?;
        writeln!(f, "objective         {:.6}", self.objective)?;
        if let Some(d) = &self.diagnostics {
            let flagged = d.iter().filter(|r| !r.certificates_hold()).count();
            writeln!(f, "admm: {} inner iterations, {} with flagged certificates", d.len(), flagged)?;
            f.write_str(&render_diagnostics(d))?;
        }
        Ok(())
    }
}
