//! End-to-end runs: timed base-case delivery (phase 1), contingency recourse
//! over a manager-worker-writer pool (phase 2), reports and file formats.

pub mod files;
mod log;
mod phase1;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::error::{Error, Result};
use crate::model::NetworkCase;
use crate::smoothing::SmoothingParams;

pub use self::log::EventLog;
pub use phase1::{run_phase1, BaseSource, Phase1Report};
pub use pipeline::{default_record, manager_loop, run_phase2, FaultInjection, Phase2Report, PoolOptions, PoolOutcome};
pub use report::{rank_only, render_diagnostics, report, validate_case, CaseSummary, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Phase1,
    Phase2,
    Full,
    Rank,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase1" => Ok(Mode::Phase1),
            "phase2" => Ok(Mode::Phase2),
            "full" => Ok(Mode::Full),
            "rank" => Ok(Mode::Rank),
            _ => Err(Error::invalid(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case_path: PathBuf,
    pub mode: Mode,
    pub phase1_limit: Duration,
    /// Wall-clock share of one contingency; phase 2 gets this times the
    /// contingency count divided by the worker count.
    pub ctg_budget: Duration,
    pub workers: usize,
    pub admm: AdmmConfig,
    pub smoothing: SmoothingParams,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Final base write happens this long before the phase 1 limit, capped
    /// at a tenth of the limit.
    pub safety_margin: Duration,
    /// Upper bound of the seeded random delay before each worker solve.
    pub jitter: Option<Duration>,
    pub fault: Option<FaultInjection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case_path: PathBuf::new(),
            mode: Mode::Full,
            phase1_limit: Duration::from_secs(45 * 60),
            ctg_budget: Duration::from_secs(2),
            workers: 1,
            admm: AdmmConfig::default(),
            smoothing: SmoothingParams::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            safety_margin: Duration::from_secs(60),
            jitter: None,
            fault: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phase1_limit.is_zero() || self.ctg_budget.is_zero() {
            return Err(Error::invalid("time limits must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        SmoothingParams::new(self.smoothing.epsilon, self.smoothing.mu)?;
        self.admm.validate()
    }

    pub fn margin(&self) -> Duration {
        self.safety_margin.min(self.phase1_limit / 10)
    }

    /// Wall-clock limit of phase 2 for `n` contingencies.
    pub fn phase2_limit(&self, n: usize) -> Duration {
        let rounds = n.div_ceil(self.workers).max(1) as u32;
        self.ctg_budget * rounds
    }

    pub fn load_case(&self) -> Result<NetworkCase> {
        NetworkCase::load(&self.case_path)
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
