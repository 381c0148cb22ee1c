//! CSV export with a pinned header contract per file kind.
//!
//! Every file starts with a `#` comment carrying the crate version and the
//! config hash, then the contract header, then rows. Floats print in Rust's
//! shortest round-trip form, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str =
    "episode,wall_ms,loss,eval_mean_return,eval_pct_optimal,eval_pct_sga,explore_prob";
pub const EVAL_INSTANCES_HEADER: &str =
    "instance,seed,policy_return,sga_return,oracle_reward,pct_optimal,pct_sga,truncated";
pub const EVAL_SUMMARY_HEADER: &str =
    "n_instances,mean_return,std_return,mean_sga_return,pct_optimal,pct_sga";
pub const TRANSFER_HEADER: &str =
    "robots,tasks,mean_return,pct_sga,pct_optimal,baseline_mean_return,ratio_pct";
pub const ABLATE_CURVES_HEADER: &str = "arm,seed,episode,loss,eval_mean_return,explore_prob";
pub const ABLATE_FINAL_HEADER: &str = "arm,seed,final_eval_return";
pub const IPMS_RESULTS_HEADER: &str =
    "instance,seed,policy_makespan,local_search_makespan,ratio_pct,lower_bound";
pub const GRADCHECK_HEADER: &str = "block,max_rel_error";
pub const GANTT_HEADER: &str = "machine,task,start,setup_end,finish";
pub const ORACLE_HEADER: &str = "instance,seed,optimal_reward,explored";
pub const EPISODE_TRACE_HEADER: &str = "clock,action,reward,remaining";

/// In-memory CSV assembly.
pub struct CsvFile {
    header: &'static str,
    body: String,
}

impl CsvFile {
    pub fn new(header: &'static str, version: &str, config_hash: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(body, "# {version} config={config_hash}");
        let _ = writeln!(body, "{header}");
        CsvFile { header, body }
    }

    pub fn push_row(&mut self, fields: &[CsvField<'_>]) {
        let expected = self.header.split(',').count();
        debug_assert_eq!(fields.len(), expected, "row width vs header {:?}", self.header);
        let mut first = true;
        for f in fields {
            if !first {
                self.body.push(',');
            }
            first = false;
            match f {
                CsvField::Int(v) => {
                    let _ = write!(self.body, "{v}");
                }
                CsvField::UInt(v) => {
                    let _ = write!(self.body, "{v}");
                }
                CsvField::Float(v) => {
                    let _ = write!(self.body, "{v}");
                }
                CsvField::OptFloat(Some(v)) => {
                    let _ = write!(self.body, "{v}");
                }
                CsvField::OptFloat(None) => {}
                CsvField::Str(s) => {
                    debug_assert!(!s.contains(','), "unescaped comma in CSV field");
                    self.body.push_str(s);
                }
                CsvField::Bool(b) => {
                    let _ = write!(self.body, "{b}");
                }
            }
        }
        self.body.push('\n');
    }

    pub fn contents(&self) -> &str {
        &self.body
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &self.body)?;
        Ok(())
    }
}

pub enum CsvField<'a> {
    Int(i64),
    UInt(u64),
    Float(f64),
    OptFloat(Option<f64>),
    Str(&'a str),
    Bool(bool),
}

/// Check that a written file honors its header contract.
pub fn validate_contract(path: &Path, header: &str) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if !first.starts_with("# auctionq v") || !first.contains("config=") {
        return Err(Error::Validation(format!("{path:?}: missing version/config comment")));
    }
    let head = lines.next().unwrap_or_default();
    if head != header {
        return Err(Error::Validation(format!(
            "{path:?}: header {head:?} does not match contract {header:?}"
        )));
    }
    let width = header.split(',').count();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        if line.split(',').count() != width {
            return Err(Error::Validation(format!("{path:?}: row {i} has wrong arity")));
        }
    }
    Ok(())
}
