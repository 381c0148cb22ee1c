//! Experiment configuration, seeded execution, and result export.
//!
//! One declarative JSON file describes an experiment: the problem family,
//! sizes, architecture, training hyperparameters, evaluation set, and seeds.
//! Every run is fully seeded and every output embeds the crate version and a
//! hash of the configuration, so re-running a config reproduces all CSVs
//! byte-for-byte (wall-clock recording is off by default for this reason).

pub mod csv;
pub mod eval;
pub mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{generate_maze, MotionModel};
use crate::mrrc::{MrrcEnv, RewardRule, DEFAULT_EDGE_SAMPLES};
use crate::qnet::ArchConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    MrrcDet,
    MrrcStoch,
    Ipms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub env: EnvKind,
    pub reward: RewardKind,
    /// Decay base for nonlinear rewards.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    0.99
}

impl ProblemConfig {
    pub fn reward_rule(&self) -> RewardRule {
        match self.reward {
            RewardKind::Linear => RewardRule::Linear,
            RewardKind::Nonlinear => RewardRule::Nonlinear { lambda: self.lambda },
        }
    }

    pub fn motion(&self) -> MotionModel {
        match self.env {
            EnvKind::MrrcStoch => MotionModel::stochastic(),
            _ => MotionModel::deterministic(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MazeConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub dot_density: f64,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig { seed: 7, width: 11, height: 11, dot_density: 0.3 }
    }
}

/// Optional baseline checkpoint for transfer-ratio columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRef {
    pub robots: usize,
    pub tasks: usize,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    /// (robots-or-machines, tasks) pairs; the first entry is the training
    /// size, later entries matter for transfer evaluation.
    pub sizes: Vec<(usize, usize)>,
    #[serde(default)]
    pub maze: MazeConfig,
    #[serde(default = "default_age_range")]
    pub age_range: (u32, u32),
    #[serde(default = "default_edge_samples")]
    pub edge_samples: usize,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    #[serde(default = "default_eval_instances")]
    pub eval_instances: usize,
    #[serde(default)]
    pub eval_seed: u64,
    pub out_dir: String,
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Emit an episode trace CSV and an auction trace JSONL for the first
    /// evaluation instance.
    #[serde(default)]
    pub emit_traces: bool,
    /// Baselines for transfer-ratio columns.
    #[serde(default)]
    pub transfer_baselines: Vec<BaselineRef>,
}

fn default_age_range() -> (u32, u32) {
    (0, 100)
}

fn default_edge_samples() -> usize {
    DEFAULT_EDGE_SAMPLES
}

fn default_eval_instances() -> usize {
    20
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {path:?}: {e}")))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("malformed config {path:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Validation("config needs at least one (robots, tasks) size".into()));
        }
        for &(r, t) in &self.sizes {
            if r < 1 || t < 1 {
                return Err(Error::Validation(format!("invalid size ({r}, {t})")));
            }
        }
        if self.out_dir.is_empty() {
            return Err(Error::Validation("out_dir must be set".into()));
        }
        let expected_feat = match self.problem.env {
            EnvKind::Ipms => 2,
            _ => 1,
        };
        if self.arch.feat_dim != expected_feat {
            return Err(Error::Validation(format!(
                "feat_dim must be {expected_feat} for this problem family, got {}",
                self.arch.feat_dim
            )));
        }
        self.arch.validate()?;
        self.train.validate()?;
        if self.problem.env != EnvKind::Ipms {
            if self.maze.width < 5 || self.maze.height < 5 {
                return Err(Error::Validation("maze too small".into()));
            }
        }
        if self.eval_instances == 0 {
            return Err(Error::Validation("eval_instances must be positive".into()));
        }
        Ok(())
    }

    /// Stable hash of the canonical JSON form, embedded in every output.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }

    /// Training-size gridworld environment.
    pub fn mrrc_env(&self) -> Result<MrrcEnv> {
        let maze = generate_maze(
            self.maze.seed,
            self.maze.width,
            self.maze.height,
            self.maze.dot_density,
        )?;
        Ok(MrrcEnv::new(maze, self.problem.motion(), self.problem.reward_rule())
            .with_edge_samples(self.edge_samples))
    }

    /// Output directory, honoring the environment override.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var("AUCTIONQ_OUT_DIR") {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir).join(&self.out_dir),
            _ => PathBuf::from(&self.out_dir),
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Version string embedded in output files.
pub fn version_string() -> String {
    format!("auctionq v{}", env!("CARGO_PKG_VERSION"))
}

/// Worker count: AUCTIONQ_WORKERS when set, otherwise the available
/// parallelism capped at 8.
pub fn worker_count() -> usize {
    if let Ok(w) = std::env::var("AUCTIONQ_WORKERS") {
        if let Ok(n) = w.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

/// Order-deterministic parallel map over 0..n: results are collected by
/// index regardless of completion order.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_ptr = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        let f = &f;
        let next = &next;
        let slots_ptr = &slots_ptr;
        for _ in 0..workers {
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                let mut guard = slots_ptr.lock().unwrap();
                guard[i] = Some(value);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("all slots filled")).collect()
}
