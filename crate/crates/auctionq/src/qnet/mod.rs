//! Q-function over scheduling states: pairwise presence-probability
//! inference, two-layer message-passing embeddings, and sampled Q-value
//! estimation with exact hand-written gradients.
//!
//! The embedding treats the tasks of a state as graph nodes. An inner
//! presence net scores, for every ordered task pair, how likely a robot is to
//! serve one task right after the other; the row-softmax of those scores
//! weights the messages passed between nodes. Two embedding layers run on
//! top: the first encodes each task's distance-to-robots information from the
//! action's sampled completion times, the second encodes value information
//! after concatenating a per-task scalar (the task age in the gridworld
//! problem). A final linear readout over the summed node embeddings yields
//! one Q sample; averaging over `n_samples` draws of the completion times
//! gives the estimate.

mod context;
mod forward;
mod grad;
#[cfg(test)]
mod tests_oracle;
mod view;

pub use context::{infer_presence, q_value, EvalContext};
pub use forward::{s2v_layer, softmax_rows, PresenceTape};
pub use grad::{finite_difference_report, loss_and_gradients, loss_only, BatchItem, ParamGrads};
pub use view::{ActionBinding, StateView};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Scale dividing task ages (and the equivalent per-node scalar feature)
/// before they enter any network.
pub const AGE_FEATURE_SCALE: f64 = 100.0;

/// Scale dividing gridworld completion-time samples before they enter the
/// networks; roughly the expected travel distance on the benchmark mazes.
pub const MRRC_TIME_SCALE: f64 = 20.0;

/// Weight initialization family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for every matrix.
    Symmetric,
    /// Same magnitudes, but the embedding maps are non-negative and the
    /// readout non-positive, so the initial Q is monotone decreasing in
    /// every completion-time input. A freshly initialized policy then
    /// prefers shorter assignments instead of thrashing, which is what
    /// makes parameter-space exploration productive at small scale.
    MonotonePrior,
}

impl Default for InitKind {
    fn default() -> Self {
        InitKind::MonotonePrior
    }
}

/// Pipeline variants: the full method plus its two architectural ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchFlags {
    /// Skip the distance-embedding layer; the value layer reads raw features.
    pub single_layer: bool,
    /// Replace learned presence probabilities with uniform rows.
    pub uniform_presence: bool,
    /// Backpropagate through the presence net (joint training). When off,
    /// the presence matrix is treated as a fixed input per evaluation.
    pub train_presence: bool,
}

impl Default for ArchFlags {
    fn default() -> Self {
        ArchFlags { single_layer: false, uniform_presence: false, train_presence: true }
    }
}

/// Architecture hyperparameters; the trainable matrices are sized from these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Hidden width of the presence net.
    pub p_hidden: usize,
    /// Width of the per-node input feature vector.
    pub feat_dim: usize,
    /// Softmax temperature for presence rows.
    pub tau: f64,
    /// Fixed-point sweep counts for the two layers.
    pub t1: usize,
    pub t2: usize,
    /// Samples per pair for presence inference.
    pub m_presence: usize,
    /// Outer Q samples.
    pub n_samples: usize,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub flags: ArchFlags,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            d: 64,
            p_hidden: 16,
            feat_dim: 1,
            tau: 1.0,
            t1: 3,
            t2: 3,
            m_presence: 20,
            n_samples: 8,
            init: InitKind::default(),
            flags: ArchFlags::default(),
        }
    }
}

impl ArchConfig {
    /// Small profile for finite-difference tests.
    pub fn test_profile() -> Self {
        ArchConfig {
            d: 4,
            p_hidden: 3,
            feat_dim: 1,
            tau: 1.0,
            t1: 2,
            t2: 2,
            m_presence: 2,
            n_samples: 2,
            init: InitKind::default(),
            flags: ArchFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.p_hidden < 1 || self.feat_dim < 1 {
            return Err(Error::Validation("network widths must be at least 1".into()));
        }
        if self.t1 < 1 || self.t2 < 1 || self.m_presence < 1 || self.n_samples < 1 {
            return Err(Error::Validation(
                "sweep and sample counts must be at least 1".into(),
            ));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Validation(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Input width of the value-embedding layer.
    fn concat_dim(&self) -> usize {
        if self.flags.single_layer {
            self.feat_dim + 1
        } else {
            self.d + 1
        }
    }
}

/// All trainable weights plus the architecture they are sized for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetParams {
    pub arch: ArchConfig,
    /// Presence net readout, 1 x p_hidden.
    pub p1: Matrix,
    /// Presence net input map, p_hidden x 3.
    pub p2: Matrix,
    /// Distance-layer message map, d x d.
    pub e3: Matrix,
    /// Distance-layer input map, d x feat_dim.
    pub e4: Matrix,
    /// Value-layer message map, d x d.
    pub e5: Matrix,
    /// Value-layer input map, d x (d + 1) (or feat_dim + 1 when single-layer).
    pub e6: Matrix,
    /// Readout row, 1 x d.
    pub e7: Matrix,
}

impl QNetParams {
    /// Seeded init with uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] magnitudes
    /// per matrix; the monotone-prior variant constrains the signs of the
    /// embedding blocks (see `InitKind`).
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::substream(seed, &[0x9e7]);
        let mut params = QNetParams {
            arch,
            p1: Matrix::uniform_init(1, arch.p_hidden, &mut r),
            p2: Matrix::uniform_init(arch.p_hidden, 3, &mut r),
            e3: Matrix::uniform_init(arch.d, arch.d, &mut r),
            e4: Matrix::uniform_init(arch.d, arch.feat_dim, &mut r),
            e5: Matrix::uniform_init(arch.d, arch.d, &mut r),
            e6: Matrix::uniform_init(arch.d, arch.concat_dim(), &mut r),
            e7: Matrix::uniform_init(1, arch.d, &mut r),
        };
        if arch.init == InitKind::MonotonePrior {
            for m in [&mut params.e3, &mut params.e4, &mut params.e5, &mut params.e6] {
                for v in &mut m.data {
                    *v = v.abs();
                }
            }
            for v in &mut params.e7.data {
                *v = -v.abs();
            }
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let a = &self.arch;
        let shapes = [
            ("p1", &self.p1, 1, a.p_hidden),
            ("p2", &self.p2, a.p_hidden, 3),
            ("e3", &self.e3, a.d, a.d),
            ("e4", &self.e4, a.d, a.feat_dim),
            ("e5", &self.e5, a.d, a.d),
            ("e6", &self.e6, a.d, a.concat_dim()),
            ("e7", &self.e7, 1, a.d),
        ];
        for (name, m, rows, cols) in shapes {
            if m.rows != rows || m.cols != cols {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.rows, m.cols
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("parameter matrix {name}")));
            }
        }
        Ok(())
    }

    /// The trainable matrices, in a fixed order shared with `ParamGrads`.
    pub fn blocks(&self) -> [(&'static str, &Matrix); 7] {
        [
            ("p1", &self.p1),
            ("p2", &self.p2),
            ("e3", &self.e3),
            ("e4", &self.e4),
            ("e5", &self.e5),
            ("e6", &self.e6),
            ("e7", &self.e7),
        ]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut Matrix {
        match name {
            "p1" => &mut self.p1,
            "p2" => &mut self.p2,
            "e3" => &mut self.e3,
            "e4" => &mut self.e4,
            "e5" => &mut self.e5,
            "e6" => &mut self.e6,
            "e7" => &mut self.e7,
            other => panic!("unknown parameter block {other}"),
        }
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Matrix); 7] {
        [
            ("p1", &mut self.p1),
            ("p2", &mut self.p2),
            ("e3", &mut self.e3),
            ("e4", &mut self.e4),
            ("e5", &mut self.e5),
            ("e6", &mut self.e6),
            ("e7", &mut self.e7),
        ]
    }
}

/// Presence probabilities over ordered task pairs; `p` is row-stochastic over
/// the off-diagonal entries and the diagonal is exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceMatrix {
    pub n: usize,
    /// Row-major probabilities, n x n.
    pub p: Vec<f64>,
    /// Raw scores before the softmax, n x n (diagonal unused).
    pub g: Vec<f64>,
}

impl PresenceMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != self.n * self.n {
            return Err(Error::DimensionMismatch("presence matrix size".into()));
        }
        for i in 0..self.n {
            if self.at(i, i) != 0.0 {
                return Err(Error::Validation(format!("presence diagonal non-zero at {i}")));
            }
            if self.n > 1 {
                let sum: f64 = (0..self.n).filter(|&j| j != i).map(|j| self.at(i, j)).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "presence row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A sampled Q estimate; `value` is the mean of `per_sample`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub value: f64,
    pub per_sample: Vec<f64>,
}

/// Project the embedding weights back onto the monotone cone used by
/// `InitKind::MonotonePrior`: completion-time inputs, their downstream maps,
/// and the message maps stay non-negative while the readout stays
/// non-positive, so Q remains monotone decreasing in every completion-time
/// feature. Per-node scalar columns (ages) stay unconstrained, as do the
/// presence nets. Used as an optional projected-SGD step during training to
/// keep candidate rankings coherent on action patterns the Bellman fit
/// never visits.
pub fn project_monotone(params: &mut QNetParams) {
    let clamp_nonneg = |m: &mut Matrix| {
        for v in &mut m.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    };
    clamp_nonneg(&mut params.e3);
    clamp_nonneg(&mut params.e5);
    // Completion-time column of the input map.
    for r in 0..params.e4.rows {
        let v = params.e4.at_mut(r, 0);
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    // Columns of the value-layer input map that carry completion-time
    // information: the embedding block for the two-layer pipeline, or the
    // raw completion column when single-layer. The trailing scalar column
    // stays free.
    let monotone_cols = if params.arch.flags.single_layer { 1 } else { params.arch.d };
    for r in 0..params.e6.rows {
        for c in 0..monotone_cols {
            let v = params.e6.at_mut(r, c);
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    for v in &mut params.e7.data {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
}

const CHECKPOINT_FORMAT: &str = "auctionq-qnet-v1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    params: QNetParams,
}

/// Serialize parameters to a versioned JSON blob; round-trips bit-exactly.
pub fn checkpoint_to_json(params: &QNetParams) -> Result<String> {
    let cp = Checkpoint { format: CHECKPOINT_FORMAT.into(), params: params.clone() };
    Ok(serde_json::to_string(&cp)?)
}

pub fn checkpoint_from_json(json: &str) -> Result<QNetParams> {
    let cp: Checkpoint = serde_json::from_str(json)?;
    if cp.format != CHECKPOINT_FORMAT {
        return Err(Error::Validation(format!(
            "unsupported checkpoint format {:?}",
            cp.format
        )));
    }
    cp.params.validate()?;
    Ok(cp.params)
}

pub fn save_checkpoint(params: &QNetParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_json(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<QNetParams> {
    checkpoint_from_json(&std::fs::read_to_string(path)?)
}
