use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{DiversityWeighting, LossWeights, Mode};
use crate::summarize::DEFAULT_BUDGET;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of attention layers `L`.
    pub layers: usize,
    /// Input/output feature width `d`.
    pub d: usize,
    /// Subspace width of every head; its length is the head count `N`.
    pub head_dims: Vec<usize>,
    /// LSTM units `u`.
    pub lstm_units: usize,
    /// Divide attention logits by `sqrt(d_n)`.
    pub scaled: bool,
    /// Multiplier on the `±1/sqrt(fan_in)` init bound of the attention
    /// encoder matrices.
    pub init_gain: f64,
}

impl Default for ModelConfig {
    /// 24 heads (12 of width 64, 12 of width 128), 3 layers, 1024-wide
    /// features and a 512-unit LSTM.
    fn default() -> Self {
        let mut head_dims = vec![64; 12];
        head_dims.extend([128; 12]);
        ModelConfig {
            layers: 3,
            d: 1024,
            head_dims,
            lstm_units: 512,
            scaled: true,
            init_gain: 1.0,
        }
    }
}

impl ModelConfig {
    /// `heads` equal-width heads.
    pub fn uniform(d: usize, heads: usize, head_dim: usize, layers: usize, units: usize) -> Self {
        ModelConfig {
            layers,
            d,
            head_dims: vec![head_dim; heads],
            lstm_units: units,
            scaled: true,
            init_gain: 1.0,
        }
    }

    pub fn heads(&self) -> usize {
        self.head_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d == 0 || self.lstm_units == 0 {
            return Err(Error::Usage(
                "layers, d and lstm_units must be positive".into(),
            ));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return Err(Error::Usage(format!(
                "init gain {} must be positive",
                self.init_gain
            )));
        }
        if self.head_dims.is_empty() || self.head_dims.contains(&0) {
            return Err(Error::Usage(
                "need at least one head and every head width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Segments over which the diversity penalty compares frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiversitySegments {
    /// The whole video is one segment.
    #[default]
    Video,
    /// Annotated shot boundaries, or change-point shots when absent.
    Shots,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of training videos that keep their labels; `None` keeps all.
    pub labels_fraction: Option<f64>,
    pub model: ModelConfig,
    pub budget_fraction: f64,
    pub weights: LossWeights,
    /// Average the reconstruction error over frames instead of summing.
    pub rec_mean: bool,
    /// Train the LSTM autoencoder branch (reconstruction + consistency).
    pub use_autoencoder: bool,
    pub diversity: DiversityWeighting,
    pub diversity_segments: DiversitySegments,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Supervised,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(5.0),
            epochs: 50,
            seed: 0,
            labels_fraction: None,
            model: ModelConfig::default(),
            budget_fraction: DEFAULT_BUDGET,
            weights: LossWeights::default(),
            rec_mean: false,
            use_autoencoder: true,
            diversity: DiversityWeighting::Soft,
            diversity_segments: DiversitySegments::Video,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Usage(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return usage(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return usage("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return usage("Adam epsilon must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return usage(format!("gradient clip {c} must be positive"));
            }
        }
        if let Some(f) = self.labels_fraction {
            if !(0.0..=1.0).contains(&f) {
                return usage(format!("label fraction {f} outside [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return usage(format!("budget fraction {} outside [0, 1]", self.budget_fraction));
        }
        if let DiversityWeighting::HardTopK { fraction } = self.diversity {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return usage(format!("top-k fraction {fraction} outside (0, 1]"));
            }
        }
        self.model.validate()
    }

    /// Canonical JSON used for hashing and checkpoint storage.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
