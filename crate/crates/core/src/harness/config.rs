use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backbone::BackbonePreset;
use crate::clip_align::{ProviderSpec, DEFAULT_TEMPLATE, DEFAULT_WIDTH};
use crate::evaluation::{default_grid, validate_grid};
use crate::{Error, Result, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    #[default]
    Fc,
    Lstm,
}

impl core::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fc" => Ok(HeadKind::Fc),
            "lstm" => Ok(HeadKind::Lstm),
            other => Err(Error::Contract(format!("unknown head {other:?}"))),
        }
    }
}

/// Which backbone stages keep their initial weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeFlags {
    /// The convolutional trunk.
    pub backbone: bool,
    pub attention: bool,
    pub gdconv: bool,
}

impl Default for FreezeFlags {
    fn default() -> Self {
        Self {
            backbone: true,
            attention: true,
            gdconv: true,
        }
    }
}

impl FreezeFlags {
    pub fn all_frozen(&self) -> bool {
        self.backbone && self.attention && self.gdconv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub name: OptimizerName,
    /// `None` picks 1e-3 when only heads train and 1e-4 when fine-tuning.
    pub lr: Option<f64>,
    /// Frames per step. Recurrent heads take `batch_size / window` windows.
    pub batch_size: usize,
    pub steps: usize,
    /// Validation cadence in steps.
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            name: OptimizerName::Adam,
            lr: None,
            batch_size: 32,
            steps: 300,
            eval_every: 50,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    pub provider: String,
    pub provider_seed: u64,
    pub width: usize,
    pub template: String,
    pub temperature: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            provider: "stub".into(),
            provider_seed: 0,
            width: DEFAULT_WIDTH,
            template: DEFAULT_TEMPLATE.into(),
            temperature: 1.0,
        }
    }
}

impl ClipConfig {
    pub fn provider_spec(&self) -> ProviderSpec {
        ProviderSpec {
            name: self.provider.clone(),
            seed: self.provider_seed,
            width: self.width,
        }
    }
}

/// Where the curated data lives. Relative paths resolve against the
/// dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub root: Option<String>,
    pub images: Option<String>,
    pub train_index: Option<String>,
    pub val_index: Option<String>,
    /// External weights loaded into the backbone before training.
    pub pretrained: Option<String>,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Task,
    pub head: HeadKind,
    /// Use the contrastive vision-language path instead of the backbone.
    pub clip: bool,
    pub backbone: BackbonePreset,
    pub freeze: FreezeFlags,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Training window for recurrent heads.
    pub window: usize,
    pub lstm_hidden: usize,
    pub va_range: (f64, f64),
    pub threshold_grid: Vec<f64>,
    pub clip_options: ClipConfig,
    pub data: DataPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Expr,
            head: HeadKind::Fc,
            clip: false,
            backbone: BackbonePreset::Desk,
            freeze: FreezeFlags::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            window: 16,
            lstm_hidden: 256,
            va_range: (-1.0, 1.0),
            threshold_grid: default_grid(),
            clip_options: ClipConfig::default(),
            data: DataPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn new(task: Task, head: HeadKind, clip: bool) -> Self {
        Self {
            task,
            head,
            clip,
            ..Self::default()
        }
    }

    /// Are only head (and adapter) parameters trained?
    pub fn head_only(&self) -> bool {
        self.clip || self.freeze.all_frozen()
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer
            .lr
            .unwrap_or(if self.head_only() { 1e-3 } else { 1e-4 })
    }

    /// Frames per recurrent window batch.
    pub fn windows_per_batch(&self) -> usize {
        (self.optimizer.batch_size / self.window.max(1)).max(1)
    }

    /// Row label in the comparison table.
    pub fn method(&self) -> String {
        crate::evaluation::method_label(self.clip, self.head == HeadKind::Lstm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip && self.task != Task::Expr {
            return Err(Error::Contract(format!(
                "the contrastive path only supports expr, not {}",
                self.task
            )));
        }
        if self.optimizer.batch_size == 0 || self.window == 0 || self.lstm_hidden == 0 {
            return Err(Error::Contract("batch size, window and hidden width must be positive".into()));
        }
        if self.task == Task::Va && self.optimizer.batch_size < 2 {
            return Err(Error::Contract("concordance needs batches of at least 2 frames".into()));
        }
        if self.optimizer.eval_every == 0 {
            return Err(Error::Contract("eval_every must be positive".into()));
        }
        if !(self.learning_rate() > 0.0) {
            return Err(Error::Contract("learning rate must be positive".into()));
        }
        if !(self.clip_options.temperature > 0.0) {
            return Err(Error::Contract("temperature must be positive".into()));
        }
        let (lo, hi) = self.va_range;
        if !(lo < hi) {
            return Err(Error::Contract(format!("empty VA range ({lo}, {hi})")));
        }
        validate_grid(&self.threshold_grid)?;
        Ok(())
    }

    /// Short identifier such as `expr-clip-lstm-s0`.
    pub fn run_name(&self) -> String {
        let mut s = self.task.to_string();
        if self.clip {
            s.push_str("-clip");
        }
        s.push('-');
        s.push_str(match self.head {
            HeadKind::Fc => "fc",
            HeadKind::Lstm => "lstm",
        });
        s.push_str("-s");
        s.push_str(&self.seed.to_string());
        s
    }
}
