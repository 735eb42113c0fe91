use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::apa::RhoMode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Ablation arms. Each one is a pure toggle over [`TrainConfig`] fields; see
/// [`TrainConfig::resolved`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Pfan,
    /// Random target subset of the same size as the easy-to-hard selection.
    Random,
    /// Every target sample with its pseudo-label.
    FullTarget,
    /// No prototype alignment (γ = 0).
    WoApa,
    /// Alignment of mini-batch prototypes only, no global/accumulated state.
    WoA,
    /// Temperature 1.
    WoT,
    /// Stage 1 only.
    SourceOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SourceOnly,
        Variant::WoApa,
        Variant::WoA,
        Variant::WoT,
        Variant::Random,
        Variant::FullTarget,
        Variant::Pfan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pfan => "pfan",
            Variant::Random => "random",
            Variant::FullTarget => "full-target",
            Variant::WoApa => "wo-apa",
            Variant::WoA => "wo-a",
            Variant::WoT => "wo-t",
            Variant::SourceOnly => "source-only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown variant '{s}'")))
    }
}

/// Which target samples the discriminator sees as the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainLossTarget {
    /// The current pseudo-labelled selection.
    #[default]
    Selected,
    /// The whole target set.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    #[default]
    EasyToHard,
    Random,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMode {
    #[default]
    Global,
    LocalOnly,
}

/// Hyper-parameters and schedules for a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Steepness of the λ/γ ramp.
    pub delta: f64,
    pub temperature: f64,
    /// Growth rate of the selection threshold.
    pub mu: f64,
    /// Source and target halves of a stage-2 batch together.
    pub batch_size: usize,
    /// Number of stage-2 steps `M`.
    pub steps: u64,
    pub iters_per_step: usize,
    pub pretrain_epochs: usize,
    /// Learning rate of stage 1 (constant).
    pub pretrain_lr: f64,
    pub seed: u64,
    pub variant: Variant,
    pub domain_loss_target: DomainLossTarget,
    /// Multiplier on the λ ramp.
    pub lambda_max: f64,
    /// Multiplier on the γ ramp.
    pub gamma_max: f64,
    pub selection: SelectionPolicy,
    pub alignment: AlignmentMode,
    pub rho_mode: RhoMode,
    /// Zero the momentum buffers at the start of every stage-2 step.
    pub reset_momentum: bool,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub disc_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            alpha: 10.0,
            beta: 0.75,
            delta: 10.0,
            temperature: 1.8,
            mu: 0.8,
            batch_size: 128,
            steps: 6,
            iters_per_step: 200,
            pretrain_epochs: 50,
            pretrain_lr: 0.01,
            seed: 0,
            variant: Variant::Pfan,
            domain_loss_target: DomainLossTarget::Selected,
            lambda_max: 1.0,
            gamma_max: 1.0,
            selection: SelectionPolicy::EasyToHard,
            alignment: AlignmentMode::Global,
            rho_mode: RhoMode::PerClass,
            reset_momentum: false,
            hidden_dims: vec![64],
            feature_dim: 16,
            disc_hidden: 32,
        }
    }
}

impl TrainConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
            ("temperature", self.temperature),
            ("mu", self.mu),
            ("pretrain_lr", self.pretrain_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_max", self.lambda_max), ("gamma_max", self.gamma_max)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Parameter("batch_size must be at least 2".into()));
        }
        if self.iters_per_step == 0 {
            return Err(Error::Parameter("iters_per_step must be positive".into()));
        }
        Ok(())
    }

    /// The configuration actually trained: the variant's toggle applied on top
    /// of the explicit fields. Two configs with equal resolutions produce
    /// identical runs.
    pub fn resolved(&self) -> TrainConfig {
        let mut c = self.clone();
        match self.variant {
            Variant::Pfan => {}
            Variant::Random => c.selection = SelectionPolicy::Random,
            Variant::FullTarget => c.selection = SelectionPolicy::All,
            Variant::WoApa => c.gamma_max = 0.0,
            Variant::WoA => c.alignment = AlignmentMode::LocalOnly,
            Variant::WoT => c.temperature = 1.0,
            Variant::SourceOnly => c.steps = 0,
        }
        c.variant = Variant::Pfan;
        c
    }

    pub fn model_config(&self, input_dim: usize, class_count: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            feature_dim: self.feature_dim,
            class_count,
            disc_hidden: self.disc_hidden,
            temperature: self.temperature,
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.steps as usize * self.iters_per_step
    }

    pub fn source_half(&self) -> usize {
        self.batch_size / 2
    }

    pub fn target_half(&self) -> usize {
        self.batch_size - self.batch_size / 2
    }
}
