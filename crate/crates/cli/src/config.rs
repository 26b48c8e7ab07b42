//! Experiment configuration: one JSON document drives a whole run.
//!
//! Every field has a default; unknown keys are rejected so typos fail loudly
//! instead of silently running with defaults.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mnd_core::attacks::{AttackConfig, BaselineConfig};
use mnd_core::losses::{AttackMode, LossWeights, NonTargetedForm, Norm};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub classifier: ClassifierConfig,
    pub attack: AttackSection,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            classifier: ClassifierConfig::default(),
            attack: AttackSection::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Seed for the held-out set; keep distinct from `seed`.
    pub test_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 10,
            train_per_class: 500,
            test_per_class: 100,
            height: 32,
            width: 32,
            seed: 1,
            test_seed: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    /// Seed for the epoch shuffles.
    pub train_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 32,
            init_seed: 42,
            train_seed: 7,
        }
    }
}

/// Weights of one attack objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub r: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            beta1: 100.0,
            beta2: 100.0,
            beta3: 100.0,
            r: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// How many correctly-classified held-out images to attack.
    pub count: usize,
    pub alpha: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub patience: usize,
    pub clamp_each_step: bool,
    /// Use the probability+logit non-targeted form, or the powered
    /// probability variant.
    pub nontargeted_form: NonTargetedForm,
    /// Penalize the clean prediction instead of the dataset label.
    pub use_clean_prediction: bool,
    /// Weights for non-targeted runs.
    pub nontargeted: WeightsConfig,
    /// Weights for targeted runs.
    pub targeted: WeightsConfig,
    pub epsilon: f64,
    pub step: f64,
    pub steps: usize,
    pub momentum_decay: f64,
    pub transform_prob: f64,
    pub resize_min: f64,
    pub seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            count: 100,
            alpha: 1e-4,
            max_iters: 1000,
            convergence_tol: 1e-6,
            patience: 10,
            clamp_each_step: false,
            nontargeted_form: NonTargetedForm::ProbPlusLogit,
            use_clean_prediction: false,
            nontargeted: WeightsConfig::default(),
            targeted: WeightsConfig {
                beta1: 2.0,
                beta2: 0.1,
                beta3: 2.0,
                r: 0.0625,
            },
            epsilon: 8.0 / 255.0,
            step: 2.0 / 255.0,
            steps: 10,
            momentum_decay: 1.0,
            transform_prob: 0.5,
            resize_min: 0.9,
            seed: 1000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub emit_diff_maps: bool,
    pub emit_heatmaps: bool,
    /// At most this many images get per-image artifacts.
    pub artifact_limit: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            emit_diff_maps: false,
            emit_heatmaps: false,
            artifact_limit: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Range checks, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.classes < 2 || d.classes > 256 {
            bail!("dataset.classes must be in 2..=256, got {}", d.classes);
        }
        if d.train_per_class == 0 {
            bail!("dataset.train_per_class must be positive");
        }
        if d.test_per_class == 0 {
            bail!("dataset.test_per_class must be positive");
        }
        if d.height < 16 || d.width < 16 || d.height % 4 != 0 || d.width % 4 != 0 {
            bail!(
                "dataset.height/width must be >= 16 and divisible by 4, got {}x{}",
                d.height,
                d.width
            );
        }
        let c = &self.classifier;
        if c.epochs == 0 {
            bail!("classifier.epochs must be positive");
        }
        if !(c.learning_rate > 0.0) {
            bail!("classifier.learning_rate must be positive, got {}", c.learning_rate);
        }
        if c.batch_size == 0 {
            bail!("classifier.batch_size must be positive");
        }
        let a = &self.attack;
        if a.count == 0 {
            bail!("attack.count must be positive");
        }
        self.attack_config(AttackMode::NonTargeted)
            .validate()
            .map_err(|e| anyhow::anyhow!("attack (non-targeted): {e}"))?;
        self.attack_config(AttackMode::Targeted)
            .validate()
            .map_err(|e| anyhow::anyhow!("attack (targeted): {e}"))?;
        self.baseline_config(0).validate().map_err(|e| anyhow::anyhow!("attack: {e}"))?;
        if self.evaluation.artifact_limit == 0 && (self.evaluation.emit_diff_maps || self.evaluation.emit_heatmaps) {
            bail!("evaluation.artifact_limit must be positive when artifacts are enabled");
        }
        Ok(())
    }

    /// Full MND weights for one mode.
    pub fn loss_weights(&self, mode: AttackMode) -> LossWeights {
        let w = match mode {
            AttackMode::NonTargeted => &self.attack.nontargeted,
            AttackMode::Targeted => &self.attack.targeted,
        };
        LossWeights {
            beta1: w.beta1,
            beta2: w.beta2,
            beta3: w.beta3,
            r: w.r,
            dev_norm: Some(Norm::L1),
            grad_norm: Some(Norm::L1),
            use_ssim: true,
        }
    }

    pub fn attack_config(&self, mode: AttackMode) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            mode,
            weights: self.loss_weights(mode),
            alpha: a.alpha,
            max_iters: a.max_iters,
            convergence_tol: a.convergence_tol,
            patience: a.patience,
            clamp_each_step: a.clamp_each_step,
            nontargeted_form: a.nontargeted_form,
            use_clean_prediction: a.use_clean_prediction,
            seed: a.seed,
        }
    }

    pub fn baseline_config(&self, image_id: usize) -> BaselineConfig {
        let a = &self.attack;
        BaselineConfig {
            epsilon: a.epsilon,
            step: a.step,
            steps: a.steps,
            momentum_decay: a.momentum_decay,
            transform_prob: a.transform_prob,
            resize_min: a.resize_min,
            seed: a.seed.wrapping_add(image_id as u64),
        }
    }
}
