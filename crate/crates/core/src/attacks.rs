//! Attack implementations: the perceptually-constrained MND optimizer and
//! the FGSM-family baselines (BIM, PGD, MIFGSM, DI2FGSM).
//!
//! Every attack leaves the classifier untouched and returns an adversarial
//! image clamped to `[0, 1]` and quantized to the 1/255 grid, with success
//! re-checked on the projected image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{cross_entropy, cross_entropy_on_tape, Classifier};
use crate::error::{Error, Result};
use crate::losses::{
    self, AttackMode, LossWeights, NonTargetedForm, Preset, TotalLoss,
};
use crate::metrics;
use crate::tape::Tape;
use crate::tensor::{argmax, Tensor};

/// Settings for the MND optimization loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub weights: LossWeights,
    /// Gradient-descent step size.
    pub alpha: f64,
    pub max_iters: usize,
    /// Relative loss-change threshold for convergence.
    pub convergence_tol: f64,
    /// Consecutive iterations the threshold must hold.
    pub patience: usize,
    /// Clamp iterates to `[0, 1]` every step instead of only at the end.
    pub clamp_each_step: bool,
    pub nontargeted_form: NonTargetedForm,
    /// Penalize the clean prediction instead of the supplied label.
    pub use_clean_prediction: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mode: AttackMode::NonTargeted,
            weights: LossWeights::default(),
            alpha: 1e-4,
            max_iters: 1000,
            convergence_tol: 1e-6,
            patience: 10,
            clamp_each_step: false,
            nontargeted_form: NonTargetedForm::ProbPlusLogit,
            use_clean_prediction: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::Config(format!("step size must be >= 0, got {}", self.alpha)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if self.convergence_tol < 0.0 {
            return Err(Error::Config("convergence_tol must be >= 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// Settings shared by the FGSM-family baselines.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// L-infinity budget around the clean image.
    pub epsilon: f64,
    /// Per-iteration step size.
    pub step: f64,
    pub steps: usize,
    /// Momentum decay for MIFGSM.
    pub momentum_decay: f64,
    /// Probability of transforming the input each step (DI2FGSM).
    pub transform_prob: f64,
    /// Lower bound of the random resize, as a fraction of input size.
    pub resize_min: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epsilon: 8.0 / 255.0,
            step: 2.0 / 255.0,
            steps: 10,
            momentum_decay: 1.0,
            transform_prob: 0.5,
            resize_min: 0.9,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= self.epsilon) {
            return Err(Error::Config(format!(
                "need 0 < step <= epsilon, got step={} epsilon={}",
                self.step, self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.transform_prob) {
            return Err(Error::Config(format!(
                "transform_prob must be in [0,1], got {}",
                self.transform_prob
            )));
        }
        if !(self.resize_min > 0.0 && self.resize_min <= 1.0) {
            return Err(Error::Config(format!(
                "resize_min must be in (0,1], got {}",
                self.resize_min
            )));
        }
        if self.momentum_decay < 0.0 {
            return Err(Error::Config("momentum_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of one attack on one image.
#[derive(Clone, Debug)]
pub struct AttackResult {
    pub adversarial: Tensor,
    pub success: bool,
    pub iterations_used: usize,
    pub clean_class: usize,
    pub adversarial_class: usize,
    pub target_class: Option<usize>,
    pub final_loss: f64,
}

fn attack_succeeded(mode: AttackMode, predicted: usize, clean: usize, target: Option<usize>) -> bool {
    match mode {
        AttackMode::NonTargeted => predicted != clean,
        AttackMode::Targeted => Some(predicted) == target,
    }
}

/// Gradient-descent attack on the combined adversarial + perceptual loss.
///
/// Starts from the clean image, steps against the loss gradient, stops early
/// once the attack succeeds and the relative loss change stays below the
/// tolerance for `patience` consecutive iterations, then projects onto the
/// 1/255 grid and re-evaluates success on the projected image.
pub fn mnd_attack(
    x: &Tensor,
    classifier: &Classifier,
    ground_truth: Option<usize>,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    let (objective, clean_class, target_class) = losses::resolve_objective(
        classifier,
        x,
        ground_truth,
        config.mode,
        &config.weights,
        config.nontargeted_form,
        config.use_clean_prediction,
    )?;

    let mut z = x.clone();
    let mut prev_loss: Option<f64> = None;
    let mut calm = 0usize;
    let mut iterations = 0usize;

    loop {
        let mut tape = Tape::new();
        let zv = tape.input(&z, true);
        let out: TotalLoss = losses::total_loss(&mut tape, zv, x, classifier, &objective)?;
        let loss = tape.scalar_value(out.loss);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: iterations });
        }
        let predicted = argmax(tape.value(out.probs));
        let succeeded = attack_succeeded(config.mode, predicted, clean_class, target_class);
        if let Some(prev) = prev_loss {
            let rel = (loss - prev).abs() / prev.abs().max(1e-30);
            if rel < config.convergence_tol {
                calm += 1;
            } else {
                calm = 0;
            }
        }
        prev_loss = Some(loss);

        if succeeded && calm >= config.patience {
            break;
        }
        if iterations >= config.max_iters {
            break;
        }

        tape.backward(out.loss)?;
        let grad = tape.grad(zv).expect("input requires grad");
        for (zi, gi) in z.values_mut().iter_mut().zip(grad) {
            *zi -= config.alpha * gi;
        }
        if config.clamp_each_step {
            for zi in z.values_mut() {
                *zi = zi.clamp(0.0, 1.0);
            }
        }
        iterations += 1;
    }

    let adversarial = z.quantized_255();
    let final_prediction = classifier.predict(&adversarial)?;
    let success = attack_succeeded(config.mode, final_prediction.class, clean_class, target_class);
    let final_loss = {
        let mut tape = Tape::new();
        let zv = tape.constant(&adversarial);
        let out = losses::total_loss(&mut tape, zv, x, classifier, &objective)?;
        tape.scalar_value(out.loss)
    };
    Ok(AttackResult {
        adversarial,
        success,
        iterations_used: iterations,
        clean_class,
        adversarial_class: final_prediction.class,
        target_class,
        final_loss,
    })
}

/// Which sign-step baseline to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Bim,
    Pgd,
    Mifgsm,
    Di2fgsm,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Bim,
        BaselineKind::Pgd,
        BaselineKind::Mifgsm,
        BaselineKind::Di2fgsm,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::Bim => "BIM",
            BaselineKind::Pgd => "PGD",
            BaselineKind::Mifgsm => "MIFGSM",
            BaselineKind::Di2fgsm => "DI2FGSM",
        }
    }
}

/// Iterative sign-of-gradient ascent on cross-entropy, clamped to the
/// epsilon ball and `[0, 1]` each step.
pub fn baseline_attack(
    x: &Tensor,
    classifier: &Classifier,
    ground_truth: usize,
    config: &BaselineConfig,
    kind: BaselineKind,
) -> Result<AttackResult> {
    config.validate()?;
    if ground_truth >= classifier.num_classes() {
        return Err(Error::Usage(format!(
            "label {ground_truth} out of range for {} classes",
            classifier.num_classes()
        )));
    }
    let clean_class = classifier.predict(x)?.class;
    let label = losses::one_hot(ground_truth, classifier.num_classes());
    let [channels, height, width] = classifier.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let lo: Vec<f64> = x.values().iter().map(|&v| (v - config.epsilon).max(0.0)).collect();
    let hi: Vec<f64> = x.values().iter().map(|&v| (v + config.epsilon).min(1.0)).collect();

    let mut z = x.clone();
    if kind == BaselineKind::Pgd {
        for (zi, (&l, &h)) in z.values_mut().iter_mut().zip(lo.iter().zip(&hi)) {
            *zi = (*zi + rng.gen_range(-config.epsilon..=config.epsilon)).clamp(l, h);
        }
    }

    let mut momentum = vec![0.0; x.len()];
    for step_index in 0..config.steps {
        let mut tape = Tape::new();
        let zv = tape.input(&z, true);
        let model_input = if kind == BaselineKind::Di2fgsm && rng.gen::<f64>() < config.transform_prob
        {
            let map = diverse_input_map(channels, height, width, config.resize_min, &mut rng);
            tape.gather(zv, map, vec![channels, height, width])?
        } else {
            zv
        };
        let fwd = classifier.forward_on_tape(&mut tape, model_input, false)?;
        let loss = cross_entropy_on_tape(&mut tape, &label, fwd.probs)?;
        if !tape.scalar_value(loss).is_finite() {
            return Err(Error::Divergence { iteration: step_index });
        }
        tape.backward(loss)?;
        let grad = tape.grad(zv).expect("input requires grad");

        let direction: &[f64] = if kind == BaselineKind::Mifgsm {
            let l1: f64 = grad.iter().map(|g| g.abs()).sum();
            if l1 > 0.0 {
                for (m, g) in momentum.iter_mut().zip(grad) {
                    *m = config.momentum_decay * *m + g / l1;
                }
            } else {
                for m in &mut momentum {
                    *m *= config.momentum_decay;
                }
            }
            &momentum
        } else {
            grad
        };

        for (i, zi) in z.values_mut().iter_mut().enumerate() {
            let s = if direction[i] > 0.0 {
                1.0
            } else if direction[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            *zi = (*zi + config.step * s).clamp(lo[i], hi[i]);
        }
    }

    // Quantize, then clamp back into the ball; with a grid-aligned clean
    // image and epsilon the clamp targets are themselves on the grid.
    let mut adversarial = z.quantized_255();
    for (zi, (&l, &h)) in adversarial.values_mut().iter_mut().zip(lo.iter().zip(&hi)) {
        *zi = zi.clamp(l, h);
    }
    let final_prediction = classifier.predict(&adversarial)?;
    Ok(AttackResult {
        success: final_prediction.class != clean_class,
        final_loss: cross_entropy(&label, &final_prediction.probs),
        adversarial,
        iterations_used: config.steps,
        clean_class,
        adversarial_class: final_prediction.class,
        target_class: None,
    })
}

/// Random nearest-neighbor resize placed at a random offset on a zero
/// canvas, expressed as a gather map.
fn diverse_input_map(
    channels: usize,
    height: usize,
    width: usize,
    resize_min: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Option<u32>> {
    let scale = rng.gen_range(resize_min..=1.0);
    let nh = ((height as f64 * scale).round() as usize).clamp(1, height);
    let nw = ((width as f64 * scale).round() as usize).clamp(1, width);
    let oy = rng.gen_range(0..=(height - nh));
    let ox = rng.gen_range(0..=(width - nw));
    let mut map = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        for i in 0..height {
            for j in 0..width {
                let inside = (oy..oy + nh).contains(&i) && (ox..ox + nw).contains(&j);
                map.push(if inside {
                    let si = ((i - oy) * height) / nh;
                    let sj = ((j - ox) * width) / nw;
                    Some((c * height * width + si * width + sj) as u32)
                } else {
                    None
                });
            }
        }
    }
    map
}

pub fn bim_attack(
    x: &Tensor,
    classifier: &Classifier,
    ground_truth: usize,
    config: &BaselineConfig,
) -> Result<AttackResult> {
    baseline_attack(x, classifier, ground_truth, config, BaselineKind::Bim)
}

pub fn pgd_attack(
    x: &Tensor,
    classifier: &Classifier,
    ground_truth: usize,
    config: &BaselineConfig,
) -> Result<AttackResult> {
    baseline_attack(x, classifier, ground_truth, config, BaselineKind::Pgd)
}

pub fn mifgsm_attack(
    x: &Tensor,
    classifier: &Classifier,
    ground_truth: usize,
    config: &BaselineConfig,
) -> Result<AttackResult> {
    baseline_attack(x, classifier, ground_truth, config, BaselineKind::Mifgsm)
}

pub fn di2fgsm_attack(
    x: &Tensor,
    classifier: &Classifier,
    ground_truth: usize,
    config: &BaselineConfig,
) -> Result<AttackResult> {
    baseline_attack(x, classifier, ground_truth, config, BaselineKind::Di2fgsm)
}

/// One ablation row: the preset, its per-image results, and quality summary
/// statistics over successful attacks.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub preset: Preset,
    pub results: Vec<AttackResult>,
    pub success_rate: f64,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub mean_ssim: f64,
    pub std_ssim: f64,
}

/// Run all seven ablation presets over the same images with identical seeds
/// and budgets. Images are processed in parallel; output order is fixed.
pub fn run_ablation(
    images: &[Tensor],
    labels: &[usize],
    classifier: &Classifier,
    base: &AttackConfig,
) -> Result<Vec<AblationRow>> {
    if images.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut rows = Vec::with_capacity(Preset::ALL.len());
    for preset in Preset::ALL {
        let config = AttackConfig {
            weights: preset.weights(&base.weights),
            ..base.clone()
        };
        let results: Vec<AttackResult> = images
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &label)| mnd_attack(x, classifier, Some(label), &config))
            .collect::<Result<Vec<_>>>()?;

        let records: Vec<metrics::ImageRecord> = results
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(metrics::ImageRecord {
                    method: preset.label().to_string(),
                    image_id: i,
                    psnr: metrics::psnr(&r.adversarial, &images[i])?,
                    ssim: metrics::ssim_eval(&r.adversarial, &images[i])?,
                    success: r.success,
                    iterations: r.iterations_used,
                    deviation_ratio: metrics::deviation_pixel_ratio(&r.adversarial, &images[i], 0)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = metrics::aggregate(&records)?;
        let agg = &report.methods[0];
        rows.push(AblationRow {
            preset,
            success_rate: agg.success_rate,
            mean_psnr: agg.mean_psnr,
            std_psnr: agg.std_psnr,
            mean_ssim: agg.mean_ssim,
            std_ssim: agg.std_ssim,
            results,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, GenOptions};
    use crate::losses::Preset;

    /// Small trained classifier + a batch of correctly-classified images,
    /// built once; training 160 tiny images for a few epochs takes ~2 s.
    fn trained_fixture() -> (Classifier, Vec<Tensor>, Vec<usize>) {
        use std::sync::OnceLock;
        static FIXTURE: OnceLock<(Classifier, Vec<Tensor>, Vec<usize>)> = OnceLock::new();
        FIXTURE
            .get_or_init(|| {
                let ds = Dataset::generate(&GenOptions {
                    num_classes: 4,
                    samples_per_class: 40,
                    height: 16,
                    width: 16,
                    seed: 91,
                })
                .unwrap();
                let (images, labels) = ds.to_tensors();
                let mut clf = Classifier::build_small_cnn([3, 16, 16], 4, 92).unwrap();
                clf.train(
                    &images,
                    &labels,
                    &crate::classifier::TrainOptions {
                        epochs: 6,
                        learning_rate: 0.08,
                        batch_size: 16,
                        seed: 93,
                    },
                )
                .unwrap();
                let mut picked = Vec::new();
                let mut picked_labels = Vec::new();
                for (img, &label) in images.iter().zip(&labels) {
                    if picked.len() < 6 && clf.predict(img).unwrap().class == label {
                        picked.push(img.clone());
                        picked_labels.push(label);
                    }
                }
                assert!(picked.len() >= 4, "fixture classifier too weak");
                (clf, picked, picked_labels)
            })
            .clone()
    }

    #[test]
    fn zero_step_size_returns_the_clean_image_after_max_iters() {
        let (clf, images, labels) = trained_fixture();
        let config = AttackConfig {
            alpha: 0.0,
            max_iters: 25,
            ..AttackConfig::default()
        };
        let r = mnd_attack(&images[0], &clf, Some(labels[0]), &config).unwrap();
        assert!(!r.success);
        assert_eq!(r.iterations_used, 25);
        assert_eq!(r.adversarial, images[0].quantized_255());
    }

    #[test]
    fn no_norm_attack_flips_the_class_and_keeps_parameters_frozen() {
        let (clf, images, labels) = trained_fixture();
        let before = clf.param_checksum();
        let config = AttackConfig {
            weights: Preset::NoNorm.weights(&LossWeights::default()),
            alpha: 1e-2,
            max_iters: 1000,
            ..AttackConfig::default()
        };
        let r = mnd_attack(&images[0], &clf, Some(labels[0]), &config).unwrap();
        assert_eq!(clf.param_checksum(), before);
        assert!(r.success, "attack failed after {} iterations", r.iterations_used);
        assert_ne!(r.adversarial_class, r.clean_class);
        assert!(r.adversarial.is_on_grid_255());
        // Success must be reproducible from the stored image.
        assert_eq!(clf.predict(&r.adversarial).unwrap().class, r.adversarial_class);
    }

    #[test]
    fn targeted_attack_reaches_the_least_likely_class() {
        let (clf, images, labels) = trained_fixture();
        let config = AttackConfig {
            mode: AttackMode::Targeted,
            weights: LossWeights {
                r: 0.0625,
                ..Preset::NoNorm.weights(&LossWeights::default())
            },
            alpha: 1e-3,
            max_iters: 600,
            ..AttackConfig::default()
        };
        let r = mnd_attack(&images[1], &clf, Some(labels[1]), &config).unwrap();
        assert!(r.target_class.is_some());
        if r.success {
            assert_eq!(Some(r.adversarial_class), r.target_class);
        }
    }

    #[test]
    fn mnd_attack_is_deterministic() {
        let (clf, images, labels) = trained_fixture();
        let config = AttackConfig {
            weights: Preset::NoNorm.weights(&LossWeights::default()),
            alpha: 1e-3,
            max_iters: 60,
            ..AttackConfig::default()
        };
        let a = mnd_attack(&images[2], &clf, Some(labels[2]), &config).unwrap();
        let b = mnd_attack(&images[2], &clf, Some(labels[2]), &config).unwrap();
        assert_eq!(a.adversarial, b.adversarial);
        assert_eq!(a.iterations_used, b.iterations_used);
    }

    #[test]
    fn baselines_respect_the_epsilon_ball_and_the_grid() {
        let (clf, images, labels) = trained_fixture();
        let config = BaselineConfig::default();
        for kind in BaselineKind::ALL {
            let r = baseline_attack(&images[0], &clf, labels[0], &config, kind).unwrap();
            assert!(
                r.adversarial.linf_distance(&images[0]) <= config.epsilon + 1e-9,
                "{kind:?} left the epsilon ball"
            );
            assert!(r.adversarial.is_on_grid_255(), "{kind:?} output off the grid");
            assert_eq!(r.iterations_used, config.steps);
            assert_eq!(
                clf.predict(&r.adversarial).unwrap().class,
                r.adversarial_class
            );
        }
    }

    #[test]
    fn single_step_bim_is_plain_fgsm() {
        let (clf, images, labels) = trained_fixture();
        let config = BaselineConfig {
            steps: 1,
            ..BaselineConfig::default()
        };
        let r = bim_attack(&images[1], &clf, labels[1], &config).unwrap();

        // Hand-computed single sign step.
        let mut tape = Tape::new();
        let zv = tape.input(&images[1], true);
        let fwd = clf.forward_on_tape(&mut tape, zv, false).unwrap();
        let label = losses::one_hot(labels[1], clf.num_classes());
        let loss = cross_entropy_on_tape(&mut tape, &label, fwd.probs).unwrap();
        tape.backward(loss).unwrap();
        let grad = tape.grad(zv).unwrap();
        let mut expected = images[1].clone();
        for (i, v) in expected.values_mut().iter_mut().enumerate() {
            let s = if grad[i] > 0.0 {
                1.0
            } else if grad[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            let x = images[1].values()[i];
            *v = (*v + config.step * s)
                .clamp((x - config.epsilon).max(0.0), (x + config.epsilon).min(1.0));
        }
        let expected = expected.quantized_255();
        assert_eq!(r.adversarial, expected);
    }

    #[test]
    fn pgd_is_deterministic_given_the_seed() {
        let (clf, images, labels) = trained_fixture();
        let config = BaselineConfig {
            seed: 1234,
            ..BaselineConfig::default()
        };
        let a = pgd_attack(&images[2], &clf, labels[2], &config).unwrap();
        let b = pgd_attack(&images[2], &clf, labels[2], &config).unwrap();
        assert_eq!(a.adversarial, b.adversarial);
    }

    #[test]
    fn zero_momentum_mifgsm_reproduces_bim() {
        let (clf, images, labels) = trained_fixture();
        let config = BaselineConfig {
            momentum_decay: 0.0,
            ..BaselineConfig::default()
        };
        let a = mifgsm_attack(&images[0], &clf, labels[0], &config).unwrap();
        let b = bim_attack(&images[0], &clf, labels[0], &config).unwrap();
        assert_eq!(a.adversarial, b.adversarial);
    }

    #[test]
    fn zero_transform_probability_di2fgsm_reproduces_bim() {
        let (clf, images, labels) = trained_fixture();
        let config = BaselineConfig {
            transform_prob: 0.0,
            ..BaselineConfig::default()
        };
        let a = di2fgsm_attack(&images[0], &clf, labels[0], &config).unwrap();
        let b = bim_attack(&images[0], &clf, labels[0], &config).unwrap();
        assert_eq!(a.adversarial, b.adversarial);

        let seeded = BaselineConfig {
            seed: 77,
            ..BaselineConfig::default()
        };
        let c = di2fgsm_attack(&images[0], &clf, labels[0], &seeded).unwrap();
        let d = di2fgsm_attack(&images[0], &clf, labels[0], &seeded).unwrap();
        assert_eq!(c.adversarial, d.adversarial);
    }

    #[test]
    fn ablation_emits_exactly_seven_rows_with_no_norm_matching_betas_zero() {
        let (clf, images, labels) = trained_fixture();
        let base = AttackConfig {
            alpha: 1e-3,
            max_iters: 40,
            ..AttackConfig::default()
        };
        let rows = run_ablation(&images[..2], &labels[..2], &clf, &base).unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[0].preset, Preset::NoNorm);

        let zero_betas = AttackConfig {
            weights: Preset::NoNorm.weights(&base.weights),
            ..base.clone()
        };
        let direct = mnd_attack(&images[0], &clf, Some(labels[0]), &zero_betas).unwrap();
        assert_eq!(rows[0].results[0].adversarial, direct.adversarial);
        assert_eq!(rows[0].results[0].iterations_used, direct.iterations_used);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(AttackConfig {
            alpha: -1.0,
            ..AttackConfig::default()
        }
        .validate()
        .is_err());
        assert!(AttackConfig {
            max_iters: 0,
            ..AttackConfig::default()
        }
        .validate()
        .is_err());
        assert!(BaselineConfig {
            step: 0.0,
            ..BaselineConfig::default()
        }
        .validate()
        .is_err());
        assert!(BaselineConfig {
            step: 1.0,
            epsilon: 0.5,
            ..BaselineConfig::default()
        }
        .validate()
        .is_err());
        assert!(BaselineConfig {
            transform_prob: 1.5,
            ..BaselineConfig::default()
        }
        .validate()
        .is_err());
    }
}
