//! Loss terms for quality-preserving adversarial image generation.
//!
//! The total objective is an adversarial term (non-targeted or targeted)
//! plus a weighted perceptual quality-preserving combination of pixel
//! deviation, structural similarity, and Sobel gradient similarity. All
//! terms are differentiable in the adversarial image.

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, argmin, Tensor};

/// SSIM stabilizing constant `(0.01 * L)^2` with dynamic range `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
/// SSIM stabilizing constant `(0.03 * L)^2` with dynamic range `L = 1`.
pub const SSIM_C2: f64 = 9e-4;

// Square roots get a tiny offset so their derivative stays finite at zero;
// subtracting sqrt(EPS) keeps the value of a zero input exactly zero.
const SQRT_EPS: f64 = 1e-12;

/// Which norm a deviation-style term uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

/// Weights and switches for the perceptual quality-preserving loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Power applied to the target probability in the targeted loss.
    pub r: f64,
    pub dev_norm: Option<Norm>,
    pub grad_norm: Option<Norm>,
    pub use_ssim: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 100.0,
            beta2: 100.0,
            beta3: 100.0,
            r: 1.0,
            dev_norm: Some(Norm::L1),
            grad_norm: Some(Norm::L1),
            use_ssim: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.beta1 < 0.0 || self.beta2 < 0.0 || self.beta3 < 0.0 {
            return Err(Error::Config(format!(
                "negative loss weights: beta1={} beta2={} beta3={}",
                self.beta1, self.beta2, self.beta3
            )));
        }
        if self.r <= 0.0 {
            return Err(Error::Config(format!("power r must be positive, got {}", self.r)));
        }
        Ok(())
    }
}

/// The ablation presets: which perceptual terms participate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    NoNorm,
    L2,
    L1,
    Ssim,
    L2Ssim,
    L1Ssim,
    Mnd,
}

impl Preset {
    /// All presets, in ascending order of expected quality.
    pub const ALL: [Preset; 7] = [
        Preset::NoNorm,
        Preset::L2,
        Preset::L1,
        Preset::Ssim,
        Preset::L2Ssim,
        Preset::L1Ssim,
        Preset::Mnd,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Preset::NoNorm => "No-norm",
            Preset::L2 => "L2",
            Preset::L1 => "L1",
            Preset::Ssim => "SSIM",
            Preset::L2Ssim => "L2+SSIM",
            Preset::L1Ssim => "L1+SSIM",
            Preset::Mnd => "MND",
        }
    }

    /// Derive preset weights, taking magnitudes and `r` from `base`.
    pub fn weights(&self, base: &LossWeights) -> LossWeights {
        let mut w = LossWeights {
            beta1: 0.0,
            beta2: 0.0,
            beta3: 0.0,
            r: base.r,
            dev_norm: None,
            grad_norm: None,
            use_ssim: false,
        };
        match self {
            Preset::NoNorm => {}
            Preset::L1 => {
                w.beta1 = base.beta1;
                w.dev_norm = Some(Norm::L1);
            }
            Preset::L2 => {
                w.beta1 = base.beta1;
                w.dev_norm = Some(Norm::L2);
            }
            Preset::Ssim => {
                w.beta2 = base.beta2;
                w.use_ssim = true;
            }
            Preset::L1Ssim => {
                w.beta1 = base.beta1;
                w.dev_norm = Some(Norm::L1);
                w.beta2 = base.beta2;
                w.use_ssim = true;
            }
            Preset::L2Ssim => {
                w.beta1 = base.beta1;
                w.dev_norm = Some(Norm::L2);
                w.beta2 = base.beta2;
                w.use_ssim = true;
            }
            Preset::Mnd => {
                w.beta1 = base.beta1;
                w.dev_norm = Some(Norm::L1);
                w.beta2 = base.beta2;
                w.use_ssim = true;
                w.beta3 = base.beta3;
                w.grad_norm = Some(Norm::L1);
            }
        }
        w
    }
}

fn one_hot_index(v: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &x) in v.iter().enumerate() {
        if x == 1.0 {
            if hot.is_some() {
                return Err(Error::Domain("label vector has multiple ones".into()));
            }
            hot = Some(i);
        } else if x != 0.0 {
            return Err(Error::Domain(format!("label vector is not one-hot: component {x}")));
        }
    }
    hot.ok_or_else(|| Error::Domain("label vector has no one".into()))
}

/// Build a one-hot vector.
pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Non-targeted adversarial loss: the true-class probability plus its logit.
///
/// Minimizing it pushes the prediction away from the true class without the
/// vanishing gradient a log-loss would have near confident predictions.
pub fn adv_nontargeted(tape: &mut Tape, y_gt: &[f64], y_hat: Var, u_hat: Var) -> Result<Var> {
    if y_gt.len() != tape.len(y_hat) || y_gt.len() != tape.len(u_hat) {
        return Err(Error::Shape(format!(
            "label length {} vs prediction {} / logits {}",
            y_gt.len(),
            tape.len(y_hat),
            tape.len(u_hat)
        )));
    }
    let k = one_hot_index(y_gt)?;
    let p = tape.select(y_hat, k)?;
    let u = tape.select(u_hat, k)?;
    tape.add(p, u)
}

/// Non-targeted variant that raises the true-class probability to a power
/// instead of adding the logit.
pub fn adv_nontargeted_pow(tape: &mut Tape, y_gt: &[f64], y_hat: Var, r: f64) -> Result<Var> {
    if r <= 0.0 {
        return Err(Error::Config(format!("power r must be positive, got {r}")));
    }
    let k = one_hot_index(y_gt)?;
    let p = tape.select(y_hat, k)?;
    tape.powf(p, r)
}

/// Targeted adversarial loss: minus the target-class probability raised to
/// `r`. Minimized at -1 when the target class is predicted with certainty.
pub fn adv_targeted(tape: &mut Tape, y_t: &[f64], y_hat: Var, r: f64) -> Result<Var> {
    if r <= 0.0 {
        return Err(Error::Config(format!("power r must be positive, got {r}")));
    }
    if y_t.len() != tape.len(y_hat) {
        return Err(Error::Shape(format!(
            "target length {} vs prediction {}",
            y_t.len(),
            tape.len(y_hat)
        )));
    }
    let k = one_hot_index(y_t)?;
    let p = tape.select(y_hat, k)?;
    let powed = tape.powf(p, r)?;
    Ok(tape.neg(powed))
}

/// One-hot target at the class the classifier rates least likely.
/// Ties break toward the lowest index.
pub fn select_target(y: &[f64]) -> Vec<f64> {
    one_hot(argmin(y), y.len())
}

/// `sqrt(a + eps) - sqrt(eps)`: differentiable at zero, exact zero at zero.
fn guarded_sqrt(tape: &mut Tape, a: Var) -> Result<Var> {
    let shifted = tape.add_scalar(a, SQRT_EPS);
    let root = tape.sqrt(shifted)?;
    Ok(tape.add_scalar(root, -SQRT_EPS.sqrt()))
}

/// Magnitude of the perturbation between two images.
pub fn deviation(tape: &mut Tape, z: Var, x: Var, norm: Norm) -> Result<Var> {
    if tape.shape(z) != tape.shape(x) {
        return Err(Error::Shape(format!(
            "deviation: {:?} vs {:?}",
            tape.shape(z),
            tape.shape(x)
        )));
    }
    let d = tape.sub(z, x)?;
    match norm {
        Norm::L1 => {
            let a = tape.abs(d);
            tape.sum(a)
        }
        Norm::L2 => {
            let sq = tape.mul(d, d)?;
            let total = tape.sum(sq)?;
            guarded_sqrt(tape, total)
        }
    }
}

/// Structural similarity with global per-channel statistics, averaged over
/// channels. Returns exactly 1 when both inputs are identical.
pub fn ssim(tape: &mut Tape, z: Var, x: Var) -> Result<Var> {
    if tape.shape(z) != tape.shape(x) {
        return Err(Error::Shape(format!(
            "ssim: {:?} vs {:?}",
            tape.shape(z),
            tape.shape(x)
        )));
    }
    let shape = tape.shape(z).to_vec();
    let (channels, per_channel) = if shape.len() == 3 {
        (shape[0], shape[1] * shape[2])
    } else {
        (1, shape.iter().product())
    };
    if per_channel < 2 {
        return Err(Error::Shape("ssim needs at least two samples per channel".into()));
    }
    let unbias = 1.0 / (per_channel as f64 - 1.0);

    let mut per_channel_ssim = Vec::with_capacity(channels);
    for c in 0..channels {
        let zc = tape.slice(z, c * per_channel, per_channel)?;
        let xc = tape.slice(x, c * per_channel, per_channel)?;
        let mu_z = tape.mean(zc)?;
        let mu_x = tape.mean(xc)?;
        let dz = tape.sub(zc, mu_z)?;
        let dx = tape.sub(xc, mu_x)?;

        let zz = tape.mul(dz, dz)?;
        let var_z_sum = tape.sum(zz)?;
        let var_z = tape.scale(var_z_sum, unbias);
        let xx = tape.mul(dx, dx)?;
        let var_x_sum = tape.sum(xx)?;
        let var_x = tape.scale(var_x_sum, unbias);
        let zx = tape.mul(dz, dx)?;
        let cov_sum = tape.sum(zx)?;
        let cov = tape.scale(cov_sum, unbias);

        let mu_prod = tape.mul(mu_z, mu_x)?;
        let lum_num = {
            let two = tape.scale(mu_prod, 2.0);
            tape.add_scalar(two, SSIM_C1)
        };
        let lum_den = {
            let mzz = tape.mul(mu_z, mu_z)?;
            let mxx = tape.mul(mu_x, mu_x)?;
            let s = tape.add(mzz, mxx)?;
            tape.add_scalar(s, SSIM_C1)
        };
        let struct_num = {
            let two = tape.scale(cov, 2.0);
            tape.add_scalar(two, SSIM_C2)
        };
        let struct_den = {
            let s = tape.add(var_z, var_x)?;
            tape.add_scalar(s, SSIM_C2)
        };

        let num = tape.mul(lum_num, struct_num)?;
        let den = tape.mul(lum_den, struct_den)?;
        per_channel_ssim.push(tape.div(num, den)?);
    }
    let stacked = tape.concat(&per_channel_ssim)?;
    tape.mean(stacked)
}

const SOBEL_X: [f64; 9] = [1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0];
const SOBEL_Y: [f64; 9] = [1.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0, -2.0, -1.0];

/// Per-channel Sobel gradient magnitude with replicate padding.
/// Constant images map to exactly zero everywhere, borders included.
pub fn sobel(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("sobel expects [C,H,W], got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let kx_t = Tensor::new(vec![1, 1, 3, 3], SOBEL_X.to_vec())?;
    let ky_t = Tensor::new(vec![1, 1, 3, 3], SOBEL_Y.to_vec())?;
    let kx = tape.constant(&kx_t);
    let ky = tape.constant(&ky_t);

    let mut mags = Vec::with_capacity(c);
    for ch in 0..c {
        let flat = tape.slice(x, ch * h * w, h * w)?;
        let xc = tape.reshape(flat, vec![1, h, w])?;
        let gx = tape.conv2d(xc, kx, None, 1, Padding::Replicate)?;
        let gy = tape.conv2d(xc, ky, None, 1, Padding::Replicate)?;
        let gx2 = tape.mul(gx, gx)?;
        let gy2 = tape.mul(gy, gy)?;
        let s = tape.add(gx2, gy2)?;
        mags.push(guarded_sqrt(tape, s)?);
    }
    let stacked = tape.concat(&mags)?;
    tape.reshape(stacked, vec![c, h, w])
}

/// Deviation norm applied to the Sobel magnitude maps of both images.
pub fn grad_similarity(tape: &mut Tape, z: Var, x: Var, norm: Norm) -> Result<Var> {
    if tape.shape(z) != tape.shape(x) {
        return Err(Error::Shape(format!(
            "grad_similarity: {:?} vs {:?}",
            tape.shape(z),
            tape.shape(x)
        )));
    }
    let gz = sobel(tape, z)?;
    let gx = sobel(tape, x)?;
    deviation(tape, gz, gx, norm)
}

/// Weighted perceptual quality-preserving loss:
/// `beta1 * deviation - beta2 * ssim + beta3 * grad_similarity`,
/// with each term switched by the weight configuration.
pub fn pqp_loss(tape: &mut Tape, z: Var, x: Var, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut total = tape.scalar_const(0.0);
    if let Some(norm) = weights.dev_norm {
        if weights.beta1 > 0.0 {
            let dev = deviation(tape, z, x, norm)?;
            let term = tape.scale(dev, weights.beta1);
            total = tape.add(total, term)?;
        }
    }
    if weights.use_ssim && weights.beta2 > 0.0 {
        let s = ssim(tape, z, x)?;
        let term = tape.scale(s, -weights.beta2);
        total = tape.add(total, term)?;
    }
    if let Some(norm) = weights.grad_norm {
        if weights.beta3 > 0.0 {
            let gs = grad_similarity(tape, z, x, norm)?;
            let term = tape.scale(gs, weights.beta3);
            total = tape.add(total, term)?;
        }
    }
    Ok(total)
}

/// Which expression the non-targeted adversarial term uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonTargetedForm {
    /// True-class probability plus logit (the default).
    ProbPlusLogit,
    /// True-class probability raised to the power `r`.
    PowProb,
}

/// Attack goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    NonTargeted,
    Targeted,
}

/// Fully resolved adversarial objective, label vectors included.
#[derive(Clone, Debug)]
pub struct Objective {
    pub mode: AttackMode,
    pub weights: LossWeights,
    pub nontargeted_form: NonTargetedForm,
    /// One-hot label the non-targeted loss penalizes.
    pub label: Vec<f64>,
    /// One-hot target for the targeted loss.
    pub target: Option<Vec<f64>>,
}

/// Total loss and the intermediate prediction values for one forward pass.
pub struct TotalLoss {
    pub loss: Var,
    pub probs: Var,
    pub logits: Var,
}

/// Adversarial term plus perceptual term, evaluated on one tape.
///
/// `z` must already be registered on `tape`; `x` is the clean reference.
pub fn total_loss(
    tape: &mut Tape,
    z: Var,
    x: &Tensor,
    classifier: &Classifier,
    objective: &Objective,
) -> Result<TotalLoss> {
    let fwd = classifier.forward_on_tape(tape, z, false)?;
    let adv = match objective.mode {
        AttackMode::NonTargeted => match objective.nontargeted_form {
            NonTargetedForm::ProbPlusLogit => {
                adv_nontargeted(tape, &objective.label, fwd.probs, fwd.logits)?
            }
            NonTargetedForm::PowProb => {
                adv_nontargeted_pow(tape, &objective.label, fwd.probs, objective.weights.r)?
            }
        },
        AttackMode::Targeted => {
            let target = objective
                .target
                .as_ref()
                .ok_or_else(|| Error::Usage("targeted objective without a target".into()))?;
            adv_targeted(tape, target, fwd.probs, objective.weights.r)?
        }
    };
    let xv = tape.constant(x);
    let pqp = pqp_loss(tape, z, xv, &objective.weights)?;
    let loss = tape.add(adv, pqp)?;
    Ok(TotalLoss {
        loss,
        probs: fwd.probs,
        logits: fwd.logits,
    })
}

/// Construct an image pair suited to finite-difference validation of the
/// L1-based losses.
///
/// The L1 terms are non-differentiable where their arguments vanish, and the
/// Sobel magnitude has strong curvature near zero, so random pairs routinely
/// break central differences. This pair keeps every pixel difference and
/// every Sobel-map difference bounded away from zero: the clean image is a
/// smooth low-frequency field and the perturbation is a period-4 stripe
/// pattern whose Sobel response has a uniform lower bound, borders included.
pub fn fd_test_pair(shape: [usize; 3], seed: u64) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    const MARGIN: f64 = 1e-3;
    // Period-4 square wave, phased so replicate borders keep full contrast.
    const S4: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

    for _ in 0..100 {
        use rand::Rng;
        let amp = rng.gen_range(0.04..0.08);
        let fy = rng.gen_range(0.3..0.7);
        let fx = rng.gen_range(0.3..0.7);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let (col_amp, row_amp) = (0.05, 0.03);

        let mut x = Tensor::zeros(shape.to_vec());
        let mut z = Tensor::zeros(shape.to_vec());
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let t = std::f64::consts::TAU
                        * (fy * i as f64 / h as f64 + fx * j as f64 / w as f64)
                        + phase
                        + ch as f64;
                    let smooth = 0.5 + amp * t.sin();
                    let stripes = col_amp * S4[j % 4] + row_amp * S4[i % 4];
                    let jitter = rng.gen_range(-0.004..0.004);
                    let idx = (ch * h + i) * w + j;
                    x.values_mut()[idx] = smooth;
                    z.values_mut()[idx] = smooth + stripes + jitter;
                }
            }
        }

        let pixel_ok = z
            .values()
            .iter()
            .zip(x.values())
            .all(|(a, b)| (a - b).abs() >= MARGIN);
        if !pixel_ok {
            continue;
        }
        let map = |img: &Tensor| -> Result<Vec<f64>> {
            let mut tape = Tape::new();
            let v = tape.constant(img);
            let g = sobel(&mut tape, v)?;
            Ok(tape.value(g).to_vec())
        };
        let gz = map(&z)?;
        let gx = map(&x)?;
        let sobel_ok = gz
            .iter()
            .zip(&gx)
            .all(|(a, b)| (a - b).abs() >= MARGIN && *a >= MARGIN);
        if sobel_ok {
            return Ok((z, x));
        }
    }
    Err(Error::Domain(
        "could not construct a kink-safe finite-difference pair".into(),
    ))
}

/// Resolve the label and target vectors an objective needs, using the clean
/// prediction where the configuration asks for it.
pub fn resolve_objective(
    classifier: &Classifier,
    x: &Tensor,
    ground_truth: Option<usize>,
    mode: AttackMode,
    weights: &LossWeights,
    nontargeted_form: NonTargetedForm,
    use_clean_prediction: bool,
) -> Result<(Objective, usize, Option<usize>)> {
    let clean = classifier.predict(x)?;
    let c = clean.probs.len();
    let label_class = if use_clean_prediction {
        clean.class
    } else {
        ground_truth.unwrap_or(clean.class)
    };
    if label_class >= c {
        return Err(Error::Usage(format!(
            "label class {label_class} out of range for {c} classes"
        )));
    }
    let (target, target_class) = match mode {
        AttackMode::Targeted => {
            let t = select_target(&clean.probs);
            let idx = argmax(&t);
            (Some(t), Some(idx))
        }
        AttackMode::NonTargeted => (None, None),
    };
    Ok((
        Objective {
            mode,
            weights: weights.clone(),
            nontargeted_form,
            label: one_hot(label_class, c),
            target,
        },
        clean.class,
        target_class,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{grad_check, DEFAULT_FD_EPS};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t1(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    /// Pair (Z, X) with every pixel difference at least 1e-3 in magnitude,
    /// keeping L1 terms away from their kink during finite differencing.
    fn kink_safe_pair(shape: Vec<usize>, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::rand_uniform(shape.clone(), 0.1, 0.9, &mut rng);
        let mut z = x.clone();
        for v in z.values_mut() {
            let magnitude = rng.gen_range(1e-3..0.03);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            *v += sign * magnitude;
        }
        (z, x)
    }

    #[test]
    fn nontargeted_loss_is_true_class_prob_plus_logit() {
        let mut tape = Tape::new();
        let y_hat = tape.input(&t1(&[0.05, 0.9, 0.05]), false);
        let u_hat = tape.input(&t1(&[0.0, 3.0, -1.0]), false);
        let y_gt = one_hot(1, 3);
        let loss = adv_nontargeted(&mut tape, &y_gt, y_hat, u_hat).unwrap();
        assert_relative_eq!(tape.scalar_value(loss), 3.9, max_relative = 1e-12);

        let mut tape2 = Tape::new();
        let y_hat = tape2.input(&t1(&[1.0, 0.0]), false);
        let u_hat = tape2.input(&t1(&[5.0, 0.0]), false);
        let loss = adv_nontargeted(&mut tape2, &one_hot(1, 2), y_hat, u_hat).unwrap();
        assert_eq!(tape2.scalar_value(loss), 0.0);
    }

    #[test]
    fn nontargeted_gradient_through_softmax_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits = Tensor::rand_uniform(vec![10], -2.0, 2.0, &mut rng);
        let y_gt = one_hot(4, 10);
        let report = grad_check(
            move |tape, u| {
                let y = tape.softmax(u)?;
                adv_nontargeted(tape, &y_gt, y, u)
            },
            &logits,
            DEFAULT_FD_EPS,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn targeted_loss_values() {
        let mut tape = Tape::new();
        let y_hat = tape.input(&t1(&[0.25, 0.75]), false);
        let loss = adv_targeted(&mut tape, &one_hot(0, 2), y_hat, 1.0).unwrap();
        assert_relative_eq!(tape.scalar_value(loss), -0.25, max_relative = 1e-12);

        let certain = tape.input(&t1(&[0.0, 1.0]), false);
        for r in [0.3, 1.0, 7.0] {
            let loss = adv_targeted(&mut tape, &one_hot(1, 2), certain, r).unwrap();
            assert_eq!(tape.scalar_value(loss), -1.0);
        }

        // 0.5^0.0625, frozen from an independent high-precision evaluation.
        let half = tape.input(&t1(&[0.5, 0.5]), false);
        let loss = adv_targeted(&mut tape, &one_hot(0, 2), half, 0.0625).unwrap();
        assert_relative_eq!(
            tape.scalar_value(loss),
            -0.9576032806985736,
            max_relative = 1e-12
        );

        assert!(matches!(
            adv_targeted(&mut tape, &one_hot(0, 2), half, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn targeted_loss_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let raw = Tensor::rand_uniform(vec![6], 0.0, 1.0, &mut rng);
            let total: f64 = raw.values().iter().sum();
            let probs = t1(&raw.values().iter().map(|v| v / total).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let y = tape.input(&probs, false);
            let k = rng.gen_range(0..6);
            let loss = adv_targeted(&mut tape, &one_hot(k, 6), y, 0.0625).unwrap();
            let v = tape.scalar_value(loss);
            assert!((-1.0..=0.0).contains(&v), "targeted loss {v}");
        }
    }

    #[test]
    fn select_target_picks_argmin_away_from_argmax() {
        assert_eq!(select_target(&[0.7, 0.2, 0.1]), one_hot(2, 3));
        assert_eq!(select_target(&[0.1; 10]), one_hot(0, 10));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let y = Tensor::rand_uniform(vec![10], 0.0, 1.0, &mut rng);
            let t = select_target(y.values());
            let target = crate::tensor::argmax(&t);
            if y.values().iter().any(|v| *v != y.values()[0]) {
                assert_ne!(target, crate::tensor::argmax(y.values()));
            }
        }
    }

    #[test]
    fn deviation_matches_analytic_cases() {
        let x = Tensor::full(vec![3, 2, 2], 0.5);
        let mut tape = Tape::new();
        let xv = tape.input(&x, false);
        for norm in [Norm::L1, Norm::L2] {
            let d = deviation(&mut tape, xv, xv, norm).unwrap();
            assert_eq!(tape.scalar_value(d), 0.0);
        }

        let mut single = x.clone();
        single.values_mut()[5] += 0.5;
        let sv = tape.input(&single, false);
        let l1 = deviation(&mut tape, sv, xv, Norm::L1).unwrap();
        let l2 = deviation(&mut tape, sv, xv, Norm::L2).unwrap();
        assert_relative_eq!(tape.scalar_value(l1), 0.5, max_relative = 1e-12);
        assert_relative_eq!(tape.scalar_value(l2), 0.5, max_relative = 1e-5);

        let mut two = x.clone();
        two.values_mut()[0] += 0.3;
        two.values_mut()[7] -= 0.4;
        let tv = tape.input(&two, false);
        let l1 = deviation(&mut tape, tv, xv, Norm::L1).unwrap();
        let l2 = deviation(&mut tape, tv, xv, Norm::L2).unwrap();
        assert_relative_eq!(tape.scalar_value(l1), 0.7, max_relative = 1e-12);
        assert_relative_eq!(tape.scalar_value(l2), 0.5, max_relative = 1e-5);
    }

    #[test]
    fn ssim_of_identical_images_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..5 {
            let x = Tensor::rand_uniform(vec![3, 8, 8], 0.0, 1.0, &mut rng);
            let mut tape = Tape::new();
            let a = tape.input(&x, false);
            let b = tape.input(&x, false);
            let s = ssim(&mut tape, a, b).unwrap();
            assert_eq!(tape.scalar_value(s), 1.0);
        }
    }

    #[test]
    fn ssim_of_distinct_constants_reduces_to_luminance_term() {
        let a = Tensor::full(vec![3, 4, 4], 0.2);
        let b = Tensor::full(vec![3, 4, 4], 0.8);
        let mut tape = Tape::new();
        let av = tape.input(&a, false);
        let bv = tape.input(&b, false);
        let s = ssim(&mut tape, av, bv).unwrap();
        let expected = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2 * 0.2 + 0.8 * 0.8 + SSIM_C1);
        assert_relative_eq!(tape.scalar_value(s), expected, max_relative = 1e-12);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let (z, x) = kink_safe_pair(vec![3, 8, 8], 25);
        let report = grad_check(
            move |tape, zv| {
                let xv = tape.constant(&x);
                ssim(tape, zv, xv)
            },
            &z,
            DEFAULT_FD_EPS,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn sobel_of_constant_image_is_exactly_zero() {
        let x = Tensor::full(vec![3, 8, 8], 0.37);
        let mut tape = Tape::new();
        let xv = tape.input(&x, false);
        let g = sobel(&mut tape, xv).unwrap();
        assert!(tape.value(g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_step_edge_has_magnitude_four_at_the_edge() {
        let (h, w) = (8, 8);
        let mut values = vec![0.0; h * w];
        for i in 0..h {
            for j in w / 2..w {
                values[i * w + j] = 1.0;
            }
        }
        let x = Tensor::new(vec![1, h, w], values).unwrap();
        let mut tape = Tape::new();
        let xv = tape.input(&x, false);
        let g = sobel(&mut tape, xv).unwrap();
        let m = tape.value(g);
        for i in 0..h {
            for j in 0..w {
                let v = m[i * w + j];
                if j == w / 2 - 1 || j == w / 2 {
                    assert_relative_eq!(v, 4.0, max_relative = 1e-5);
                } else {
                    assert!(v.abs() < 1e-9, "column {j} magnitude {v}");
                }
            }
        }
    }

    #[test]
    fn sobel_magnitude_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 10;
        let x = Tensor::rand_uniform(vec![1, n, n], 0.0, 1.0, &mut rng);
        // rot90: out[i][j] = in[n-1-j][i]
        let mut rotated = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                rotated[i * n + j] = x.values()[(n - 1 - j) * n + i];
            }
        }
        let xr = Tensor::new(vec![1, n, n], rotated).unwrap();
        let mut tape = Tape::new();
        let a = tape.input(&x, false);
        let b = tape.input(&xr, false);
        let ga = sobel(&mut tape, a).unwrap();
        let gb = sobel(&mut tape, b).unwrap();
        let ga = tape.value(ga);
        let gb = tape.value(gb);
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(
                    gb[i * n + j],
                    ga[(n - 1 - j) * n + i],
                    max_relative = 1e-9,
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn grad_similarity_vanishes_on_equal_and_shifted_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let x = Tensor::rand_uniform(vec![3, 8, 8], 0.1, 0.7, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.input(&x, false);
        for norm in [Norm::L1, Norm::L2] {
            let g = grad_similarity(&mut tape, xv, xv, norm).unwrap();
            assert_eq!(tape.scalar_value(g), 0.0);
        }
        let shifted = Tensor::new(
            vec![3, 8, 8],
            x.values().iter().map(|v| v + 0.2).collect(),
        )
        .unwrap();
        let sv = tape.input(&shifted, false);
        let g = grad_similarity(&mut tape, sv, xv, Norm::L1).unwrap();
        assert!(tape.scalar_value(g).abs() < 1e-9);
    }

    #[test]
    fn grad_similarity_gradient_matches_finite_differences() {
        let (z, x) = fd_test_pair([3, 8, 8], 28).unwrap();
        for norm in [Norm::L1, Norm::L2] {
            let x = x.clone();
            let report = grad_check(
                move |tape, zv| {
                    let xv = tape.constant(&x);
                    grad_similarity(tape, zv, xv, norm)
                },
                &z,
                DEFAULT_FD_EPS,
            )
            .unwrap();
            assert!(report.max_rel_err <= 1e-4, "{norm:?} rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences_through_the_cnn() {
        use crate::classifier::Classifier;
        let classifier = Classifier::build_small_cnn([3, 16, 16], 10, 55).unwrap();
        let (z, x) = fd_test_pair([3, 16, 16], 56).unwrap();
        let (objective, _, _) = resolve_objective(
            &classifier,
            &x,
            Some(2),
            AttackMode::NonTargeted,
            &LossWeights::default(),
            NonTargetedForm::ProbPlusLogit,
            false,
        )
        .unwrap();
        let xc = x.clone();
        let report = grad_check(
            move |tape, zv| Ok(total_loss(tape, zv, &xc, &classifier, &objective)?.loss),
            &z,
            DEFAULT_FD_EPS,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn pqp_loss_reduces_to_negative_beta2_on_identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = Tensor::rand_uniform(vec![3, 8, 8], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.input(&x, false);
        let w = LossWeights::default();
        let loss = pqp_loss(&mut tape, xv, xv, &w).unwrap();
        assert_eq!(tape.scalar_value(loss), -w.beta2);
    }

    #[test]
    fn pqp_loss_is_zero_when_all_weights_are_zero() {
        let (z, x) = kink_safe_pair(vec![3, 8, 8], 30);
        let mut tape = Tape::new();
        let zv = tape.input(&z, false);
        let xv = tape.input(&x, false);
        let w = Preset::NoNorm.weights(&LossWeights::default());
        let loss = pqp_loss(&mut tape, zv, xv, &w).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn pqp_loss_matches_independent_term_composition() {
        let (z, x) = kink_safe_pair(vec![3, 8, 8], 31);
        let w = LossWeights::default();

        let mut tape = Tape::new();
        let zv = tape.input(&z, false);
        let xv = tape.input(&x, false);
        let combined = pqp_loss(&mut tape, zv, xv, &w).unwrap();

        let dev = deviation(&mut tape, zv, xv, Norm::L1).unwrap();
        let s = ssim(&mut tape, zv, xv).unwrap();
        let gs = grad_similarity(&mut tape, zv, xv, Norm::L1).unwrap();
        let expected = 100.0 * tape.scalar_value(dev) - 100.0 * tape.scalar_value(s)
            + 100.0 * tape.scalar_value(gs);
        assert_relative_eq!(tape.scalar_value(combined), expected, max_relative = 1e-12);
    }

    #[test]
    fn negative_weights_are_rejected() {
        let w = LossWeights {
            beta2: -1.0,
            ..LossWeights::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn all_presets_are_expressible_and_finite() {
        let (z, x) = kink_safe_pair(vec![3, 8, 8], 32);
        let base = LossWeights::default();
        for preset in Preset::ALL {
            let w = preset.weights(&base);
            w.validate().unwrap();
            let mut tape = Tape::new();
            let zv = tape.input(&z, false);
            let xv = tape.input(&x, false);
            let loss = pqp_loss(&mut tape, zv, xv, &w).unwrap();
            assert!(tape.scalar_value(loss).is_finite(), "{preset:?}");
        }
    }

    #[test]
    fn total_loss_reductions_match_prediction_terms() {
        use crate::classifier::Classifier;
        let classifier = Classifier::build_small_cnn([3, 16, 16], 10, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = Tensor::rand_uniform(vec![3, 16, 16], 0.0, 1.0, &mut rng);
        let clean = classifier.predict(&x).unwrap();

        let zero = Preset::NoNorm.weights(&LossWeights::default());
        let (objective, clean_class, _) = resolve_objective(
            &classifier,
            &x,
            None,
            AttackMode::NonTargeted,
            &zero,
            NonTargetedForm::ProbPlusLogit,
            false,
        )
        .unwrap();
        let mut tape = Tape::new();
        let zv = tape.input(&x, true);
        let out = total_loss(&mut tape, zv, &x, &classifier, &objective).unwrap();
        let expected = clean.probs[clean_class] + clean.logits[clean_class];
        assert_relative_eq!(tape.scalar_value(out.loss), expected, max_relative = 1e-12);

        let targeted_weights = LossWeights {
            r: 1.0,
            ..Preset::NoNorm.weights(&LossWeights::default())
        };
        let (objective, _, target_class) = resolve_objective(
            &classifier,
            &x,
            None,
            AttackMode::Targeted,
            &targeted_weights,
            NonTargetedForm::ProbPlusLogit,
            false,
        )
        .unwrap();
        let mut tape = Tape::new();
        let zv = tape.input(&x, true);
        let out = total_loss(&mut tape, zv, &x, &classifier, &objective).unwrap();
        let expected = -clean.probs[target_class.unwrap()];
        assert_relative_eq!(tape.scalar_value(out.loss), expected, max_relative = 1e-12);
    }
}
