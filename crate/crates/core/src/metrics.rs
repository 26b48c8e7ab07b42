//! Evaluation-side image quality metrics and diagnostics.

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::losses;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB with peak 1.0.
///
/// Identical images return `f64::INFINITY`, rendered as `inf` in reports;
/// aggregation excludes infinite records and flags the exclusion.
pub fn psnr(z: &Tensor, x: &Tensor) -> Result<f64> {
    if z.shape() != x.shape() {
        return Err(Error::Shape(format!("psnr: {:?} vs {:?}", z.shape(), x.shape())));
    }
    let mse = z
        .values()
        .iter()
        .zip(x.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / z.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Structural similarity; the exact computation the SSIM loss uses, exposed
/// as an evaluation entry point.
pub fn ssim_eval(z: &Tensor, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let xv = tape.constant(x);
    let s = losses::ssim(&mut tape, zv, xv)?;
    Ok(tape.scalar_value(s))
}

/// Per-channel absolute difference, min-max normalized to 0..=255.
#[derive(Clone, Debug)]
pub struct DiffMap {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<u8>>,
}

/// Normalize a non-negative map to 0..=255; an all-zero map stays all-zero.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0u8; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v / max) * 255.0).round() as u8)
        .collect()
}

pub fn abs_diff_map(z: &Tensor, x: &Tensor) -> Result<DiffMap> {
    let shape = z.shape();
    if shape != x.shape() || shape.len() != 3 {
        return Err(Error::Shape(format!(
            "abs_diff_map: {:?} vs {:?}",
            shape,
            x.shape()
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let channels = (0..c)
        .map(|ch| {
            let diffs: Vec<f64> = z.values()[ch * plane..(ch + 1) * plane]
                .iter()
                .zip(&x.values()[ch * plane..(ch + 1) * plane])
                .map(|(a, b)| (a - b).abs())
                .collect();
            normalize_to_u8(&diffs)
        })
        .collect();
    Ok(DiffMap {
        height: h,
        width: w,
        channels,
    })
}

/// Fraction of 8-bit channel samples whose quantized difference exceeds
/// `threshold` levels.
pub fn deviation_pixel_ratio(z: &Tensor, x: &Tensor, threshold: u8) -> Result<f64> {
    if z.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "deviation_pixel_ratio: {:?} vs {:?}",
            z.shape(),
            x.shape()
        )));
    }
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as i16;
    let changed = z
        .values()
        .iter()
        .zip(x.values())
        .filter(|(a, b)| (quant(**a) - quant(**b)).unsigned_abs() as u8 > threshold)
        .count();
    Ok(changed as f64 / z.len() as f64)
}

/// Class-activation heatmap, min-max normalized to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// L1 distance between two heatmaps of the same size.
    pub fn l1_distance(&self, other: &Heatmap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Grad-CAM: pool the gradients of one class logit over the deepest
/// convolutional activation, weight the activation channels, ReLU, upsample
/// to image size, and min-max normalize.
pub fn grad_cam(classifier: &Classifier, image: &Tensor, class_index: usize) -> Result<Heatmap> {
    if class_index >= classifier.num_classes() {
        return Err(Error::Usage(format!(
            "class {class_index} out of range for {} classes",
            classifier.num_classes()
        )));
    }
    let [_, h, w] = classifier.input_shape();
    let mut tape = Tape::new();
    let x = tape.input(image, true);
    let fwd = classifier.forward_on_tape(&mut tape, x, false)?;
    let act_var = fwd
        .last_conv
        .ok_or_else(|| Error::Usage("classifier has no convolutional layer".into()))?;
    let logit = tape.select(fwd.logits, class_index)?;
    tape.backward(logit)?;

    let act_shape = tape.shape(act_var).to_vec();
    let (ac, ah, aw) = (act_shape[0], act_shape[1], act_shape[2]);
    let plane = ah * aw;
    let activation = tape.value(act_var).to_vec();
    let grads = tape
        .grad(act_var)
        .ok_or_else(|| Error::Usage("no gradient reached the convolutional activation".into()))?;

    let mut cam = vec![0.0; plane];
    for c in 0..ac {
        let alpha = grads[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (px, a) in cam.iter_mut().zip(&activation[c * plane..(c + 1) * plane]) {
            *px += alpha * a;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }

    let upsampled = bilinear_upsample(&cam, ah, aw, h, w);
    let min = upsampled.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = upsampled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = if max > min {
        upsampled.iter().map(|&v| (v - min) / (max - min)).collect()
    } else {
        vec![0.0; upsampled.len()]
    };
    Ok(Heatmap {
        height: h,
        width: w,
        values,
    })
}

/// Bilinear upsampling with half-pixel sample centers.
fn bilinear_upsample(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    let sy = sh as f64 / dh as f64;
    let sx = sw as f64 / dw as f64;
    for i in 0..dh {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, sh as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for j in 0..dw {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, sw as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bottom = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out[i * dw + j] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}

/// One evaluated attack on one image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageRecord {
    pub method: String,
    pub image_id: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub success: bool,
    pub iterations: usize,
    pub deviation_ratio: f64,
}

/// Per-method aggregate statistics.
///
/// Quality statistics (PSNR, SSIM, deviation ratio) cover successful attacks
/// only; iteration counts cover every attempt; the success rate is reported
/// separately. Infinite PSNR records are excluded from the PSNR mean and
/// counted in `excluded_infinite_psnr`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    pub mean_iterations: f64,
    pub mean_deviation_ratio: f64,
    pub excluded_infinite_psnr: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IqaReport {
    pub methods: Vec<MethodAggregate>,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Group records by method (first-seen order) and aggregate.
///
/// Every method group needs at least two records.
pub fn aggregate(records: &[ImageRecord]) -> Result<IqaReport> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    let mut methods = Vec::with_capacity(order.len());
    for name in order {
        let group: Vec<&ImageRecord> = records.iter().filter(|r| r.method == name).collect();
        if group.len() < 2 {
            return Err(Error::Usage(format!(
                "method {name} has {} record(s); aggregation needs at least 2",
                group.len()
            )));
        }
        let successes: Vec<&&ImageRecord> = group.iter().filter(|r| r.success).collect();
        let finite_psnr: Vec<f64> = successes
            .iter()
            .filter(|r| r.psnr.is_finite())
            .map(|r| r.psnr)
            .collect();
        let ssims: Vec<f64> = successes.iter().map(|r| r.ssim).collect();
        let ratios: Vec<f64> = successes.iter().map(|r| r.deviation_ratio).collect();
        let (mean_psnr, std_psnr) = mean_and_std(&finite_psnr);
        let (mean_ssim, std_ssim) = mean_and_std(&ssims);
        let (mean_ratio, _) = mean_and_std(&ratios);
        methods.push(MethodAggregate {
            method: name.to_string(),
            attempts: group.len(),
            successes: successes.len(),
            success_rate: successes.len() as f64 / group.len() as f64,
            mean_psnr,
            std_psnr,
            mean_ssim,
            std_ssim,
            mean_iterations: group.iter().map(|r| r.iterations as f64).sum::<f64>()
                / group.len() as f64,
            mean_deviation_ratio: mean_ratio,
            excluded_infinite_psnr: successes.len() - finite_psnr.len(),
        });
    }
    Ok(IqaReport { methods })
}
