//! A compact convolutional classifier, its trainer, and checkpoint I/O.
//!
//! The network is fixed: two 3x3 convolution + ReLU + 2x2 max-pool blocks,
//! then two fully connected layers. Parameters are plain tensors; every
//! forward pass registers them on a fresh tape, frozen (no gradient) in
//! attack mode and trainable during fitting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, Tensor};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MNDCKPT1";
const LOG_FLOOR: f64 = 1e-12;

/// One stage of the network.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d { weight: Tensor, bias: Tensor },
    Relu,
    MaxPool2,
    Flatten,
    Linear { weight: Tensor, bias: Tensor },
}

impl Layer {
    fn tag(&self) -> u8 {
        match self {
            Layer::Conv2d { .. } => 0,
            Layer::Relu => 1,
            Layer::MaxPool2 => 2,
            Layer::Flatten => 3,
            Layer::Linear { .. } => 4,
        }
    }
}

/// Frozen-by-default image classifier `softmax(f1(x))`.
#[derive(Clone, Debug)]
pub struct Classifier {
    layers: Vec<Layer>,
    num_classes: usize,
    input_shape: [usize; 3],
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    pub logits: Var,
    pub probs: Var,
    /// Post-ReLU activation of the deepest convolution, for Grad-CAM.
    pub last_conv: Option<Var>,
    /// `(layer index, weight var, bias var)` for every parameterized layer.
    pub param_vars: Vec<(usize, Var, Var)>,
}

/// Outcome of classifying one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Mini-batch gradient-descent settings.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Loss and accuracy measured over one epoch's forward passes.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Cross-entropy between a one-hot label and a probability vector, with the
/// probabilities clamped at 1e-12 before the log.
pub fn cross_entropy(y_gt: &[f64], y_hat: &[f64]) -> f64 {
    debug_assert_eq!(y_gt.len(), y_hat.len());
    -y_gt
        .iter()
        .zip(y_hat)
        .map(|(t, p)| t * p.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// Tape-level cross-entropy against a constant one-hot label.
pub fn cross_entropy_on_tape(tape: &mut Tape, y_gt: &[f64], probs: Var) -> Result<Var> {
    let logs = tape.ln_clamped(probs, LOG_FLOOR);
    let dot = tape.dot_const(logs, y_gt)?;
    Ok(tape.neg(dot))
}

impl Classifier {
    /// Fixed two-block CNN with seeded uniform(+-1/sqrt(fan_in)) parameters.
    pub fn build_small_cnn(input_shape: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        let [n, h, w] = input_shape;
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if h < 16 || w < 16 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} too small or not divisible by 4 for two 2x poolings"
            )));
        }
        if n == 0 {
            return Err(Error::Config("zero input channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform_init = |shape: Vec<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::rand_uniform(shape, -bound, bound, &mut rng)
        };

        let c1 = 16;
        let c2 = 32;
        let hidden = 128;
        let flat = c2 * (h / 4) * (w / 4);
        let layers = vec![
            Layer::Conv2d {
                weight: uniform_init(vec![c1, n, 3, 3], n * 9),
                bias: uniform_init(vec![c1], n * 9),
            },
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Conv2d {
                weight: uniform_init(vec![c2, c1, 3, 3], c1 * 9),
                bias: uniform_init(vec![c2], c1 * 9),
            },
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Flatten,
            Layer::Linear {
                weight: uniform_init(vec![hidden, flat], flat),
                bias: uniform_init(vec![hidden], flat),
            },
            Layer::Relu,
            Layer::Linear {
                weight: uniform_init(vec![num_classes, hidden], hidden),
                bias: uniform_init(vec![num_classes], hidden),
            },
        ];
        Ok(Classifier {
            layers,
            num_classes,
            input_shape,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Run the network on an already-registered tape value.
    ///
    /// With `trainable` the parameters are registered with gradients enabled;
    /// otherwise they are frozen constants.
    pub fn forward_on_tape(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<ForwardPass> {
        if tape.shape(input) != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "input {:?} vs classifier input {:?}",
                tape.shape(input),
                self.input_shape
            )));
        }
        let mut cur = input;
        let mut last_conv = None;
        let mut prev_was_conv = false;
        let mut param_vars = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d { weight, bias } => {
                    let wv = tape.input(weight, trainable);
                    let bv = tape.input(bias, trainable);
                    cur = tape.conv2d(cur, wv, Some(bv), 1, Padding::Replicate)?;
                    param_vars.push((idx, wv, bv));
                    prev_was_conv = true;
                }
                Layer::Relu => {
                    cur = tape.relu(cur);
                    if prev_was_conv {
                        last_conv = Some(cur);
                        prev_was_conv = false;
                    }
                }
                Layer::MaxPool2 => {
                    cur = tape.maxpool2(cur)?;
                    prev_was_conv = false;
                }
                Layer::Flatten => {
                    cur = tape.flatten(cur)?;
                    prev_was_conv = false;
                }
                Layer::Linear { weight, bias } => {
                    let wv = tape.input(weight, trainable);
                    let bv = tape.input(bias, trainable);
                    cur = tape.linear(cur, wv, bv)?;
                    param_vars.push((idx, wv, bv));
                    prev_was_conv = false;
                }
            }
        }
        if tape.len(cur) != self.num_classes {
            return Err(Error::Shape(format!(
                "network produced {} logits for {} classes",
                tape.len(cur),
                self.num_classes
            )));
        }
        let probs = tape.softmax(cur)?;
        Ok(ForwardPass {
            logits: cur,
            probs,
            last_conv,
            param_vars,
        })
    }

    /// Classify one image. Ties break toward the lowest class index.
    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let x = tape.constant(image);
        let fwd = self.forward_on_tape(&mut tape, x, false)?;
        let probs = tape.value(fwd.probs).to_vec();
        let logits = tape.value(fwd.logits).to_vec();
        Ok(Prediction {
            class: argmax(&probs),
            probs,
            logits,
        })
    }

    /// Mini-batch gradient descent on cross-entropy. Deterministic given the
    /// seed, including under parallel per-sample gradient evaluation.
    pub fn train(
        &mut self,
        images: &[Tensor],
        labels: &[usize],
        opts: &TrainOptions,
    ) -> Result<TrainReport> {
        if images.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::Usage(format!(
                "{} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Usage(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        if opts.batch_size == 0 || opts.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut report = TrainReport::default();

        for epoch in 0..opts.epochs {
            shuffle(&mut order, &mut rng);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;

            for chunk in order.chunks(opts.batch_size) {
                // Per-sample gradients in a deterministic order, then a
                // sequential reduction so thread count never changes results.
                let per_sample: Vec<Result<SampleGrad>> = chunk
                    .par_iter()
                    .map(|&i| self.sample_gradient(&images[i], labels[i]))
                    .collect();

                let mut batch: Option<Vec<(Vec<f64>, Vec<f64>)>> = None;
                for s in per_sample {
                    let s = s?;
                    loss_sum += s.loss;
                    correct += s.correct as usize;
                    match &mut batch {
                        None => batch = Some(s.grads),
                        Some(acc) => {
                            for ((aw, ab), (gw, gb)) in acc.iter_mut().zip(&s.grads) {
                                for (a, g) in aw.iter_mut().zip(gw) {
                                    *a += g;
                                }
                                for (a, g) in ab.iter_mut().zip(gb) {
                                    *a += g;
                                }
                            }
                        }
                    }
                }

                let scale = opts.learning_rate / chunk.len() as f64;
                let grads = batch.expect("non-empty chunk");
                let mut gi = 0;
                for layer in &mut self.layers {
                    if let Layer::Conv2d { weight, bias } | Layer::Linear { weight, bias } = layer {
                        let (gw, gb) = &grads[gi];
                        for (p, g) in weight.values_mut().iter_mut().zip(gw) {
                            *p -= scale * g;
                        }
                        for (p, g) in bias.values_mut().iter_mut().zip(gb) {
                            *p -= scale * g;
                        }
                        gi += 1;
                    }
                }
            }

            report.epochs.push(EpochStats {
                epoch,
                mean_loss: loss_sum / images.len() as f64,
                accuracy: correct as f64 / images.len() as f64,
            });
        }
        Ok(report)
    }

    fn sample_gradient(&self, image: &Tensor, label: usize) -> Result<SampleGrad> {
        let mut tape = Tape::new();
        let x = tape.constant(image);
        let fwd = self.forward_on_tape(&mut tape, x, true)?;
        let y_gt = crate::losses::one_hot(label, self.num_classes);
        let loss = cross_entropy_on_tape(&mut tape, &y_gt, fwd.probs)?;
        let loss_value = tape.scalar_value(loss);
        let predicted = argmax(tape.value(fwd.probs));
        tape.backward(loss)?;
        let grads = fwd
            .param_vars
            .iter()
            .map(|&(_, wv, bv)| {
                let gw = tape.grad(wv).map(<[f64]>::to_vec).unwrap_or_default();
                let gb = tape.grad(bv).map(<[f64]>::to_vec).unwrap_or_default();
                (gw, gb)
            })
            .collect();
        Ok(SampleGrad {
            loss: loss_value,
            correct: predicted == label,
            grads,
        })
    }

    /// Checksum over all parameter bytes; used to assert attacks never touch
    /// the model.
    pub fn param_checksum(&self) -> u64 {
        fnv1a64(&self.param_bytes())
    }

    fn param_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv2d { weight, bias } | Layer::Linear { weight, bias } = layer {
                for v in weight.values().iter().chain(bias.values()) {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        bytes
    }

    /// Write the checkpoint: header, little-endian parameter payload, and a
    /// 64-bit payload checksum.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(&mut w, self.num_classes as u32)?;
        for d in self.input_shape {
            write_u32(&mut w, d as u32)?;
        }
        write_u32(&mut w, self.layers.len() as u32)?;
        for layer in &self.layers {
            w.write_all(&[layer.tag()])?;
            match layer {
                Layer::Conv2d { weight, .. } => {
                    for &d in weight.shape() {
                        write_u32(&mut w, d as u32)?;
                    }
                }
                Layer::Linear { weight, .. } => {
                    for &d in weight.shape() {
                        write_u32(&mut w, d as u32)?;
                    }
                }
                _ => {}
            }
        }
        let payload = self.param_bytes();
        w.write_all(&payload)?;
        write_u64(&mut w, fnv1a64(&payload))?;
        w.flush()?;
        Ok(())
    }

    /// Load and validate a checkpoint written by [`Classifier::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let num_classes = read_u32(&mut r)? as usize;
        let input_shape = [
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
        ];
        let layer_count = read_u32(&mut r)? as usize;
        if layer_count > 1024 {
            return Err(Error::CorruptCheckpoint(format!(
                "implausible layer count {layer_count}"
            )));
        }

        enum Desc {
            Conv([usize; 4]),
            Relu,
            MaxPool2,
            Flatten,
            Linear([usize; 2]),
        }
        let mut descs = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let mut tag = [0u8; 1];
            read_exact(&mut r, &mut tag)?;
            descs.push(match tag[0] {
                0 => Desc::Conv([
                    read_u32(&mut r)? as usize,
                    read_u32(&mut r)? as usize,
                    read_u32(&mut r)? as usize,
                    read_u32(&mut r)? as usize,
                ]),
                1 => Desc::Relu,
                2 => Desc::MaxPool2,
                3 => Desc::Flatten,
                4 => Desc::Linear([read_u32(&mut r)? as usize, read_u32(&mut r)? as usize]),
                t => {
                    return Err(Error::CorruptCheckpoint(format!("unknown layer tag {t}")));
                }
            });
        }

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() < 8 {
            return Err(Error::CorruptCheckpoint("missing checksum footer".into()));
        }
        let checksum_bytes: [u8; 8] = payload[payload.len() - 8..].try_into().unwrap();
        let stored = u64::from_le_bytes(checksum_bytes);
        payload.truncate(payload.len() - 8);
        if fnv1a64(&payload) != stored {
            return Err(Error::CorruptCheckpoint("payload checksum mismatch".into()));
        }

        let mut offset = 0usize;
        let mut take = |count: usize| -> Result<Vec<f64>> {
            let bytes = count * 8;
            if offset + bytes > payload.len() {
                return Err(Error::CorruptCheckpoint("payload shorter than descriptors imply".into()));
            }
            let vals = payload[offset..offset + bytes]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += bytes;
            Ok(vals)
        };

        let mut layers = Vec::with_capacity(layer_count);
        for desc in descs {
            layers.push(match desc {
                Desc::Conv([o, i, kh, kw]) => Layer::Conv2d {
                    weight: Tensor::new(vec![o, i, kh, kw], take(o * i * kh * kw)?)
                        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                    bias: Tensor::new(vec![o], take(o)?)
                        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                },
                Desc::Relu => Layer::Relu,
                Desc::MaxPool2 => Layer::MaxPool2,
                Desc::Flatten => Layer::Flatten,
                Desc::Linear([m, n]) => Layer::Linear {
                    weight: Tensor::new(vec![m, n], take(m * n)?)
                        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                    bias: Tensor::new(vec![m], take(m)?)
                        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                },
            });
        }
        if offset != payload.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes in payload".into()));
        }
        Ok(Classifier {
            layers,
            num_classes,
            input_shape,
        })
    }
}

struct SampleGrad {
    loss: f64,
    correct: bool,
    grads: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Fisher-Yates with a seeded RNG.
fn shuffle<R: rand::Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn tmp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("mnd-clf-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn random_images(count: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Tensor::rand_uniform(vec![3, 16, 16], 0.0, 1.0, &mut rng))
            .collect()
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let a = Classifier::build_small_cnn([3, 32, 32], 10, 42).unwrap();
        let b = Classifier::build_small_cnn([3, 32, 32], 10, 42).unwrap();
        assert_eq!(a.param_checksum(), b.param_checksum());
        let c = Classifier::build_small_cnn([3, 32, 32], 10, 43).unwrap();
        assert_ne!(a.param_checksum(), c.param_checksum());
    }

    #[test]
    fn forward_yields_one_logit_per_class() {
        let clf = Classifier::build_small_cnn([3, 16, 16], 7, 1).unwrap();
        let img = random_images(1, 2).pop().unwrap();
        let pred = clf.predict(&img).unwrap();
        assert_eq!(pred.logits.len(), 7);
        assert_eq!(pred.probs.len(), 7);
        let sum: f64 = pred.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_small_input_is_a_configuration_error() {
        assert!(matches!(
            Classifier::build_small_cnn([3, 8, 8], 10, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Classifier::build_small_cnn([3, 32, 32], 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn untrained_accuracy_is_near_chance_on_balanced_labels() {
        let clf = Classifier::build_small_cnn([3, 16, 16], 10, 5).unwrap();
        let images = random_images(1000, 6);
        let correct = images
            .iter()
            .enumerate()
            .filter(|(i, img)| clf.predict(img).unwrap().class == i % 10)
            .count();
        let accuracy = correct as f64 / images.len() as f64;
        assert!(
            (0.05..=0.15).contains(&accuracy),
            "untrained accuracy {accuracy}"
        );
    }

    #[test]
    fn cross_entropy_analytic_values() {
        let uniform = vec![0.1; 10];
        assert_relative_eq!(
            cross_entropy(&crate::losses::one_hot(3, 10), &uniform),
            2.302585092994046,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            cross_entropy(&[1.0, 0.0], &[0.25, 0.75]),
            1.3862943611198906,
            max_relative = 1e-12
        );
        assert_eq!(cross_entropy(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_index_and_ignores_logit_shift() {
        assert_eq!(argmax(&[5.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[2.0, 2.0, 2.0]), 0);

        let clf = Classifier::build_small_cnn([3, 16, 16], 5, 9).unwrap();
        let img = random_images(1, 10).pop().unwrap();
        let pred = clf.predict(&img).unwrap();
        // Softmax shift invariance at the prediction level.
        let shifted: Vec<f64> = pred.logits.iter().map(|v| v + 100.0).collect();
        assert_eq!(argmax(&shifted), pred.class);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut clf = Classifier::build_small_cnn([3, 16, 16], 4, 11).unwrap();
        let before = clf.param_checksum();
        let images = random_images(8, 12);
        let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let opts = TrainOptions {
            epochs: 1,
            learning_rate: 0.0,
            batch_size: 4,
            seed: 1,
        };
        clf.train(&images, &labels, &opts).unwrap();
        assert_eq!(clf.param_checksum(), before);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss_on_a_tiny_set() {
        let opts = TrainOptions {
            epochs: 3,
            learning_rate: 0.05,
            batch_size: 8,
            seed: 7,
        };
        let ds = crate::dataset::Dataset::generate(&crate::dataset::GenOptions {
            num_classes: 4,
            samples_per_class: 20,
            height: 16,
            width: 16,
            seed: 3,
        })
        .unwrap();
        let (images, labels) = ds.to_tensors();

        let run = || {
            let mut clf = Classifier::build_small_cnn([3, 16, 16], 4, 13).unwrap();
            let report = clf.train(&images, &labels, &opts).unwrap();
            (clf.param_checksum(), report)
        };
        let (sum_a, report_a) = run();
        let (sum_b, _) = run();
        assert_eq!(sum_a, sum_b);
        let first = report_a.epochs.first().unwrap().mean_loss;
        let last = report_a.epochs.last().unwrap().mean_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn empty_training_set_is_a_usage_error() {
        let mut clf = Classifier::build_small_cnn([3, 16, 16], 4, 1).unwrap();
        assert!(matches!(
            clf.train(&[], &[], &TrainOptions::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_logits_bit_exactly() {
        let dir = tmp_dir("roundtrip");
        let path = dir.join("model.ckpt");
        let clf = Classifier::build_small_cnn([3, 16, 16], 10, 21).unwrap();
        clf.save(&path).unwrap();
        let loaded = Classifier::load(&path).unwrap();
        assert_eq!(clf.param_checksum(), loaded.param_checksum());
        for img in random_images(10, 22) {
            let a = clf.predict(&img).unwrap();
            let b = loaded.predict(&img).unwrap();
            assert_eq!(a.logits, b.logits);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tmp_dir("trunc");
        let path = dir.join("model.ckpt");
        let clf = Classifier::build_small_cnn([3, 16, 16], 3, 31).unwrap();
        clf.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            Classifier::load(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flipped_payload_byte_fails_the_checksum() {
        let dir = tmp_dir("flip");
        let path = dir.join("model.ckpt");
        let clf = Classifier::build_small_cnn([3, 16, 16], 3, 32).unwrap();
        clf.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Classifier::load(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn gradient_descent_step_decreases_single_sample_loss() {
        let mut clf = Classifier::build_small_cnn([3, 16, 16], 3, 41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let img = Tensor::rand_uniform(vec![3, 16, 16], 0.0, 1.0, &mut rng);
        let label = rng.gen_range(0..3);
        let before = cross_entropy(
            &crate::losses::one_hot(label, 3),
            &clf.predict(&img).unwrap().probs,
        );
        let opts = TrainOptions {
            epochs: 5,
            learning_rate: 0.2,
            batch_size: 1,
            seed: 2,
        };
        clf.train(std::slice::from_ref(&img), &[label], &opts).unwrap();
        let after = cross_entropy(
            &crate::losses::one_hot(label, 3),
            &clf.predict(&img).unwrap().probs,
        );
        assert!(after < before, "loss {before} -> {after}");
    }
}
