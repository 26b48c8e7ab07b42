//! Deterministic synthetic dataset of colored geometric textures.
//!
//! Each class pairs a base hue with a shape kind and a stripe pattern;
//! per-image jitter (position, size, phase, pixel noise) comes from an RNG
//! seeded by `(dataset seed, class, index)`, so generation is reproducible
//! byte-for-byte. Pixels are quantized to the 1/255 grid at generation time,
//! exactly as they will be stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const DATASET_MAGIC: &[u8; 7] = b"MNDDAT1";

/// Generation settings.
#[derive(Clone, Debug)]
pub struct GenOptions {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            num_classes: 10,
            samples_per_class: 500,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

/// Images quantized to 8-bit, with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    shape: [usize; 3],
    seed: u64,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn generate(opts: &GenOptions) -> Result<Dataset> {
        if opts.num_classes == 0 || opts.num_classes > 256 {
            return Err(Error::Config(format!(
                "num_classes must be in 1..=256, got {}",
                opts.num_classes
            )));
        }
        if opts.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        let (h, w) = (opts.height, opts.width);
        let count = opts.num_classes * opts.samples_per_class;
        let mut pixels = Vec::with_capacity(count * 3 * h * w);
        let mut labels = Vec::with_capacity(count);
        for class in 0..opts.num_classes {
            for index in 0..opts.samples_per_class {
                let img = render_image(class, opts.num_classes, h, w, per_image_seed(opts.seed, class, index));
                pixels.extend_from_slice(&img);
                labels.push(class as u8);
            }
        }
        Ok(Dataset {
            num_classes: opts.num_classes,
            shape: [3, h, w],
            seed: opts.seed,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Image `i` as floats on the 1/255 grid.
    pub fn image(&self, i: usize) -> Tensor {
        let n = self.shape.iter().product::<usize>();
        let values = self.pixels[i * n..(i + 1) * n]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        Tensor::new(self.shape.to_vec(), values).expect("stored shape is consistent")
    }

    /// All images converted once, paired with labels.
    pub fn to_tensors(&self) -> (Vec<Tensor>, Vec<usize>) {
        let images = (0..self.len()).map(|i| self.image(i)).collect();
        let labels = self.labels.iter().map(|&l| l as usize).collect();
        (images, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for d in self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.labels)?;
        w.write_all(&self.pixels)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| Error::CorruptData("dataset file too short".into()))?;
        if &magic != DATASET_MAGIC {
            return Err(Error::CorruptData("bad dataset magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut u32buf)
                .map_err(|_| Error::CorruptData("truncated dataset header".into()))?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let count = read_u32(&mut r)? as usize;
        let shape = [
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
        ];
        let mut seed_buf = [0u8; 8];
        r.read_exact(&mut seed_buf)
            .map_err(|_| Error::CorruptData("truncated dataset header".into()))?;
        let seed = u64::from_le_bytes(seed_buf);

        let mut labels = vec![0u8; count];
        r.read_exact(&mut labels)
            .map_err(|_| Error::CorruptData("truncated label block".into()))?;
        let n = shape.iter().product::<usize>();
        let mut pixels = vec![0u8; count * n];
        r.read_exact(&mut pixels)
            .map_err(|_| Error::CorruptData("truncated pixel block".into()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::CorruptData("trailing bytes after pixel block".into()));
        }
        let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        Ok(Dataset {
            num_classes,
            shape,
            seed,
            pixels,
            labels,
        })
    }

    /// CSV manifest: one `id,label` row per record.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "id,label")?;
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean image of one class, for separability checks.
    pub fn class_mean(&self, class: usize) -> Tensor {
        let n = self.shape.iter().product::<usize>();
        let mut acc = vec![0.0; n];
        let mut count = 0usize;
        for i in 0..self.len() {
            if self.label(i) == class {
                for (a, &p) in acc.iter_mut().zip(&self.pixels[i * n..(i + 1) * n]) {
                    *a += p as f64 / 255.0;
                }
                count += 1;
            }
        }
        if count > 0 {
            for a in &mut acc {
                *a /= count as f64;
            }
        }
        Tensor::new(self.shape.to_vec(), acc).expect("shape consistent")
    }
}

fn per_image_seed(seed: u64, class: usize, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64((class as u64) << 32 | index as u64))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

// Classes sit on a compressed hue band with steps a few quantization levels
// wide: cleanly learnable, but with decision margins small enough that
// bounded-perturbation attacks are meaningful rather than hopeless.
const HUE_BASE: f64 = 0.02;
const HUE_STEP: f64 = 0.025;
const HUE_JITTER: f64 = 0.006;

fn render_image(class: usize, num_classes: usize, h: usize, w: usize, seed: u64) -> Vec<u8> {
    let _ = num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hue = HUE_BASE + HUE_STEP * class as f64 + rng.gen_range(-HUE_JITTER..HUE_JITTER);
    let bg = hsv_to_rgb(hue, 0.55, 0.50 + rng.gen_range(-0.03..0.03));
    let fg = hsv_to_rgb(hue + 0.5, 0.55, 0.72 + rng.gen_range(-0.03..0.03));

    let cy = h as f64 / 2.0 + rng.gen_range(-3.0..3.0);
    let cx = w as f64 / 2.0 + rng.gen_range(-3.0..3.0);
    let radius = rng.gen_range(8.0..11.0);
    let shape_kind = class % 5;

    let angle = std::f64::consts::PI * class as f64 / 10.0;
    let freq = 2.0 + (class % 3) as f64;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let (sin_a, cos_a) = angle.sin_cos();
    let stripe_amp = 0.06;

    let mut out = vec![0u8; 3 * h * w];
    for i in 0..h {
        for j in 0..w {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            let dist = (dx * dx + dy * dy).sqrt();
            let inside = match shape_kind {
                0 => dist <= radius,
                1 => dx.abs().max(dy.abs()) <= radius * 0.8,
                2 => dx.abs() + dy.abs() <= radius * 1.2,
                3 => dist <= radius && dist >= radius * 0.55,
                _ => (dx.abs() <= radius * 0.35 || dy.abs() <= radius * 0.35) && dist <= radius * 1.2,
            };
            let base = if inside { fg } else { bg };
            let coord = (j as f64 * cos_a + i as f64 * sin_a) / w as f64;
            let stripe = 1.0 + stripe_amp * (std::f64::consts::TAU * freq * coord + phase).sin();
            for (ch, &b) in base.iter().enumerate() {
                let noise = rng.gen_range(-0.012..0.012);
                let v = (b * stripe + noise).clamp(0.02, 0.98);
                out[(ch * h + i) * w + j] = (v * 255.0).round() as u8;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts() -> GenOptions {
        GenOptions {
            num_classes: 10,
            samples_per_class: 5,
            height: 32,
            width: 32,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Dataset::generate(&small_opts()).unwrap();
        let b = Dataset::generate(&small_opts()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_roundtrip_is_byte_identical() {
        let dir = std::env::temp_dir().join(format!("mnd-dataset-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.bin");
        let ds = Dataset::generate(&small_opts()).unwrap();
        ds.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        ds.save(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(ds, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn classes_are_separable_in_mean() {
        let ds = Dataset::generate(&small_opts()).unwrap();
        for a in 0..ds.num_classes() {
            for b in (a + 1)..ds.num_classes() {
                let d = ds.class_mean(a).l1_distance(&ds.class_mean(b));
                assert!(d > 1.0, "classes {a} and {b} mean distance {d}");
            }
        }
    }

    #[test]
    fn images_live_on_the_pixel_grid() {
        let ds = Dataset::generate(&small_opts()).unwrap();
        for i in 0..ds.len() {
            assert!(ds.image(i).is_on_grid_255());
        }
    }

    #[test]
    fn manifest_has_one_row_per_record() {
        let dir = std::env::temp_dir().join(format!("mnd-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.csv");
        let ds = Dataset::generate(&small_opts()).unwrap();
        ds.write_manifest(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 50);
        std::fs::remove_dir_all(&dir).ok();
    }
}
