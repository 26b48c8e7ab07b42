//! Binary P6 portable pixmap interchange.
//!
//! Round trips are bit-exact for images on the 1/255 grid, which is what the
//! final attack projection guarantees.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Write a `[3, H, W]` image with values in `[0, 1]` as a binary P6 file.
pub fn write_p6(path: &Path, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!("P6 writer expects [3,H,W], got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let v = image.values();
    let plane = h * w;
    let mut row = Vec::with_capacity(3 * w);
    for i in 0..h {
        row.clear();
        for j in 0..w {
            for c in 0..3 {
                let x = v[c * plane + i * w + j].clamp(0.0, 1.0);
                row.push((x * 255.0).round() as u8);
            }
        }
        out.write_all(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a binary P6 file into a `[3, H, W]` tensor on the 1/255 grid.
pub fn read_p6(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut pos = 0usize;

    fn skip_space(data: &[u8], mut pos: usize) -> usize {
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                return pos;
            }
        }
    }
    fn read_int(data: &[u8], pos: &mut usize) -> Result<usize> {
        *pos = skip_space(data, *pos);
        let start = *pos;
        while *pos < data.len() && data[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::CorruptData("expected integer in pixmap header".into()));
        }
        std::str::from_utf8(&data[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptData("bad integer in pixmap header".into()))
    }

    if data.len() < 2 || &data[0..2] != b"P6" {
        return Err(Error::CorruptData("not a binary P6 pixmap".into()));
    }
    pos += 2;
    let w = read_int(&data, &mut pos)?;
    let h = read_int(&data, &mut pos)?;
    let maxval = read_int(&data, &mut pos)?;
    if maxval != 255 {
        return Err(Error::CorruptData(format!("unsupported maxval {maxval}")));
    }
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::CorruptData("missing separator before pixel data".into()));
    }
    pos += 1;
    let need = 3 * h * w;
    if data.len() - pos != need {
        return Err(Error::CorruptData(format!(
            "pixel block is {} bytes, expected {need}",
            data.len() - pos
        )));
    }

    let plane = h * w;
    let mut values = vec![0.0; 3 * plane];
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let b = data[pos + (i * w + j) * 3 + c];
                values[c * plane + i * w + j] = b as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![3, h, w], values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn roundtrip_is_bit_exact_on_grid() {
        let dir = std::env::temp_dir().join(format!("mnd-pixmap-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.ppm");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::rand_uniform(vec![3, 9, 7], 0.0, 1.0, &mut rng).quantized_255();
        write_p6(&path, &img).unwrap();
        let back = read_p6(&path).unwrap();
        assert_eq!(img, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn all_256_levels_survive() {
        let dir = std::env::temp_dir().join(format!("mnd-pixmap256-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("levels.ppm");
        let values: Vec<f64> = (0..256).map(|k| k as f64 / 255.0).collect();
        let img = Tensor::new(vec![3, 16, 16], values.repeat(3)).unwrap();
        write_p6(&path, &img).unwrap();
        let back = read_p6(&path).unwrap();
        assert_eq!(img, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = std::env::temp_dir().join(format!("mnd-pixmap-trunc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ppm");
        std::fs::write(&path, b"P6\n4 4\n255\nabc").unwrap();
        assert!(matches!(read_p6(&path), Err(Error::CorruptData(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
