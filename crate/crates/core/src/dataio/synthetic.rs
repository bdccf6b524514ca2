//! Procedural images: a colour gradient, a few flat rectangles and a
//! band-limited sinusoidal texture.

use std::f64::consts::PI;

use rand::Rng;

use super::{Dataset, Split};
use crate::error::{contract_err, Result};
use crate::rng::stream;

fn render<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize) -> Vec<u8> {
    let mut img = vec![0.0f64; h * w * c];
    let c0: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..255.0)).collect();
    let c1: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..255.0)).collect();
    let angle = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 / w as f64 - 0.5) * dx + (y as f64 / h as f64 - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            for ch in 0..c {
                img[(y * w + x) * c + ch] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
        }
    }
    let rects = rng.random_range(1..=3);
    for _ in 0..rects {
        let rh = rng.random_range(h / 6..=h / 2).max(1);
        let rw = rng.random_range(w / 6..=w / 2).max(1);
        let y0 = rng.random_range(0..=h - rh);
        let x0 = rng.random_range(0..=w - rw);
        let colour: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..255.0)).collect();
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                img[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&colour);
            }
        }
    }
    // Low-frequency texture: a handful of random plane waves.
    for _ in 0..3 {
        let fx = rng.random_range(0.5..4.0) / w as f64;
        let fy = rng.random_range(0.5..4.0) / h as f64;
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = rng.random_range(5.0..20.0);
        for y in 0..h {
            for x in 0..w {
                let v = amp * (2.0 * PI * (fx * x as f64 + fy * y as f64) + phase).sin();
                for ch in 0..c {
                    img[(y * w + x) * c + ch] += v;
                }
            }
        }
    }
    img.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// `n` deterministic images; `label` separates independent corpora drawn
/// from the same seed (e.g. train and test).
pub fn synthetic_dataset(n: usize, geometry: (usize, usize, usize), seed: u64, label: &str) -> Result<Dataset> {
    if n < 1 {
        return Err(contract_err!("synthetic dataset needs at least one image"));
    }
    let (h, w, c) = geometry;
    let mut rng = stream(seed, &format!("synthetic/{label}"));
    let mut pixels = Vec::with_capacity(n * h * w * c);
    for _ in 0..n {
        pixels.extend(render(&mut rng, h, w, c));
    }
    let split = if label == "test" { Split::Test } else { Split::Train };
    Dataset::from_pixels(format!("synthetic:{n}@{h}x{w}"), split, geometry, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = synthetic_dataset(200, (32, 32, 3), 7, "train").unwrap();
        let b = synthetic_dataset(200, (32, 32, 3), 7, "train").unwrap();
        assert_eq!(a.len(), 200);
        for i in 0..200 {
            assert_eq!(a.image(i), b.image(i));
        }
        let c = synthetic_dataset(1, (32, 32, 3), 8, "train").unwrap();
        assert_ne!(a.image(0), c.image(0));
    }

    #[test]
    fn images_have_structure() {
        let d = synthetic_dataset(20, (32, 32, 3), 7, "train").unwrap();
        for i in 0..d.len() {
            let img = d.image(i);
            let mean = img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
            let var = img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / img.len() as f64;
            assert!(var > 50.0, "image {i} is nearly flat");
        }
    }
}
