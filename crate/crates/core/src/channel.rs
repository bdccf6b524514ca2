//! Complex symbol pipeline between encoder and decoder.
//!
//! Complex symbols are carried as paired real arrays. The real encoder output
//! of length `2m` maps to `m` symbols with the first half holding the real
//! parts and the second half the imaginary parts.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, shape_err, JsccError, Result};
use crate::tensor::Real;

/// Relative tolerance of the power constraint `‖z‖² = k·P̄`.
pub const POWER_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSymbolVector<T> {
    pub re: Vec<T>,
    pub im: Vec<T>,
    pub avg_power: f64,
    pub normalized: bool,
}

impl<T: Real> ChannelSymbolVector<T> {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// `Σ |z_i|²`, accumulated in f64.
    pub fn energy(&self) -> f64 {
        self.re
            .iter()
            .chain(&self.im)
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum()
    }

    /// Whether the power constraint holds within [`POWER_RTOL`].
    pub fn satisfies_power(&self) -> bool {
        let target = self.len() as f64 * self.avg_power;
        (self.energy() - target).abs() <= POWER_RTOL * target
    }

    /// Writes the flat little-endian `.csym` debug dump: `m` real parts then
    /// `m` imaginary parts as 32-bit floats.
    pub fn write_csym(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * self.len());
        for v in self.re.iter().chain(&self.im) {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| JsccError::io(path, e))?;
        f.write_all(&buf).map_err(|e| JsccError::io(path, e))
    }

    pub fn read_csym(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| JsccError::io(path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(shape_err!(
                "{}: {} bytes is not a whole number of complex f32 symbols",
                path.display(),
                bytes.len()
            ));
        }
        let vals: Vec<T> =
            bytes.chunks_exact(4).map(|c| T::from_f64c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        pack_complex(&vals)
    }
}

/// `[v_0..v_{2m}] ↦ [v_i + j·v_{m+i}]`.
pub fn pack_complex<T: Real>(v: &[T]) -> Result<ChannelSymbolVector<T>> {
    if !v.len().is_multiple_of(2) {
        return Err(shape_err!("cannot pack {} real values into complex symbols (odd length)", v.len()));
    }
    let m = v.len() / 2;
    Ok(ChannelSymbolVector { re: v[..m].to_vec(), im: v[m..].to_vec(), avg_power: 0.0, normalized: false })
}

/// Exact inverse of [`pack_complex`].
pub fn unpack_real<T: Real>(z: &ChannelSymbolVector<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * z.len());
    out.extend_from_slice(&z.re);
    out.extend_from_slice(&z.im);
    out
}

/// `z = √(k·P̄) · z̃ / ‖z̃‖` with `k` the symbol count.
pub fn power_normalize<T: Real>(z: &ChannelSymbolVector<T>, avg_power: f64) -> Result<ChannelSymbolVector<T>> {
    if !(avg_power > 0.0 && avg_power.is_finite()) {
        return Err(config_err!("average power must be positive, got {avg_power}"));
    }
    let norm = z.energy().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(JsccError::Numerical(format!("power normalization of a symbol vector with norm {norm}")));
    }
    let gain = T::from_f64c((z.len() as f64 * avg_power).sqrt() / norm);
    Ok(ChannelSymbolVector {
        re: z.re.iter().map(|&v| v * gain).collect(),
        im: z.im.iter().map(|&v| v * gain).collect(),
        avg_power,
        normalized: true,
    })
}

/// Vector–Jacobian product of power normalization on the real layout.
///
/// With `a = √(k·P̄)` and `z = a·v/‖v‖`, the gradient is
/// `a/‖v‖ · (g − v·(v·g)/‖v‖²)`.
pub fn power_normalize_backward<T: Real>(v: &[T], grad_z: &[T], avg_power: f64) -> Vec<T> {
    assert_eq!(v.len(), grad_z.len());
    let k = v.len() / 2;
    let sq: f64 = v.iter().map(|x| x.as_f64() * x.as_f64()).sum();
    let dot: f64 = v.iter().zip(grad_z).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
    let norm = sq.sqrt();
    let a = (k as f64 * avg_power).sqrt();
    let scale = a / norm;
    let proj = dot / sq;
    v.iter().zip(grad_z).map(|(&x, &g)| T::from_f64c(scale * (g.as_f64() - x.as_f64() * proj))).collect()
}

/// One realisation of `CN(0, σ²I)` for `m` symbols: real and imaginary
/// parts each `N(0, σ²/2)`, drawn as (re, im) pairs in symbol order.
pub fn sample_noise<R: Rng>(m: usize, noise_var: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if !noise_var.is_finite() || noise_var < 0.0 {
        return Err(config_err!("noise variance must be finite and non-negative, got {noise_var}"));
    }
    let sd = (noise_var / 2.0).sqrt();
    let mut re = Vec::with_capacity(m);
    let mut im = Vec::with_capacity(m);
    for _ in 0..m {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        re.push(a * sd);
        im.push(b * sd);
    }
    Ok((re, im))
}

/// Adds a given noise realisation. The map is the identity plus a constant,
/// so gradients pass through unchanged.
pub fn add_noise<T: Real>(z: &ChannelSymbolVector<T>, noise_re: &[f64], noise_im: &[f64]) -> ChannelSymbolVector<T> {
    assert_eq!(z.len(), noise_re.len());
    assert_eq!(z.len(), noise_im.len());
    ChannelSymbolVector {
        re: z.re.iter().zip(noise_re).map(|(&v, &n)| v + T::from_f64c(n)).collect(),
        im: z.im.iter().zip(noise_im).map(|(&v, &n)| v + T::from_f64c(n)).collect(),
        avg_power: z.avg_power,
        normalized: false,
    }
}

/// `ẑ = z + n`, `n ~ CN(0, σ²I)`.
pub fn awgn_corrupt<T: Real, R: Rng>(
    z: &ChannelSymbolVector<T>,
    noise_var: f64,
    rng: &mut R,
) -> Result<ChannelSymbolVector<T>> {
    if noise_var < 0.0 {
        return Err(config_err!("noise variance must be non-negative, got {noise_var}"));
    }
    if !z.normalized {
        return Err(JsccError::Contract("AWGN input must be power-normalized".into()));
    }
    let (nr, ni) = sample_noise(z.len(), noise_var, rng)?;
    Ok(add_noise(z, &nr, &ni))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, prop_assume, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pack_examples() {
        let z = pack_complex(&[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(z.re, vec![1.0, 2.0]);
        assert_eq!(z.im, vec![3.0, 4.0]);
        let z = pack_complex(&[0.0f64, 0.0]).unwrap();
        assert_eq!((z.re[0], z.im[0]), (0.0, 0.0));
        assert!(pack_complex(&[1.0f64, 2.0, 3.0]).is_err());
        assert_eq!(unpack_real(&pack_complex(&[1.0f64, 2.0, 3.0, 4.0]).unwrap()), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn normalize_examples() {
        let z = pack_complex(&[2.0f64, 0.0]).unwrap();
        let n = power_normalize(&z, 1.0).unwrap();
        assert_eq!(n.re, vec![1.0]);
        assert_eq!(n.im, vec![0.0]);

        // ‖z̃‖² = k·P̄ already: unchanged.
        let z = pack_complex(&[0.6f64, 0.8, 0.8, 0.6]).unwrap();
        let n = power_normalize(&z, 1.0).unwrap();
        for (a, b) in unpack_real(&n).iter().zip(unpack_real(&z)) {
            assert!((a - b).abs() < 1e-15);
        }

        let zero = pack_complex(&[0.0f64; 4]).unwrap();
        assert!(matches!(power_normalize(&zero, 1.0), Err(JsccError::Numerical(_))));
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let z = power_normalize(&pack_complex(&[1.0f64, -2.0, 0.5, 3.0]).unwrap(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = awgn_corrupt(&z, 0.0, &mut rng).unwrap();
        assert_eq!(y.re, z.re);
        assert_eq!(y.im, z.im);
        assert!(awgn_corrupt(&z, -0.1, &mut rng).is_err());
    }

    #[test]
    fn noise_power_matches_variance() {
        let m = 1_000_000;
        let z = power_normalize(&pack_complex(&vec![1.0f64; 2 * m]).unwrap(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = awgn_corrupt(&z, 0.1, &mut rng).unwrap();
        let noise: f64 = (0..m).map(|i| (y.re[i] - z.re[i]).powi(2) + (y.im[i] - z.im[i]).powi(2)).sum();
        let per_symbol = noise / m as f64;
        assert!((0.099..=0.101).contains(&per_symbol), "{per_symbol}");
        let snr = 10.0 * (z.energy() / noise).log10();
        assert!((snr - 10.0).abs() < 0.1, "{snr}");
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |v: &[f64]| -> f64 {
            let z = power_normalize(&pack_complex(v).unwrap(), 2.0).unwrap();
            unpack_real(&z).iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let g = power_normalize_backward(&v, &r, 2.0);
        for i in 0..v.len() {
            let h = 1e-6;
            let mut p = v.clone();
            p[i] += h;
            let mut m = v.clone();
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-3 * fd.abs().max(1e-6), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn csym_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csym");
        let z = pack_complex(&[1.5f32, -2.0, 0.25, 4.0]).unwrap();
        z.write_csym(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 16);
        let back = ChannelSymbolVector::<f32>::read_csym(&path).unwrap();
        assert_eq!(back.re, z.re);
        assert_eq!(back.im, z.im);
    }

    proptest! {
        #[test]
        fn pack_unpack_are_inverse(v in prop::collection::vec(-1e6f64..1e6, 512)) {
            let z = pack_complex(&v).unwrap();
            prop_assert_eq!(unpack_real(&z), v.clone());
            let z2 = pack_complex(&unpack_real(&z)).unwrap();
            prop_assert_eq!(z2, z);
        }

        #[test]
        fn normalized_vectors_meet_power_constraint(
            v in prop::collection::vec(-10.0f64..10.0, 512),
            p in 0.1f64..4.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let z = pack_complex(&v).unwrap();
            let n = power_normalize(&z, p).unwrap();
            prop_assert!(n.satisfies_power());
            // Direction preserved: positive scalar multiple.
            let ratio = n.re.iter().chain(&n.im).zip(z.re.iter().chain(&z.im))
                .find(|(_, b)| b.abs() > 1e-3).map(|(a, b)| a / b).unwrap();
            prop_assert!(ratio > 0.0);
            for (a, b) in n.re.iter().chain(&n.im).zip(z.re.iter().chain(&z.im)) {
                prop_assert!((a - ratio * b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
