//! Run configuration arithmetic.
//!
//! A [`RunSpec`] pins one (dataset, bandwidth ratio, training SNR) cell and
//! derives the channel geometry from it: source dimension `n = H·W·C`,
//! channel budget `k = ⌊r·n⌋`, encoder output channels
//! `c = ⌊k / (H_O·W_O/2)⌋` and the symbol count actually transmitted,
//! `k_eff = c·H_O·W_O/2 ≤ k`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, JsccError, Result};

/// Smallest accepted image side; the generator halves three times and keeps a
/// 4×4 floor.
pub const MIN_SIDE: usize = 32;

/// Absorbs binary representation error in `r·n` (e.g. `1/12 · 3072`).
const FLOOR_SLACK: f64 = 1e-9;

/// Noise variance per complex symbol for a channel SNR in dB at unit power.
pub fn snr_to_noise_variance(snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(config_err!("SNR must be finite, got {snr_db}"));
    }
    Ok(10f64.powf(-snr_db / 10.0))
}

/// Derived channel dimensions for one image geometry and ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub source_dim: usize,
    pub channel_dim: usize,
    pub encoder_channels: usize,
    /// Complex symbols actually sent, `c·H_O·W_O/2`.
    pub symbols: usize,
    pub bcr_effective: f64,
}

pub fn derive_dimensions(bcr: f64, height: usize, width: usize, channels: usize) -> Result<Dimensions> {
    if !(bcr > 0.0 && bcr <= 1.0) {
        return Err(config_err!("bandwidth ratio must lie in (0, 1], got {bcr}"));
    }
    if height == 0 || width == 0 || channels == 0 {
        return Err(config_err!("image dimensions must be positive, got {height}x{width}x{channels}"));
    }
    if !height.is_multiple_of(2) || !width.is_multiple_of(2) {
        return Err(config_err!("image height and width must be even, got {height}x{width}"));
    }
    let n = height * width * channels;
    let out_pixels = (height / 2) * (width / 2);
    let k = (bcr * n as f64 + FLOOR_SLACK).floor() as usize;
    // c = ⌊k / (H_O·W_O/2)⌋ evaluated in integers.
    let c = 2 * k / out_pixels;
    if c == 0 {
        let min_k = out_pixels.div_ceil(2);
        return Err(config_err!(
            "bandwidth ratio {bcr} leaves no encoder channel for a {height}x{width}x{channels} \
             image; minimum feasible ratio is {min_k}/{n} = {:.6}",
            min_k as f64 / n as f64
        ));
    }
    let reals = c * out_pixels;
    if !reals.is_multiple_of(2) {
        return Err(config_err!(
            "encoder output holds {reals} real values, which cannot be paired into complex \
             symbols; choose an even feature-map area or ratio"
        ));
    }
    let symbols = reals / 2;
    Ok(Dimensions {
        source_dim: n,
        channel_dim: k,
        encoder_channels: c,
        symbols,
        bcr_effective: symbols as f64 / n as f64,
    })
}

/// Cartesian product of ratios and SNRs, ratio-major.
pub fn expand_grid(bcrs: &[f64], snrs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if bcrs.is_empty() || snrs.is_empty() {
        return Err(config_err!("ratio and SNR lists must both be non-empty"));
    }
    Ok(bcrs.iter().flat_map(|&r| snrs.iter().map(move |&s| (r, s))).collect())
}

/// Parses a ratio given as a decimal (`0.0833`) or a fraction (`1/12`).
pub fn parse_ratio(text: &str) -> Result<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| config_err!("bad ratio {text:?}"))?;
            let den: f64 = den.trim().parse().map_err(|_| config_err!("bad ratio {text:?}"))?;
            num / den
        }
        None => text.parse().map_err(|_| config_err!("bad ratio {text:?}"))?,
    };
    if !value.is_finite() {
        return Err(config_err!("bad ratio {text:?}"));
    }
    Ok(value)
}

/// Which dataset a run draws from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetId {
    /// Full CIFAR-10 (50000/10000).
    Cifar10,
    /// First 5000 train / 1000 test CIFAR-10 images.
    Cifar10Mini,
    Synthetic {
        count: usize,
        height: usize,
        width: usize,
    },
    Folder {
        root: String,
        height: usize,
        width: usize,
    },
}

impl DatasetId {
    pub fn geometry(&self) -> (usize, usize, usize) {
        match self {
            DatasetId::Cifar10 | DatasetId::Cifar10Mini => (32, 32, 3),
            DatasetId::Synthetic { height, width, .. } | DatasetId::Folder { height, width, .. } => {
                (*height, *width, 3)
            }
        }
    }

    /// Name usable as a single path component.
    pub fn dir_name(&self) -> String {
        match self {
            DatasetId::Folder { root, height, width } => {
                let base = Path::new(root)
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "folder".into());
                format!("folder-{base}-{height}x{width}")
            }
            other => other.to_string().replace([':', '@'], "-"),
        }
    }
}

fn parse_hw(text: &str) -> Result<(usize, usize)> {
    let (h, w) = text.split_once(['x', 'X']).ok_or_else(|| config_err!("expected <H>x<W>, got {text:?}"))?;
    let h = h.parse().map_err(|_| config_err!("bad height in {text:?}"))?;
    let w = w.parse().map_err(|_| config_err!("bad width in {text:?}"))?;
    Ok((h, w))
}

impl FromStr for DatasetId {
    type Err = JsccError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => return Ok(DatasetId::Cifar10),
            "cifar10-mini" => return Ok(DatasetId::Cifar10Mini),
            "synthetic-200" => return Ok(DatasetId::Synthetic { count: 200, height: 32, width: 32 }),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let (count, hw) =
                rest.split_once('@').ok_or_else(|| config_err!("expected synthetic:<n>@<HxW>, got {s:?}"))?;
            let count = count.parse().map_err(|_| config_err!("bad image count in {s:?}"))?;
            let (height, width) = parse_hw(hw)?;
            return Ok(DatasetId::Synthetic { count, height, width });
        }
        if let Some(rest) = s.strip_prefix("folder:") {
            let (root, hw) =
                rest.rsplit_once('@').ok_or_else(|| config_err!("expected folder:<path>@<HxW>, got {s:?}"))?;
            let (height, width) = parse_hw(hw)?;
            return Ok(DatasetId::Folder { root: root.to_string(), height, width });
        }
        Err(config_err!(
            "unknown dataset {s:?}; expected cifar10, cifar10-mini, synthetic-200, \
             synthetic:<n>@<HxW> or folder:<path>@<HxW>"
        ))
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetId::Cifar10 => write!(f, "cifar10"),
            DatasetId::Cifar10Mini => write!(f, "cifar10-mini"),
            DatasetId::Synthetic { count: 200, height: 32, width: 32 } => write!(f, "synthetic-200"),
            DatasetId::Synthetic { count, height, width } => {
                write!(f, "synthetic:{count}@{height}x{width}")
            }
            DatasetId::Folder { root, height, width } => {
                write!(f, "folder:{root}@{height}x{width}")
            }
        }
    }
}

impl Serialize for DatasetId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DatasetId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One (dataset, r, γ) configuration with its derived channel geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub dataset: DatasetId,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    pub bcr_target: f64,
    pub snr_train_db: f64,
    pub avg_power: f64,
    pub encoder_out_height: usize,
    pub encoder_out_width: usize,
    pub dims: Dimensions,
}

impl RunSpec {
    pub fn new(dataset: DatasetId, bcr: f64, snr_train_db: f64) -> Result<Self> {
        let (h, w, c) = dataset.geometry();
        Self::with_geometry(dataset, h, w, c, bcr, snr_train_db, 1.0)
    }

    pub fn with_geometry(
        dataset: DatasetId,
        height: usize,
        width: usize,
        channels: usize,
        bcr: f64,
        snr_train_db: f64,
        avg_power: f64,
    ) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(config_err!("images must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"));
        }
        if !snr_train_db.is_finite() {
            return Err(config_err!("training SNR must be finite"));
        }
        if !(avg_power > 0.0 && avg_power.is_finite()) {
            return Err(config_err!("average power must be positive, got {avg_power}"));
        }
        let dims = derive_dimensions(bcr, height, width, channels)?;
        Ok(RunSpec {
            dataset,
            image_height: height,
            image_width: width,
            image_channels: channels,
            bcr_target: bcr,
            snr_train_db,
            avg_power,
            encoder_out_height: height / 2,
            encoder_out_width: width / 2,
            dims,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        // Finite by construction.
        10f64.powf(-self.snr_train_db / 10.0)
    }

    pub fn encoder_channels(&self) -> usize {
        self.dims.encoder_channels
    }

    pub fn symbols(&self) -> usize {
        self.dims.symbols
    }

    /// Same geometry at another training SNR.
    pub fn at_snr(&self, snr_train_db: f64) -> Self {
        RunSpec { snr_train_db, ..self.clone() }
    }
}

/// Training method identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GUnet,
    Cgan,
    Baseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::GUnet => "g_unet",
            Method::Cgan => "cgan",
            Method::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = JsccError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g_unet" => Ok(Method::GUnet),
            "cgan" => Ok(Method::Cgan),
            "baseline" => Ok(Method::Baseline),
            _ => Err(config_err!("unknown method {s:?}; expected g_unet, cgan or baseline")),
        }
    }
}

/// Optimisation hyperparameters shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_mse: f64,
    pub lambda_ssim: f64,
    pub lambda_l1: f64,
    pub snr_set: Vec<f64>,
    pub bcr_set: Vec<f64>,
    pub seed: u64,
    /// Use `-log D(G(ẑ))` for the generator's adversarial term.
    #[serde(default)]
    pub non_saturating: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 1,
            learning_rate: 1e-3,
            lambda_mse: 0.9,
            lambda_ssim: 0.1,
            lambda_l1: 100.0,
            snr_set: vec![10.0],
            bcr_set: vec![1.0 / 12.0],
            seed: 0,
            non_saturating: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(config_err!("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(config_err!("batch size must be at least 1"));
        }
        // Zero is accepted so that a frozen step can be exercised.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        for (name, v) in
            [("lambda_mse", self.lambda_mse), ("lambda_ssim", self.lambda_ssim), ("lambda_l1", self.lambda_l1)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.lambda_mse + self.lambda_ssim <= 0.0 {
            return Err(config_err!("lambda_mse + lambda_ssim must be positive"));
        }
        Ok(())
    }
}

/// The JSON run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetId,
    pub bcr: f64,
    pub snr_train_db: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_mse: f64,
    pub lambda_ssim: f64,
    pub lambda_l1: f64,
    pub seed: u64,
    pub method: Method,
    /// Use `−log D(G(ẑ))` for the generator instead of `log(1 − D(G(ẑ)))`.
    pub non_saturating: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            dataset: DatasetId::Synthetic { count: 200, height: 32, width: 32 },
            bcr: 1.0 / 12.0,
            snr_train_db: 10.0,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lambda_mse: t.lambda_mse,
            lambda_ssim: t.lambda_ssim,
            lambda_l1: t.lambda_l1,
            seed: t.seed,
            method: Method::GUnet,
            non_saturating: t.non_saturating,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err!("bad config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| JsccError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies one `key=value` override; unknown keys are rejected.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| config_err!("bad value {value:?} for {key}"))
        }
        match key {
            "dataset" => self.dataset = value.parse()?,
            "bcr" => self.bcr = parse_ratio(value)?,
            "snr_train_db" => self.snr_train_db = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "lambda_mse" => self.lambda_mse = num(key, value)?,
            "lambda_ssim" => self.lambda_ssim = num(key, value)?,
            "lambda_l1" => self.lambda_l1 = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "method" => self.method = value.parse()?,
            "non_saturating" => self.non_saturating = num(key, value)?,
            _ => return Err(config_err!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        RunSpec::new(self.dataset.clone(), self.bcr, self.snr_train_db)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda_mse: self.lambda_mse,
            lambda_ssim: self.lambda_ssim,
            lambda_l1: self.lambda_l1,
            snr_set: vec![self.snr_train_db],
            bcr_set: vec![self.bcr],
            seed: self.seed,
            non_saturating: self.non_saturating,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn noise_variance_examples() {
        assert_relative_eq!(snr_to_noise_variance(10.0).unwrap(), 0.1, max_relative = 1e-15);
        assert_eq!(snr_to_noise_variance(0.0).unwrap(), 1.0);
        assert_relative_eq!(snr_to_noise_variance(20.0).unwrap(), 0.01, max_relative = 1e-15);
        assert!(snr_to_noise_variance(f64::NAN).is_err());
        assert!(snr_to_noise_variance(f64::INFINITY).is_err());
    }

    #[test]
    fn cifar_dimensions() {
        let d = derive_dimensions(1.0 / 12.0, 32, 32, 3).unwrap();
        assert_eq!((d.source_dim, d.channel_dim, d.encoder_channels), (3072, 256, 2));
        assert_eq!(d.bcr_effective, 1.0 / 12.0);
    }

    #[test]
    fn celeba_hq_dimensions() {
        let d = derive_dimensions(1.0 / 12.0, 256, 256, 3).unwrap();
        assert_eq!((d.source_dim, d.channel_dim, d.encoder_channels), (196608, 16384, 2));
    }

    #[test]
    fn smallest_even_image() {
        let d = derive_dimensions(1.0, 2, 2, 1).unwrap();
        assert_eq!((d.source_dim, d.channel_dim, d.encoder_channels), (4, 4, 8));
        assert_eq!(d.bcr_effective, 1.0);
    }

    #[test]
    fn non_divisible_ratio_reports_effective() {
        // k = ⌊0.1·3072⌋ = 307, c = ⌊307/128⌋ = 2, k_eff = 256.
        let d = derive_dimensions(0.1, 32, 32, 3).unwrap();
        assert_eq!(d.channel_dim, 307);
        assert_eq!(d.encoder_channels, 2);
        assert_eq!(d.symbols, 256);
        assert!(d.bcr_effective < 0.1);
    }

    #[test]
    fn too_small_ratio_names_minimum() {
        let err = derive_dimensions(0.01, 32, 32, 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("128/3072"), "{msg}");
    }

    #[test]
    fn rejects_bad_ratios_and_odd_sides() {
        assert!(derive_dimensions(0.0, 32, 32, 3).is_err());
        assert!(derive_dimensions(1.5, 32, 32, 3).is_err());
        assert!(derive_dimensions(0.5, 33, 32, 3).is_err());
    }

    #[test]
    fn run_spec_enforces_minimum_side() {
        let ds = DatasetId::Synthetic { count: 4, height: 16, width: 16 };
        assert!(RunSpec::new(ds, 1.0 / 12.0, 10.0).is_err());
    }

    #[test]
    fn grid_order_is_ratio_major() {
        assert_eq!(expand_grid(&[1.0 / 12.0], &[1.0, 10.0]).unwrap(), vec![(1.0 / 12.0, 1.0), (1.0 / 12.0, 10.0)]);
        assert_eq!(expand_grid(&[1.0 / 6.0, 1.0 / 12.0], &[5.0]).unwrap(), vec![(1.0 / 6.0, 5.0), (1.0 / 12.0, 5.0)]);
        let g = expand_grid(&[0.1, 0.2], &[1.0, 2.0]).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[0].0, 0.1);
        assert_eq!(g[1].0, 0.1);
        assert!(expand_grid(&[], &[1.0]).is_err());
        assert!(expand_grid(&[0.1], &[]).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"methd": "cgan"}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"method": "cgan", "bcr": 0.25}"#).unwrap();
        assert_eq!(cfg.method, Method::Cgan);
        assert_eq!(cfg.epochs, 20);
        let mut cfg = cfg;
        assert!(cfg.apply_override("epoch", "3").is_err());
        cfg.apply_override("bcr", "1/12").unwrap();
        assert_eq!(cfg.bcr, 1.0 / 12.0);
    }

    #[test]
    fn zero_epochs_is_config_error() {
        let cfg = RunConfig { epochs: 0, ..RunConfig::default() };
        assert!(matches!(cfg.train_config(), Err(JsccError::Config(_))));
    }

    #[test]
    fn dataset_ids_parse_and_print() {
        for s in ["cifar10", "cifar10-mini", "synthetic-200", "synthetic:12@64x64", "folder:/a/b@64x64"] {
            assert_eq!(s.parse::<DatasetId>().unwrap().to_string(), s);
        }
        assert!("imagenet".parse::<DatasetId>().is_err());
    }

    proptest! {
        #[test]
        fn noise_variance_strictly_decreasing(a in -30.0f64..40.0, d in 0.01f64..10.0) {
            prop_assert!(snr_to_noise_variance(a).unwrap() > snr_to_noise_variance(a + d).unwrap());
        }

        #[test]
        fn derived_geometry_consistent(r in 0.05f64..1.0, h in 16usize..40, w in 16usize..40) {
            let (h, w) = (2 * h, 2 * w);
            if let Ok(d) = derive_dimensions(r, h, w, 3) {
                let out = (h / 2) * (w / 2);
                prop_assert_eq!(2 * d.symbols, d.encoder_channels * out);
                prop_assert!(d.symbols <= d.channel_dim);
                prop_assert!(d.bcr_effective <= r + 1e-12);
            }
        }
    }
}
