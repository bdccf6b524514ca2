//! Reconstruction quality: PSNR, SSIM and a pluggable perceptual distance.

mod lpips;
mod ssim;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use lpips::{FeatureExtractor, LpipsExtractor, LpipsLayer};
pub use ssim::{ssim_from_stats, ssim_metric, ssim_with_grad, SsimParams};

use crate::batch::{check_pair, ImageBatch, PixelScale};
use crate::error::Result;
use crate::tensor::Real;

/// Peak pixel value of 8-bit images.
pub const P_MAX: f64 = 255.0;

/// PSNR in dB, or `f64::INFINITY` when the images are identical.
pub fn psnr<T: Real>(x: &ImageBatch<T>, y: &ImageBatch<T>) -> Result<f64> {
    check_pair(x, y, Some(PixelScale::Pixel255))?;
    let mse = mean_squared_error(x.data.data(), y.data.data());
    Ok(psnr_from_mse(mse, P_MAX))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Mean PSNR over batch items, each item scored on its own MSE.
pub fn psnr_per_image<T: Real>(x: &ImageBatch<T>, y: &ImageBatch<T>) -> Result<Vec<f64>> {
    check_pair(x, y, Some(PixelScale::Pixel255))?;
    Ok((0..x.data.batch()).map(|b| psnr_from_mse(mean_squared_error(x.data.item(b), y.data.item(b)), P_MAX)).collect())
}

pub(crate) fn mean_squared_error<T: Real>(a: &[T], b: &[T]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let d = p.as_f64() - q.as_f64();
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Perceptual distance, or `None` when no extractor weights are available.
pub fn perceptual_distance<T: Real>(
    x: &ImageBatch<T>,
    y: &ImageBatch<T>,
    model: Option<&dyn FeatureExtractor>,
) -> Result<Option<f64>> {
    match model {
        None => Ok(None),
        Some(m) => {
            check_pair(x, y, None)?;
            let xu = x.to_unit().data.cast::<f64>();
            let yu = y.to_unit().data.cast::<f64>();
            Ok(Some(m.distance(&xu, &yu)?))
        }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub method: String,
    pub dataset: String,
    pub bcr: f64,
    pub snr_train_db: f64,
    pub snr_test_db: f64,
    #[serde(with = "inf_as_text")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub n_images: usize,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} r={:.4} train={}dB test={}dB: PSNR {:.3} dB, SSIM {:.4}",
            self.method, self.dataset, self.bcr, self.snr_train_db, self.snr_test_db, self.psnr_db, self.ssim
        )?;
        if let Some(l) = self.lpips {
            write!(f, ", LPIPS {l:.4}")?;
        }
        write!(f, " ({} images)", self.n_images)
    }
}

/// Serialises `+∞` as the string `inf` so CSV rows round-trip.
mod inf_as_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        if text == "inf" {
            return Ok(f64::INFINITY);
        }
        text.parse().map_err(serde::de::Error::custom)
    }
}

pub const METRICS_HEADER: [&str; 10] =
    ["run_id", "method", "dataset", "bcr", "snr_train_db", "snr_test_db", "psnr_db", "ssim", "lpips", "n_images"];

/// Writes `metrics.csv` text, header first.
pub fn write_metrics_csv<W: std::io::Write>(out: W, rows: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| crate::error::JsccError::Contract(format!("writing metrics: {e}"));
    // Header is written explicitly so that an empty table still carries it.
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.method.clone(),
            r.dataset.clone(),
            r.bcr.to_string(),
            r.snr_train_db.to_string(),
            r.snr_test_db.to_string(),
            if r.psnr_db == f64::INFINITY { "inf".into() } else { r.psnr_db.to_string() },
            r.ssim.to_string(),
            r.lpips.map(|v| v.to_string()).unwrap_or_default(),
            r.n_images.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| crate::error::JsccError::Contract(format!("writing metrics: {e}")))?;
    Ok(())
}

/// Parses `metrics.csv`, rejecting any other header.
pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsReport>> {
    let bad = |m: String| crate::error::JsccError::Config(format!("metrics.csv: {m}"));
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            let t = &rec[i];
            if t == "inf" {
                return Ok(f64::INFINITY);
            }
            t.parse().map_err(|_| bad(format!("bad number {t:?} in column {}", METRICS_HEADER[i])))
        };
        rows.push(MetricsReport {
            run_id: rec[0].to_string(),
            method: rec[1].to_string(),
            dataset: rec[2].to_string(),
            bcr: num(3)?,
            snr_train_db: num(4)?,
            snr_test_db: num(5)?,
            psnr_db: num(6)?,
            ssim: num(7)?,
            lpips: if rec[8].is_empty() { None } else { Some(num(8)?) },
            n_images: rec[9].parse().map_err(|_| bad(format!("bad image count {:?}", &rec[9])))?,
        });
    }
    Ok(rows)
}
