//! Training objectives and their gradients.
//!
//! Image losses take unit-scale batches and return the value together with
//! the gradient with respect to the reconstruction where training needs it.
//! Adversarial losses act on per-image decisions, the mean of each
//! discriminator score map.

use serde::{Deserialize, Serialize};

use crate::batch::{check_pair, ImageBatch, PixelScale};
use crate::error::{config_err, contract_err, Result};
use crate::metrics::{ssim_metric, ssim_with_grad, SsimParams};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Every loss recorded for one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_mse: f64,
    pub l_ssim: f64,
    pub l_combined: f64,
    pub l_gan: f64,
    pub l_gen: f64,
    /// Weighted by λ₁.
    pub l_l1: f64,
    pub l_disc: f64,
}

impl LossBundle {
    /// `L_GAN + L_L1`, the value of the adversarial minimax objective.
    pub fn l_total(&self) -> f64 {
        self.l_gan + self.l_l1
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.l_mse, self.l_ssim, self.l_combined, self.l_gan, self.l_gen, self.l_l1, self.l_disc];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::JsccError::Numerical(format!("non-finite loss in {self:?}")));
        }
        if self.l_mse < 0.0 || self.l_l1 < 0.0 || !(0.0..=2.0).contains(&self.l_ssim) {
            return Err(contract_err!("loss out of range in {self:?}"));
        }
        Ok(())
    }
}

fn unit_pair<T: Real>(x: &ImageBatch<T>, x_hat: &ImageBatch<T>) -> Result<()> {
    check_pair(x, x_hat, Some(PixelScale::Unit))
}

/// Mean squared error over all pixels and batch items.
pub fn mse_loss<T: Real>(x: &ImageBatch<T>, x_hat: &ImageBatch<T>) -> Result<f64> {
    unit_pair(x, x_hat)?;
    Ok(crate::metrics::mean_squared_error(x.data.data(), x_hat.data.data()))
}

pub fn mse_with_grad<T: Real>(x: &ImageBatch<T>, x_hat: &ImageBatch<T>) -> Result<(f64, Tensor<T>)> {
    let v = mse_loss(x, x_hat)?;
    let n = x.data.data().len() as f64;
    let mut g = Tensor::zeros(x.shape());
    for ((g, a), b) in g.data_mut().iter_mut().zip(x.data.data()).zip(x_hat.data.data()) {
        *g = T::from_f64c(2.0 * (b.as_f64() - a.as_f64()) / n);
    }
    Ok((v, g))
}

/// `1 − SSIM` at unit dynamic range.
pub fn ssim_loss<T: Real>(x: &ImageBatch<T>, x_hat: &ImageBatch<T>) -> Result<f64> {
    unit_pair(x, x_hat)?;
    Ok(1.0 - ssim_metric(x, x_hat, &SsimParams::unit())?)
}

pub fn ssim_loss_with_grad<T: Real>(
    x: &ImageBatch<T>,
    x_hat: &ImageBatch<T>,
    params: &SsimParams,
) -> Result<(f64, Tensor<T>)> {
    unit_pair(x, x_hat)?;
    let (s, g) = ssim_with_grad(x, x_hat, params)?;
    Ok((1.0 - s, g.map(|v| -v)))
}

fn check_weights(lambda_mse: f64, lambda_ssim: f64) -> Result<()> {
    if !(lambda_mse >= 0.0 && lambda_ssim >= 0.0) {
        return Err(config_err!("loss weights must be nonnegative, got {lambda_mse} and {lambda_ssim}"));
    }
    if lambda_mse == 0.0 && lambda_ssim == 0.0 {
        return Err(config_err!("lambda_mse and lambda_ssim cannot both be zero"));
    }
    Ok(())
}

/// `λ_M·L_MSE + λ_S·L_SSIM`.
pub fn combined_loss<T: Real>(
    x: &ImageBatch<T>,
    x_hat: &ImageBatch<T>,
    lambda_mse: f64,
    lambda_ssim: f64,
) -> Result<f64> {
    check_weights(lambda_mse, lambda_ssim)?;
    let mse = mse_loss(x, x_hat)?;
    if lambda_ssim == 0.0 {
        return Ok(lambda_mse * mse);
    }
    Ok(lambda_mse * mse + lambda_ssim * ssim_loss(x, x_hat)?)
}

/// Value parts of a combined-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedValue {
    pub mse: f64,
    /// Absent when `λ_S = 0`, since the SSIM term is then skipped.
    pub ssim: Option<f64>,
    pub combined: f64,
}

/// Combined loss and its gradient. The SSIM term is not evaluated at all when
/// its weight is zero.
pub fn combined_with_grad<T: Real>(
    x: &ImageBatch<T>,
    x_hat: &ImageBatch<T>,
    lambda_mse: f64,
    lambda_ssim: f64,
    params: &SsimParams,
) -> Result<(CombinedValue, Tensor<T>)> {
    check_weights(lambda_mse, lambda_ssim)?;
    let (mse, gm) = mse_with_grad(x, x_hat)?;
    let mut grad = gm.scale(T::from_f64c(lambda_mse));
    let mut ssim = None;
    if lambda_ssim != 0.0 {
        let (s, gs) = ssim_loss_with_grad(x, x_hat, params)?;
        grad.add_assign(&gs.scale(T::from_f64c(lambda_ssim)));
        ssim = Some(s);
    }
    let combined = lambda_mse * mse + lambda_ssim * ssim.unwrap_or(0.0);
    Ok((CombinedValue { mse, ssim, combined }, grad))
}

/// Mean absolute pixel error (unweighted).
pub fn l1_loss<T: Real>(x: &ImageBatch<T>, x_hat: &ImageBatch<T>) -> Result<f64> {
    unit_pair(x, x_hat)?;
    let n = x.data.data().len() as f64;
    Ok(x.data.data().iter().zip(x_hat.data.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum::<f64>() / n)
}

pub fn l1_with_grad<T: Real>(x: &ImageBatch<T>, x_hat: &ImageBatch<T>) -> Result<(f64, Tensor<T>)> {
    let v = l1_loss(x, x_hat)?;
    let n = x.data.data().len() as f64;
    let mut g = Tensor::zeros(x.shape());
    for ((g, a), b) in g.data_mut().iter_mut().zip(x.data.data()).zip(x_hat.data.data()) {
        let d = b.as_f64() - a.as_f64();
        *g = T::from_f64c(if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        });
    }
    Ok((v, g))
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// d/dp of log(clamp(p)); zero where the clamp is active.
fn dlog(p: f64) -> f64 {
    if (EPS..=1.0 - EPS).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}

/// d/dp of log(1 − clamp(p)).
fn dlog1m(p: f64) -> f64 {
    if (EPS..=1.0 - EPS).contains(&p) {
        -1.0 / (1.0 - p)
    } else {
        0.0
    }
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

fn check_batch(d_real: &[f64], d_fake: &[f64]) -> Result<()> {
    if d_real.is_empty() || d_real.len() != d_fake.len() {
        return Err(contract_err!(
            "decision batches must be nonempty and equal, got {} and {}",
            d_real.len(),
            d_fake.len()
        ));
    }
    Ok(())
}

/// `E[log D(x)] + E[log(1 − D(x̂))]` over per-image decisions.
pub fn gan_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_batch(d_real, d_fake)?;
    let n = d_real.len();
    Ok(mean(d_real.iter().map(|&p| clamp_prob(p).ln()), n)
        + mean(d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()), n))
}

/// Negated GAN loss, minimised by the discriminator.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    Ok(-gan_loss(d_real, d_fake)?)
}

/// Gradients of [`discriminator_loss`] with respect to each decision.
pub fn discriminator_loss_grad(d_real: &[f64], d_fake: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_batch(d_real, d_fake)?;
    let n = d_real.len() as f64;
    Ok((d_real.iter().map(|&p| -dlog(p) / n).collect(), d_fake.iter().map(|&p| -dlog1m(p) / n).collect()))
}

/// Adversarial term of the generator loss: `E[log(1 − D(x̂))]`, or
/// `−E[log D(x̂)]` in the non-saturating variant.
pub fn generator_adversarial(d_fake: &[f64], non_saturating: bool) -> f64 {
    let n = d_fake.len();
    if non_saturating {
        -mean(d_fake.iter().map(|&p| clamp_prob(p).ln()), n)
    } else {
        mean(d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()), n)
    }
}

pub fn generator_adversarial_grad(d_fake: &[f64], non_saturating: bool) -> Vec<f64> {
    let n = d_fake.len() as f64;
    d_fake.iter().map(|&p| if non_saturating { -dlog(p) / n } else { dlog1m(p) / n }).collect()
}

/// `E[log(1 − D(x̂))] + λ₁·E[|x − x̂|]`.
pub fn generator_loss<T: Real>(
    d_fake: &[f64],
    x: &ImageBatch<T>,
    x_hat: &ImageBatch<T>,
    lambda_l1: f64,
) -> Result<f64> {
    if lambda_l1.is_nan() || lambda_l1 < 0.0 {
        return Err(config_err!("lambda_l1 must be nonnegative, got {lambda_l1}"));
    }
    if d_fake.len() != x.data.batch() {
        return Err(contract_err!("{} decisions for {} images", d_fake.len(), x.data.batch()));
    }
    Ok(generator_adversarial(d_fake, false) + lambda_l1 * l1_loss(x, x_hat)?)
}

/// Per-image decisions: the mean of each score map.
pub fn decisions<T: Real>(maps: &Tensor<T>) -> Vec<f64> {
    (0..maps.batch())
        .map(|b| {
            let item = maps.item(b);
            item.iter().map(|v| v.as_f64()).sum::<f64>() / item.len() as f64
        })
        .collect()
}

/// Per-image decisions from the final pre-activations, with the sigmoid
/// taken in f64 so confident patches do not round to exactly 0 or 1.
pub fn decisions_from_logits<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    (0..logits.batch())
        .map(|b| {
            let item = logits.item(b);
            item.iter().map(|v| 1.0 / (1.0 + (-v.as_f64()).exp())).sum::<f64>() / item.len() as f64
        })
        .collect()
}

/// Spreads per-decision gradients uniformly over score maps of `shape`.
pub fn spread_decision_grad<T: Real>(grad: &[f64], shape: [usize; 4]) -> Tensor<T> {
    let mut out = Tensor::zeros(shape);
    let per = (shape[1] * shape[2] * shape[3]) as f64;
    for (b, g) in grad.iter().enumerate() {
        out.item_mut(b).fill(T::from_f64c(g / per));
    }
    out
}
