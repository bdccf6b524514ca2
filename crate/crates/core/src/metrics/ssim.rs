//! Gaussian-windowed SSIM with an analytic gradient.
//!
//! Statistics are taken over every fully contained window ("valid"
//! filtering), per colour channel; the reported value is the mean over
//! windows, channels and batch items.

use serde::{Deserialize, Serialize};

use crate::batch::{check_pair, ImageBatch};
use crate::error::{contract_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Defaults to `C2 / 2` when absent.
    pub c3: Option<f64>,
    pub window_size: usize,
    pub window_sigma: f64,
    pub dynamic_range: f64,
}

impl SsimParams {
    /// 11×11 Gaussian window, σ = 1.5, unit exponents, K1 = 0.01, K2 = 0.03.
    pub fn with_range(dynamic_range: f64) -> Self {
        SsimParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k1: 0.01,
            k2: 0.03,
            c3: None,
            window_size: 11,
            window_sigma: 1.5,
            dynamic_range,
        }
    }

    pub fn unit() -> Self {
        Self::with_range(1.0)
    }

    pub fn pixel() -> Self {
        Self::with_range(255.0)
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c3.unwrap_or(self.c2() / 2.0)
    }

    /// Unit exponents with `C3 = C2/2`, where contrast·structure collapses to
    /// `(2σxy + C2)/(σx² + σy² + C2)`.
    pub fn is_standard(&self) -> bool {
        self.alpha == 1.0 && self.beta == 1.0 && self.gamma == 1.0 && self.c3() == self.c2() / 2.0
    }

    /// Normalised 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let n = self.window_size;
        let mid = (n as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..n)
            .map(|i| {
                let d = i as f64 - mid;
                (-d * d / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.window_size == 0
            || self.window_sigma.is_nan()
            || self.window_sigma <= 0.0
            || self.dynamic_range.is_nan()
            || self.dynamic_range <= 0.0
        {
            return Err(contract_err!("invalid SSIM parameters {self:?}"));
        }
        if h < self.window_size || w < self.window_size {
            return Err(contract_err!("SSIM needs images of at least {0}x{0}, got {h}x{w}", self.window_size));
        }
        Ok(())
    }
}

/// Valid separable correlation of an `h×w` plane with `taps ⊗ taps`.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, &t) in taps.iter().enumerate() {
            let src = &horiz[(y + i) * ow..(y + i + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an `oh×ow` map back onto `h×w`.
fn filter_valid_adjoint(map: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut vert = vec![0.0; h * ow];
    for y in 0..oh {
        for (i, &t) in taps.iter().enumerate() {
            let dst = &mut vert[(y + i) * ow..(y + i + 1) * ow];
            for (d, &v) in dst.iter_mut().zip(&map[y * ow..(y + 1) * ow]) {
                *d += t * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = vert[y * ow + x];
            for (j, &t) in taps.iter().enumerate() {
                out[y * w + x + j] += t * v;
            }
        }
    }
    out
}

/// Per-window statistics of one channel plane pair.
struct PlaneStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn plane_stats(x: &[f64], y: &[f64], h: usize, w: usize, taps: &[f64]) -> PlaneStats {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, h, w, taps);
    let mu_y = filter_valid(y, h, w, taps);
    let exx = filter_valid(&xx, h, w, taps);
    let eyy = filter_valid(&yy, h, w, taps);
    let exy = filter_valid(&xy, h, w, taps);
    let var_x = exx.iter().zip(&mu_x).map(|(e, m)| e - m * m).collect();
    let var_y = eyy.iter().zip(&mu_y).map(|(e, m)| e - m * m).collect();
    let cov = exy.iter().zip(mu_x.iter().zip(&mu_y)).map(|(e, (a, b))| e - a * b).collect();
    PlaneStats { mu_x, mu_y, var_x, var_y, cov }
}

/// SSIM of one window from its statistics.
pub fn ssim_from_stats(mu_x: f64, mu_y: f64, var_x: f64, var_y: f64, cov: f64, p: &SsimParams) -> f64 {
    let (c1, c2, c3) = (p.c1(), p.c2(), p.c3());
    let lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1);
    if p.is_standard() {
        return lum * (2.0 * cov + c2) / (var_x + var_y + c2);
    }
    let sx = var_x.max(0.0).sqrt();
    let sy = var_y.max(0.0).sqrt();
    let con = (2.0 * sx * sy + c2) / (var_x + var_y + c2);
    let st = (cov + c3) / (sx * sy + c3);
    lum.powf(p.alpha) * con.powf(p.beta) * st.powf(p.gamma)
}

fn planes<T: Real>(t: &Tensor<T>, b: usize, ch: usize) -> Vec<f64> {
    let c = t.shape()[3];
    t.item(b).iter().skip(ch).step_by(c).map(|v| v.as_f64()).collect()
}

/// Mean SSIM over windows, channels and batch items.
pub fn ssim_metric<T: Real>(x: &ImageBatch<T>, y: &ImageBatch<T>, params: &SsimParams) -> Result<f64> {
    check_pair(x, y, None)?;
    let [b, h, w, c] = x.shape();
    params.validate(h, w)?;
    let taps = params.taps();
    let mut total = 0.0;
    for i in 0..b {
        for ch in 0..c {
            let px = planes(&x.data, i, ch);
            let py = planes(&y.data, i, ch);
            let s = plane_stats(&px, &py, h, w, &taps);
            let n = s.mu_x.len();
            let sum: f64 =
                (0..n).map(|k| ssim_from_stats(s.mu_x[k], s.mu_y[k], s.var_x[k], s.var_y[k], s.cov[k], params)).sum();
            total += sum / n as f64;
        }
    }
    Ok(total / (b * c) as f64)
}

/// Mean SSIM and its gradient with respect to `y` (standard parameters only).
pub fn ssim_with_grad<T: Real>(x: &ImageBatch<T>, y: &ImageBatch<T>, params: &SsimParams) -> Result<(f64, Tensor<T>)> {
    check_pair(x, y, None)?;
    if !params.is_standard() {
        return Err(contract_err!("SSIM gradient requires unit exponents and C3 = C2/2"));
    }
    let [b, h, w, c] = x.shape();
    params.validate(h, w)?;
    let taps = params.taps();
    let (c1, c2) = (params.c1(), params.c2());
    let norm = (b * c) as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..b {
        for ch in 0..c {
            let px = planes(&x.data, i, ch);
            let py = planes(&y.data, i, ch);
            let s = plane_stats(&px, &py, h, w, &taps);
            let n = s.mu_x.len();
            let weight = 1.0 / (n as f64 * norm);
            let mut g_mu = vec![0.0; n];
            let mut g_eyy = vec![0.0; n];
            let mut g_exy = vec![0.0; n];
            let mut sum = 0.0;
            for k in 0..n {
                let (mx, my) = (s.mu_x[k], s.mu_y[k]);
                let a1 = 2.0 * mx * my + c1;
                let b1 = mx * mx + my * my + c1;
                let a2 = 2.0 * s.cov[k] + c2;
                let b2 = s.var_x[k] + s.var_y[k] + c2;
                let v = a1 * a2 / (b1 * b2);
                sum += v;
                // Partials with respect to μy, E[y²], E[xy].
                g_mu[k] = weight * v * (2.0 * mx / a1 - 2.0 * my / b1 - 2.0 * mx / a2 + 2.0 * my / b2);
                g_eyy[k] = -weight * v / b2;
                g_exy[k] = weight * 2.0 * v / a2;
            }
            total += sum / n as f64;
            let t_mu = filter_valid_adjoint(&g_mu, h, w, &taps);
            let t_yy = filter_valid_adjoint(&g_eyy, h, w, &taps);
            let t_xy = filter_valid_adjoint(&g_exy, h, w, &taps);
            let item = grad.item_mut(i);
            for p in 0..h * w {
                let gv = t_mu[p] + 2.0 * py[p] * t_yy[p] + px[p] * t_xy[p];
                item[p * c + ch] = T::from_f64c(gv);
            }
        }
    }
    Ok((total / norm, grad))
}
