//! Metric-versus-test-SNR line charts as SVG (with labels) and PNG (lines,
//! axes and markers only), and reconstruction grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use image::{Rgb, RgbImage};

use crate::error::{config_err, Result};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Psnr,
    Ssim,
    Lpips,
}

impl PlotMetric {
    pub fn label(self) -> &'static str {
        match self {
            PlotMetric::Psnr => "PSNR (dB)",
            PlotMetric::Ssim => "SSIM",
            PlotMetric::Lpips => "LPIPS",
        }
    }

    fn value(self, r: &MetricsReport) -> Option<f64> {
        match self {
            PlotMetric::Psnr => Some(r.psnr_db),
            PlotMetric::Ssim => Some(r.ssim),
            PlotMetric::Lpips => r.lpips,
        }
    }
}

impl std::str::FromStr for PlotMetric {
    type Err = crate::error::JsccError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(PlotMetric::Psnr),
            "ssim" => Ok(PlotMetric::Ssim),
            "lpips" => Ok(PlotMetric::Lpips),
            _ => Err(config_err!("unknown metric {s:?}; expected psnr, ssim or lpips")),
        }
    }
}

/// One line of the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Groups rows by (method, training SNR) into series over finite test SNRs.
pub fn series(rows: &[MetricsReport], metric: PlotMetric) -> Vec<Series> {
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = metric.value(r) {
            if r.snr_test_db.is_finite() && v.is_finite() {
                let key = (r.method.clone(), format!("{}", r.snr_train_db));
                groups.entry(key).or_default().push((r.snr_test_db, v));
            }
        }
    }
    groups
        .into_iter()
        .map(|((method, snr), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label: format!("{method} (train {snr} dB)"), points }
        })
        .collect()
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLOURS: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(series: &[Series]) -> Result<Self> {
        let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
        if pts.is_empty() {
            return Err(config_err!("nothing to plot: no finite metric values"));
        }
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1 - x0 < 1e-9 {
            x0 -= 1.0;
            x1 += 1.0;
        }
        let pad = ((y1 - y0) * 0.05).max(1e-3);
        Ok(Frame { x0, x1, y0: y0 - pad, y1: y1 + pad })
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Deterministic SVG text for the given series.
pub fn render_svg(series: &[Series], metric: PlotMetric, title: &str) -> Result<String> {
    let f = Frame::new(series)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        escape(title)
    );
    let (bx, by) = (f.py(f.y0), f.px(f.x0));
    let _ = writeln!(
        s,
        r#"<polyline points="{by:.2},{:.2} {by:.2},{bx:.2} {:.2},{bx:.2}" fill="none" stroke="black"/>"#,
        f.py(f.y1),
        f.px(f.x1)
    );
    for t in ticks(f.x0, f.x1, 5) {
        let x = f.px(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{bx:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, bx + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text>"#, bx + 18.0);
    }
    for t in ticks(f.y0, f.y1, 5) {
        let y = f.py(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{by:.2}" y2="{y:.2}" stroke="black"/>"#, by - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.3}</text>"#, by - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Test SNR (dB)</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (H - BOTTOM + TOP) / 2.0,
        (H - BOTTOM + TOP) / 2.0,
        metric.label()
    );
    for (i, ser) in series.iter().enumerate() {
        let [r, g, b] = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="rgb({r},{g},{b})" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="rgb({r},{g},{b})"/>"#, f.px(x), f.py(y));
        }
        let ly = TOP + 20.0 * i as f64 + 10.0;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="rgb({r},{g},{b})" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 25.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), colour: Rgb<u8>, width: i64) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = ((x0 + (x1 - x0) * t).round() as i64, (y0 + (y1 - y0) * t).round() as i64);
        for dy in -(width / 2)..=(width / 2) {
            for dx in -(width / 2)..=(width / 2) {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                    img.put_pixel(px as u32, py as u32, colour);
                }
            }
        }
    }
}

/// Raster counterpart of [`render_svg`] with the same geometry; the legend is
/// drawn as colour swatches in series order.
pub fn render_png(series: &[Series]) -> Result<RgbImage> {
    let f = Frame::new(series)?;
    let mut img = RgbImage::from_pixel(W as u32, H as u32, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let (bx, by) = (f.py(f.y0), f.px(f.x0));
    draw_line(&mut img, (by, f.py(f.y1)), (by, bx), black, 1);
    draw_line(&mut img, (by, bx), (f.px(f.x1), bx), black, 1);
    for t in ticks(f.x0, f.x1, 5) {
        draw_line(&mut img, (f.px(t), bx), (f.px(t), bx + 5.0), black, 1);
    }
    for t in ticks(f.y0, f.y1, 5) {
        draw_line(&mut img, (by - 5.0, f.py(t)), (by, f.py(t)), black, 1);
    }
    for (i, ser) in series.iter().enumerate() {
        let c = Rgb(COLOURS[i % COLOURS.len()]);
        for w in ser.points.windows(2) {
            draw_line(&mut img, (f.px(w[0].0), f.py(w[0].1)), (f.px(w[1].0), f.py(w[1].1)), c, 2);
        }
        for &(x, y) in &ser.points {
            draw_line(&mut img, (f.px(x), f.py(y)), (f.px(x), f.py(y)), c, 6);
        }
        let ly = TOP + 20.0 * i as f64 + 10.0;
        let lx = W - RIGHT + 15.0;
        draw_line(&mut img, (lx, ly), (lx + 20.0, ly), c, 3);
    }
    Ok(img)
}

/// Tiles equally sized images into rows with a 2-pixel white gutter.
pub fn image_grid(rows: &[Vec<RgbImage>]) -> Result<RgbImage> {
    let first = rows.iter().flat_map(|r| r.first()).next().ok_or_else(|| config_err!("empty image grid"))?;
    let (tw, th) = first.dimensions();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let gap = 2;
    let mut out =
        RgbImage::from_pixel(cols * (tw + gap) + gap, rows.len() as u32 * (th + gap) + gap, Rgb([255, 255, 255]));
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            if tile.dimensions() != (tw, th) {
                return Err(config_err!("grid tiles differ in size"));
            }
            image::imageops::replace(
                &mut out,
                tile,
                (gap + c as u32 * (tw + gap)) as i64,
                (gap + r as u32 * (th + gap)) as i64,
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, train: f64, test: f64, psnr: f64) -> MetricsReport {
        MetricsReport {
            run_id: "x".into(),
            method: method.into(),
            dataset: "d".into(),
            bcr: 0.5,
            snr_train_db: train,
            snr_test_db: test,
            psnr_db: psnr,
            ssim: 0.5,
            lpips: None,
            n_images: 1,
        }
    }

    #[test]
    fn series_per_method_and_train_snr() {
        let rows = vec![
            row("g_unet", 10.0, 5.0, 20.0),
            row("g_unet", 10.0, 1.0, 18.0),
            row("baseline", 10.0, 1.0, 17.0),
            row("baseline", 10.0, f64::INFINITY, 25.0),
        ];
        let s = series(&rows, PlotMetric::Psnr);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].points, vec![(1.0, 18.0), (5.0, 20.0)]);
        assert!(series(&rows, PlotMetric::Lpips).is_empty());
        let a = render_svg(&s, PlotMetric::Psnr, "t").unwrap();
        assert_eq!(a, render_svg(&s, PlotMetric::Psnr, "t").unwrap());
        assert_eq!(a.matches("<polyline").count(), 3);
        assert!(render_svg(&[], PlotMetric::Psnr, "t").is_err());
        assert_eq!(render_png(&s).unwrap().dimensions(), (640, 420));
    }

    #[test]
    fn grid_layout() {
        let tile = RgbImage::from_pixel(4, 4, Rgb([9, 9, 9]));
        let g = image_grid(&[vec![tile.clone(), tile.clone()], vec![tile.clone(), tile]]).unwrap();
        assert_eq!(g.dimensions(), (2 * 6 + 2, 2 * 6 + 2));
        assert_eq!(g.get_pixel(2, 2), &Rgb([9, 9, 9]));
        assert_eq!(g.get_pixel(0, 0), &Rgb([255, 255, 255]));
    }
}
