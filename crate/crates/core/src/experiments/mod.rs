//! Evaluation runs: single-SNR evaluation, paired SNR sweeps, the
//! train/test SNR robustness grid, method comparison, FLOPs and plots.
//!
//! All noise at evaluation time comes from `stream(seed, "eval/<repeat>")`,
//! drawn image by image, so every model and every test SNR sees the same
//! standard-normal draws scaled by its own σ.

mod flops;
mod plot;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{GrayImage, RgbImage};

pub use flops::{flops_report, method_flops, write_flops_csv, FlopsLayerEntry, FlopsReport, MethodFlops};
pub use plot::{image_grid, render_png, render_svg, series, PlotMetric, Series};

use crate::batch::ImageBatch;
use crate::dataio::Dataset;
use crate::error::{config_err, contract_err, JsccError, Result};
use crate::metrics::{
    perceptual_distance, psnr_per_image, ssim_metric, write_metrics_csv, FeatureExtractor, MetricsReport, SsimParams,
};
use crate::model::Codec;
use crate::rng::stream;
use crate::runspec::{snr_to_noise_variance, Method, RunSpec, TrainConfig};
use crate::trainer::{load_codec_for, read_manifest, run_dir, run_id, train, TrainState};

/// A trained encoder/decoder pair ready for evaluation.
#[derive(Debug, Clone)]
pub struct Model {
    pub run_id: String,
    pub method: Method,
    pub codec: Codec<f32>,
}

impl Model {
    pub fn from_state(state: &TrainState) -> Self {
        Model { run_id: run_id(state.method, &state.spec), method: state.method, codec: state.codec.clone() }
    }

    /// Loads a run directory, requiring the geometry of `expected`.
    pub fn load(dir: &Path, expected: &RunSpec) -> Result<Self> {
        let (m, codec) = load_codec_for(dir, expected)?;
        Ok(Model { run_id: run_id(m.method, &m.spec), method: m.method, codec })
    }
}

#[derive(Clone, Copy)]
pub struct EvalOptions<'a> {
    /// Evaluates the first `n_images` test images (or all, if fewer).
    pub n_images: usize,
    pub seed: u64,
    /// Independent noise draws per image; metrics are averaged over them.
    pub repeats: usize,
    pub batch_size: usize,
    pub lpips: Option<&'a dyn FeatureExtractor>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions { n_images: 1000, seed: 0, repeats: 1, batch_size: 16, lpips: None }
    }
}

impl std::fmt::Debug for EvalOptions<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvalOptions")
            .field("n_images", &self.n_images)
            .field("seed", &self.seed)
            .field("repeats", &self.repeats)
            .field("batch_size", &self.batch_size)
            .field("lpips", &self.lpips.is_some())
            .finish()
    }
}

/// Noise variance for a test SNR; `+∞` dB means a noiseless channel.
pub fn eval_noise_variance(snr_test_db: f64) -> Result<f64> {
    if snr_test_db == f64::INFINITY {
        Ok(0.0)
    } else {
        snr_to_noise_variance(snr_test_db)
    }
}

/// Mean per-image PSNR, SSIM (pixel range) and optional LPIPS over the test
/// subset, with reconstructions taken back to the 0..255 scale.
pub fn evaluate(model: &Model, snr_test_db: f64, data: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    let spec = &model.codec.spec;
    let want = (spec.image_height, spec.image_width, spec.image_channels);
    if data.geometry() != want {
        return Err(contract_err!(
            "model {} expects {want:?} images, dataset {} has {:?}",
            model.run_id,
            data.id,
            data.geometry()
        ));
    }
    if opts.n_images == 0 || opts.repeats == 0 || opts.batch_size == 0 {
        return Err(config_err!("evaluation needs at least one image, repeat and batch item"));
    }
    let n = opts.n_images.min(data.len());
    if n == 0 {
        return Err(JsccError::Ingestion(format!("dataset {} has no test images", data.id)));
    }
    let var = eval_noise_variance(snr_test_db)?;
    let pixel = SsimParams::pixel();
    let (mut psnr_sum, mut ssim_sum, mut lpips_sum) = (0.0, 0.0, 0.0);
    for rep in 0..opts.repeats {
        let mut rng = stream(opts.seed, &format!("eval/{rep}"));
        let indices: Vec<usize> = (0..n).collect();
        for chunk in indices.chunks(opts.batch_size) {
            let x = data.batch::<f32>(chunk)?;
            let y = model.codec.transmit(&x, var, &mut rng)?.to_pixel();
            psnr_sum += psnr_per_image(&x, &y)?.iter().sum::<f64>();
            ssim_sum += ssim_metric(&x, &y, &pixel)? * chunk.len() as f64;
            if let Some(d) = perceptual_distance(&x, &y, opts.lpips)? {
                lpips_sum += d * chunk.len() as f64;
            }
        }
    }
    let total = (n * opts.repeats) as f64;
    Ok(MetricsReport {
        run_id: model.run_id.clone(),
        method: model.method.to_string(),
        dataset: spec.dataset.to_string(),
        bcr: spec.dims.bcr_effective,
        snr_train_db: spec.snr_train_db,
        snr_test_db,
        psnr_db: psnr_sum / total,
        ssim: ssim_sum / total,
        lpips: opts.lpips.map(|_| lpips_sum / total),
        n_images: n,
    })
}

/// One report per test SNR, all on the same images and noise draws.
pub fn snr_sweep(model: &Model, snr_test: &[f64], data: &Dataset, opts: &EvalOptions) -> Result<Vec<MetricsReport>> {
    if snr_test.is_empty() {
        return Err(config_err!("empty test SNR list"));
    }
    snr_test.iter().map(|&s| evaluate(model, s, data, opts)).collect()
}

/// Maps `f` over `items` on up to `workers` threads, keeping input order.
fn parallel_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> Result<O> + Sync) -> Result<Vec<O>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<O>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Where trained models live and what to do when one is absent.
#[derive(Debug, Clone)]
pub struct ModelStore {
    pub root: PathBuf,
    /// Train absent cells instead of failing.
    pub train_missing: bool,
    /// Threads used to train or evaluate independent cells.
    pub workers: usize,
}

impl ModelStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ModelStore { root: root.into(), train_missing: false, workers: 1 }
    }

    fn has(&self, method: Method, spec: &RunSpec) -> bool {
        read_manifest(&run_dir(&self.root, method, spec)).is_ok()
    }

    /// Loads every requested cell, training absent ones when allowed. Fails
    /// with the full list of absent cells otherwise.
    pub fn obtain(&self, cells: &[(Method, RunSpec)], cfg: &TrainConfig, train_data: &Dataset) -> Result<Vec<Model>> {
        let missing: Vec<&(Method, RunSpec)> = cells.iter().filter(|(m, s)| !self.has(*m, s)).collect();
        if !missing.is_empty() {
            if !self.train_missing {
                return Err(JsccError::MissingCells(missing.iter().map(|(m, s)| run_id(*m, s)).collect()));
            }
            parallel_map(&missing, self.workers, |(m, s)| {
                let dir = run_dir(&self.root, *m, s);
                std::fs::create_dir_all(&dir).map_err(|e| JsccError::io(&dir, e))?;
                ::log::info!("training {}", run_id(*m, s));
                train(*m, s.clone(), cfg.clone(), train_data, Some(&dir)).map(|_| ())
            })?;
        }
        cells.iter().map(|(m, s)| Model::load(&run_dir(&self.root, *m, s), s)).collect()
    }
}

/// `|snr_train| × |snr_test|` reports; row `i` is the model trained at
/// `snr_train[i]`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_grid(
    method: Method,
    spec: &RunSpec,
    cfg: &TrainConfig,
    snr_train: &[f64],
    snr_test: &[f64],
    train_data: &Dataset,
    test_data: &Dataset,
    store: &ModelStore,
    opts: &EvalOptions,
) -> Result<Vec<Vec<MetricsReport>>> {
    if snr_train.is_empty() || snr_test.is_empty() {
        return Err(config_err!("robustness grid needs at least one training and one test SNR"));
    }
    let cells: Vec<(Method, RunSpec)> = snr_train.iter().map(|&s| (method, spec.at_snr(s))).collect();
    let models = store.obtain(&cells, cfg, train_data)?;
    parallel_map(&models, store.workers, |m| snr_sweep(m, snr_test, test_data, opts))
}

/// Side-by-side results of several methods under one RunSpec.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<MetricsReport>,
    /// Originals first, then one row of reconstructions per method.
    pub grid: RgbImage,
}

/// Number of sample columns in a reconstruction grid.
pub const GRID_SAMPLES: usize = 8;

fn to_tiles(batch: &ImageBatch<f32>) -> Result<Vec<RgbImage>> {
    let [_, h, w, c] = batch.shape();
    batch
        .to_u8()
        .into_iter()
        .map(|px| match c {
            3 => RgbImage::from_raw(w as u32, h as u32, px),
            1 => GrayImage::from_raw(w as u32, h as u32, px).map(|g| image::DynamicImage::ImageLuma8(g).to_rgb8()),
            _ => None,
        })
        .map(|t| t.ok_or_else(|| config_err!("cannot render {c}-channel images")))
        .collect()
}

/// Evaluates every method across `snr_test` and renders reconstructions of the
/// first test images at the RunSpec's training SNR.
#[allow(clippy::too_many_arguments)]
pub fn compare_methods(
    methods: &[Method],
    spec: &RunSpec,
    cfg: &TrainConfig,
    snr_test: &[f64],
    train_data: &Dataset,
    test_data: &Dataset,
    store: &ModelStore,
    opts: &EvalOptions,
) -> Result<Comparison> {
    if methods.is_empty() {
        return Err(config_err!("no methods to compare"));
    }
    let cells: Vec<(Method, RunSpec)> = methods.iter().map(|&m| (m, spec.clone())).collect();
    let models = store.obtain(&cells, cfg, train_data)?;
    let per_model = parallel_map(&models, store.workers, |m| snr_sweep(m, snr_test, test_data, opts))?;

    let shown: Vec<usize> = (0..GRID_SAMPLES.min(test_data.len())).collect();
    let x = test_data.batch::<f32>(&shown)?;
    let var = eval_noise_variance(spec.snr_train_db)?;
    let mut rows = vec![to_tiles(&x)?];
    for m in &models {
        let mut rng = stream(opts.seed, "eval/0");
        rows.push(to_tiles(&m.codec.transmit(&x, var, &mut rng)?.to_pixel())?);
    }
    Ok(Comparison { rows: per_model.into_iter().flatten().collect(), grid: image_grid(&rows)? })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| JsccError::io(path, e))
}

/// Writes `metrics.csv`.
pub fn save_metrics(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, rows)?;
    write_file(path, &buf)
}

/// Writes `<stem>.svg` and `<stem>.png` for one metric. Returns false (and
/// writes nothing) when no row has a finite value for it.
pub fn save_plot(dir: &Path, stem: &str, rows: &[MetricsReport], metric: PlotMetric, title: &str) -> Result<bool> {
    let s = series(rows, metric);
    if s.is_empty() {
        return Ok(false);
    }
    write_file(&dir.join(format!("{stem}.svg")), render_svg(&s, metric, title)?.as_bytes())?;
    let png = dir.join(format!("{stem}.png"));
    render_png(&s)?.save(&png).map_err(|e| JsccError::Contract(format!("writing {}: {e}", png.display())))?;
    Ok(true)
}

/// `metrics.csv` plus PSNR, SSIM and (when present) LPIPS plots in `dir`.
pub fn save_outputs(dir: &Path, rows: &[MetricsReport], title: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| JsccError::io(dir, e))?;
    save_metrics(&dir.join("metrics.csv"), rows)?;
    for (stem, metric) in [("psnr", PlotMetric::Psnr), ("ssim", PlotMetric::Ssim), ("lpips", PlotMetric::Lpips)] {
        save_plot(dir, stem, rows, metric, title)?;
    }
    Ok(())
}
