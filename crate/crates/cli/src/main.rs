//! `jscc`: train, evaluate, sweep, robustness grids, FLOPs and plots.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numerical abort, 5 missing or unreadable checkpoint.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jscc::dataio::{open_dataset, Split};
use jscc::experiments::{
    compare_methods, evaluate, method_flops, robustness_grid, save_metrics, save_outputs, save_plot, snr_sweep,
    write_flops_csv, EvalOptions, Model, ModelStore, PlotMetric,
};
use jscc::metrics::{read_metrics_csv, FeatureExtractor, LpipsExtractor};
use jscc::runspec::{Method, RunConfig, RunSpec};
use jscc::trainer::{load_codec, run_dir, runs_root, train, Manifest};
use jscc::{JsccError, Result};

#[derive(Debug, Parser)]
#[command(name = "jscc", version, about = "Deep joint source-channel coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write its run directory.
    Train(TrainArgs),
    /// Evaluate a trained model at one test SNR.
    Eval(EvalArgs),
    /// Evaluate across test SNRs; several methods also give a reconstruction grid.
    Sweep(SweepArgs),
    /// Train-SNR by test-SNR grid.
    Robustness(RobustnessArgs),
    /// Per-layer FLOPs for every method.
    Flops(FlopsArgs),
    /// Render plots from a metrics.csv.
    Plot(PlotArgs),
}

/// Run configuration: a JSON file, then `--set` overrides, then the
/// dedicated flags.
#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// g_unet, cgan or baseline.
    #[arg(long)]
    method: Option<String>,
    /// cifar10, cifar10-mini, synthetic-200, synthetic:<n>@<H>x<W> or folder:<dir>@<H>x<W>.
    #[arg(long)]
    dataset: Option<String>,
    /// Bandwidth compression ratio, e.g. 1/12.
    #[arg(long)]
    bcr: Option<String>,
    /// Training SNR in dB.
    #[arg(long = "snr-train")]
    snr_train: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    #[arg(long = "learning-rate")]
    learning_rate: Option<String>,
    #[arg(long = "lambda-mse")]
    lambda_mse: Option<String>,
    #[arg(long = "lambda-ssim")]
    lambda_ssim: Option<String>,
    #[arg(long = "lambda-l1")]
    lambda_l1: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Any configuration key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| JsccError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.apply_override(k.trim(), v.trim())?;
        }
        let flags = [
            ("method", &self.method),
            ("dataset", &self.dataset),
            ("bcr", &self.bcr),
            ("snr_train_db", &self.snr_train),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("lambda_mse", &self.lambda_mse),
            ("lambda_ssim", &self.lambda_ssim),
            ("lambda_l1", &self.lambda_l1),
            ("seed", &self.seed),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.apply_override(k, v)?;
            }
        }
        cfg.train_config()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct EvalFlags {
    /// Images taken from the start of the test split.
    #[arg(long = "n-images", default_value_t = 1000)]
    n_images: usize,
    /// Noise draws per image.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long = "eval-batch", default_value_t = 16)]
    eval_batch: usize,
    /// LPIPS weights file; the column stays empty without one.
    #[arg(long)]
    lpips: Option<PathBuf>,
}

impl EvalFlags {
    fn extractor(&self) -> Result<Option<LpipsExtractor>> {
        match &self.lpips {
            None => Ok(None),
            Some(p) => {
                let e = LpipsExtractor::load(p)?;
                if e.is_none() {
                    log::warn!("no LPIPS weights at {}; LPIPS not reported", p.display());
                }
                Ok(e)
            }
        }
    }

    fn options<'a>(&self, seed: u64, lpips: Option<&'a dyn FeatureExtractor>) -> EvalOptions<'a> {
        EvalOptions { n_images: self.n_images, seed, repeats: self.repeats, batch_size: self.eval_batch, lpips }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; defaults to <runs>/<method>/<dataset>/r<r>_snr<γ>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    eval: EvalFlags,
    /// Run directory to evaluate; defaults to the one named by the configuration.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Test SNR in dB; `inf` for a noiseless channel.
    #[arg(long = "snr-test", allow_hyphen_values = true)]
    snr_test: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    eval: EvalFlags,
    /// Comma-separated methods; more than one produces a comparison.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long = "snr-test", value_delimiter = ',', allow_hyphen_values = true, required = true)]
    snr_test: Vec<f64>,
    /// Train models that have no run directory yet.
    #[arg(long = "train-missing")]
    train_missing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RobustnessArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(long = "snr-train-list", value_delimiter = ',', allow_hyphen_values = true, required = true)]
    snr_train_list: Vec<f64>,
    #[arg(long = "snr-test", value_delimiter = ',', allow_hyphen_values = true, required = true)]
    snr_test: Vec<f64>,
    #[arg(long = "train-missing")]
    train_missing: bool,
    /// Cells trained or evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// psnr, ssim or lpips.
    #[arg(long, default_value = "psnr")]
    metric: String,
    #[arg(long)]
    title: Option<String>,
    /// Output directory; defaults to the directory holding the CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_out(verb: &str, spec: &RunSpec) -> PathBuf {
    runs_root().join(verb).join(spec.dataset.dir_name()).join(format!(
        "r{}_snr{}",
        jscc::trainer::format_param(spec.bcr_target),
        jscc::trainer::format_param(spec.snr_train_db)
    ))
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let spec = cfg.run_spec()?;
    let tc = cfg.train_config()?;
    let data = open_dataset(&spec.dataset, Split::Train)?;
    let dir = a.out.clone().unwrap_or_else(|| run_dir(&runs_root(), cfg.method, &spec));
    std::fs::create_dir_all(&dir).map_err(|e| JsccError::io(&dir, e))?;
    log::info!(
        "{} on {} ({} images), r={}, {} dB",
        cfg.method,
        data.id,
        data.len(),
        spec.dims.bcr_effective,
        spec.snr_train_db
    );
    let out = train(cfg.method, spec, tc, &data, Some(&dir))?;
    let epoch = out.log.last().map(|r| r.epoch).unwrap_or(0);
    let last: Vec<_> = out.log.iter().filter(|r| r.epoch == epoch).collect();
    if !last.is_empty() {
        let n = last.len() as f64;
        let mean = |f: &dyn Fn(&jscc::trainer::LogRow) -> f64| last.iter().map(|r| f(r)).sum::<f64>() / n;
        print!("epoch {}: l_mse {:.6} l_combined {:.6}", epoch + 1, mean(&|r| r.l_mse), mean(&|r| r.l_combined));
        if last[0].l_gen.is_some() {
            print!(
                " l_gen {:.6} l_disc {:.6}",
                mean(&|r| r.l_gen.unwrap_or(f64::NAN)),
                mean(&|r| r.l_disc.unwrap_or(f64::NAN))
            );
        }
        println!();
    }
    println!("{}", dir.display());
    Ok(())
}

fn load_model(run: Option<&Path>, method: Method, spec: &RunSpec) -> Result<Model> {
    let dir = run.map(Path::to_path_buf).unwrap_or_else(|| run_dir(&runs_root(), method, spec));
    let (m, codec): (Manifest, _) = load_codec(&dir)?;
    Ok(Model { run_id: jscc::trainer::run_id(m.method, &m.spec), method: m.method, codec })
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let spec = cfg.run_spec()?;
    let model = load_model(a.run.as_deref(), cfg.method, &spec)?;
    let data = open_dataset(&spec.dataset, Split::Test)?;
    let lp = a.eval.extractor()?;
    let opts = a.eval.options(cfg.seed, lp.as_ref().map(|e| e as &dyn FeatureExtractor));
    let report = evaluate(&model, a.snr_test, &data, &opts)?;
    println!("{report}");
    let out = a.out.clone().unwrap_or_else(|| default_out("eval", &spec));
    std::fs::create_dir_all(&out).map_err(|e| JsccError::io(&out, e))?;
    save_metrics(&out.join("metrics.csv"), &[report])
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let spec = cfg.run_spec()?;
    let methods = if a.methods.is_empty() {
        vec![cfg.method]
    } else {
        a.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?
    };
    let data = open_dataset(&spec.dataset, Split::Test)?;
    let lp = a.eval.extractor()?;
    let opts = a.eval.options(cfg.seed, lp.as_ref().map(|e| e as &dyn FeatureExtractor));
    let out = a.out.clone().unwrap_or_else(|| default_out("sweep", &spec));
    let rows = if methods.len() == 1 && (a.run.is_some() || !a.train_missing) {
        let model = load_model(a.run.as_deref(), methods[0], &spec)?;
        snr_sweep(&model, &a.snr_test, &data, &opts)?
    } else {
        let store = ModelStore { root: runs_root(), train_missing: a.train_missing, workers: 1 };
        let train_data = open_dataset(&spec.dataset, Split::Train)?;
        let cmp =
            compare_methods(&methods, &spec, &cfg.train_config()?, &a.snr_test, &train_data, &data, &store, &opts)?;
        std::fs::create_dir_all(&out).map_err(|e| JsccError::io(&out, e))?;
        let grid = out.join("reconstructions.png");
        cmp.grid.save(&grid).map_err(|e| JsccError::Contract(format!("writing {}: {e}", grid.display())))?;
        cmp.rows
    };
    for r in &rows {
        println!("{r}");
    }
    save_outputs(&out, &rows, &format!("{} at r={:.4}", spec.dataset, spec.dims.bcr_effective))?;
    println!("{}", out.display());
    Ok(())
}

fn run_robustness(a: &RobustnessArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let spec = cfg.run_spec()?;
    let train_data = open_dataset(&spec.dataset, Split::Train)?;
    let test_data = open_dataset(&spec.dataset, Split::Test)?;
    let lp = a.eval.extractor()?;
    let opts = a.eval.options(cfg.seed, lp.as_ref().map(|e| e as &dyn FeatureExtractor));
    let store = ModelStore { root: runs_root(), train_missing: a.train_missing, workers: a.workers };
    let grid = robustness_grid(
        cfg.method,
        &spec,
        &cfg.train_config()?,
        &a.snr_train_list,
        &a.snr_test,
        &train_data,
        &test_data,
        &store,
        &opts,
    )?;
    let rows: Vec<_> = grid.into_iter().flatten().collect();
    for r in &rows {
        println!("{r}");
    }
    let out = a.out.clone().unwrap_or_else(|| default_out("robustness", &spec));
    save_outputs(&out, &rows, &format!("{} trained vs tested SNR", cfg.method))?;
    println!("{}", out.display());
    Ok(())
}

fn run_flops(a: &FlopsArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let spec = cfg.run_spec()?;
    let all = [Method::GUnet, Method::Cgan, Method::Baseline]
        .into_iter()
        .map(|m| method_flops(m, &spec))
        .collect::<Result<Vec<_>>>()?;
    for m in &all {
        let parts: Vec<String> = m.networks.iter().map(|n| format!("{} {}", n.network, n.total)).collect();
        println!("{}: {} ({})", m.method, m.total, parts.join(", "));
    }
    let out = a.out.clone().unwrap_or_else(|| default_out("flops", &spec));
    std::fs::create_dir_all(&out).map_err(|e| JsccError::io(&out, e))?;
    let path = out.join("flops.csv");
    let mut buf = Vec::new();
    write_flops_csv(&mut buf, &all).expect("writing to memory");
    std::fs::write(&path, buf).map_err(|e| JsccError::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn run_plot(a: &PlotArgs) -> Result<()> {
    let metric: PlotMetric = a.metric.parse()?;
    let file = std::fs::File::open(&a.metrics).map_err(|e| JsccError::io(&a.metrics, e))?;
    let rows = read_metrics_csv(file)?;
    if rows.is_empty() {
        return Err(JsccError::Config(format!("{} has no rows", a.metrics.display())));
    }
    let out = a.out.clone().unwrap_or_else(|| a.metrics.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&out).map_err(|e| JsccError::io(&out, e))?;
    let title = a.title.clone().unwrap_or_else(|| format!("{} vs test SNR", metric.label()));
    if !save_plot(&out, &a.metric, &rows, metric, &title)? {
        return Err(JsccError::Config(format!("no finite {} values to plot", a.metric)));
    }
    println!("{}", out.join(format!("{}.svg", a.metric)).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Robustness(a) => run_robustness(a),
        Command::Flops(a) => run_flops(a),
        Command::Plot(a) => run_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
