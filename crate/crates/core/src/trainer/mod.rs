//! Joint training of the encoder and decoder (G-UNet and baseline) and the
//! two-stage adversarial procedure (cGAN).
//!
//! Each cGAN minibatch runs one forward pass, then three updates in order:
//! (i) encoder and generator descend the MSE, (ii) the generator descends the
//! adversarial + L1 loss, (iii) the discriminator descends its loss on a fresh
//! reconstruction from the updated generator.

mod checkpoint;
mod log;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

pub use checkpoint::{load_codec, load_codec_for, load_state, read_manifest, save_checkpoint, LastLosses, Manifest};
pub use log::{epoch_means, save_log, write_log, LogRow, LOG_HEADER};

use crate::batch::ImageBatch;
use crate::dataio::{Dataset, Order};
use crate::error::{contract_err, JsccError, Result};
use crate::losses::{
    combined_with_grad, decisions_from_logits, discriminator_loss, discriminator_loss_grad, gan_loss,
    generator_adversarial, generator_adversarial_grad, l1_with_grad, mse_with_grad, spread_decision_grad, ssim_loss,
    LossBundle,
};
use crate::metrics::SsimParams;
use crate::model::{method_specs, Codec, PipelineTape};
use crate::nets::{build_discriminator, Network, Tape};
use crate::optim::Adam;
use crate::rng::{stream, StreamRng};
use crate::runspec::{Method, RunSpec, TrainConfig};
use crate::tensor::Tensor;

/// Consecutive steps of an extreme mean `D(x)` before warning.
pub const COLLAPSE_STEPS: usize = 500;

static DISCRIMINATOR_FORWARDS: AtomicU64 = AtomicU64::new(0);

/// Number of discriminator forward passes run by this process so far.
pub fn discriminator_forwards() -> u64 {
    DISCRIMINATOR_FORWARDS.load(Ordering::Relaxed)
}

fn discriminate(d: &Network<f32>, images_px: &Tensor<f32>) -> Result<Tape<f32>> {
    DISCRIMINATOR_FORWARDS.fetch_add(1, Ordering::Relaxed);
    d.forward(images_px)
}

/// Snapshot comparisons taken around the cGAN updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingCheck {
    /// φ_D identical before and after update (i).
    pub disc_fixed_in_i: bool,
    /// φ_D identical before and after update (ii).
    pub disc_fixed_in_ii: bool,
    /// θ and φ_G identical before and after update (iii).
    pub codec_fixed_in_iii: bool,
}

impl RoutingCheck {
    pub fn holds(&self) -> bool {
        self.disc_fixed_in_i && self.disc_fixed_in_ii && self.codec_fixed_in_iii
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub losses: LossBundle,
    /// Batch mean of D(x).
    pub d_real: Option<f64>,
    /// Batch mean of D(x̂) before update (ii).
    pub d_fake: Option<f64>,
    /// Batch mean of D(x̂) from the generator after update (ii).
    pub d_fake_post: Option<f64>,
    pub routing: Option<RoutingCheck>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub method: Method,
    pub spec: RunSpec,
    pub cfg: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Minibatches done in the current epoch.
    pub batch_in_epoch: usize,
    pub step: u64,
    pub codec: Codec<f32>,
    pub discriminator: Option<Network<f32>>,
    pub opt_encoder: Adam,
    pub opt_decoder: Adam,
    pub opt_discriminator: Option<Adam>,
    pub channel_rng: StreamRng,
    /// Run updates (ii) and (iii); only meaningful for cGAN.
    pub adversarial: bool,
    /// Compare parameter snapshots around each cGAN update.
    pub verify_routing: bool,
    pub ssim: SsimParams,
    collapse_run: usize,
}

fn check_finite(step: u64, losses: &LossBundle, grads: &[(&str, &[f32])]) -> Result<()> {
    let bad_grad = grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite()));
    let values = [losses.l_mse, losses.l_combined, losses.l_gen, losses.l_disc, losses.l_l1];
    if bad_grad || values.iter().any(|v| !v.is_finite()) {
        let norms: Vec<String> = grads
            .iter()
            .map(|(name, g)| {
                let n: f64 = g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
                format!("|grad {name}| = {n}")
            })
            .collect();
        return Err(JsccError::Numerical(format!(
            "training diverged at step {step}: {losses:?}; {}",
            norms.join(", ")
        )));
    }
    Ok(())
}

impl TrainState {
    /// Fresh parameters and optimizers. Each network is initialised from its
    /// own labelled stream, so all methods sharing a seed start from the same
    /// encoder and see the same channel noise.
    pub fn init(method: Method, spec: RunSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (enc_spec, dec_spec) = method_specs(method, &spec)?;
        let encoder = Network::new(enc_spec, &mut stream(cfg.seed, "init/encoder"))?;
        let decoder = Network::new(dec_spec, &mut stream(cfg.seed, "init/decoder"))?;
        let discriminator = match method {
            Method::Cgan => Some(Network::new(
                build_discriminator((spec.image_height, spec.image_width, spec.image_channels))?,
                &mut stream(cfg.seed, "init/discriminator"),
            )?),
            _ => None,
        };
        Self::assemble(method, spec, cfg, encoder, decoder, discriminator)
    }

    /// Builds a state around given networks, for tiny geometries that the
    /// standard builders reject.
    pub fn assemble(
        method: Method,
        spec: RunSpec,
        cfg: TrainConfig,
        encoder: Network<f32>,
        decoder: Network<f32>,
        discriminator: Option<Network<f32>>,
    ) -> Result<Self> {
        if (method == Method::Cgan) != discriminator.is_some() {
            return Err(contract_err!("a discriminator is required by cgan and only by cgan"));
        }
        let lr = cfg.learning_rate;
        let opt_encoder = Adam::new(encoder.num_params(), lr);
        let opt_decoder = Adam::new(decoder.num_params(), lr);
        let opt_discriminator = discriminator.as_ref().map(|d| Adam::new(d.num_params(), lr));
        let channel_rng = stream(cfg.seed, "channel");
        Ok(TrainState {
            method,
            codec: Codec::new(spec.clone(), encoder, decoder)?,
            spec,
            cfg,
            epoch: 0,
            batch_in_epoch: 0,
            step: 0,
            discriminator,
            opt_encoder,
            opt_decoder,
            opt_discriminator,
            channel_rng,
            adversarial: true,
            verify_routing: false,
            ssim: SsimParams::unit(),
            collapse_run: 0,
        })
    }

    /// Loss weights of the reconstruction objective. The baseline and the
    /// cGAN outer stage train on plain MSE.
    pub fn reconstruction_weights(&self) -> (f64, f64) {
        match self.method {
            Method::GUnet => (self.cfg.lambda_mse, self.cfg.lambda_ssim),
            Method::Baseline | Method::Cgan => (1.0, 0.0),
        }
    }

    /// One minibatch of pixel-scale images.
    pub fn train_step(&mut self, x: &ImageBatch<f32>) -> Result<StepRecord> {
        let tape = self.codec.forward(x, self.spec.noise_variance(), &mut self.channel_rng)?;
        let record = match self.method {
            Method::GUnet | Method::Baseline => self.joint_step(x, &tape)?,
            Method::Cgan => self.cgan_step(x, &tape)?,
        };
        self.step += 1;
        Ok(record)
    }

    fn logged_ssim(&self, xu: &ImageBatch<f32>, recon: &ImageBatch<f32>, computed: Option<f64>) -> Result<f64> {
        match computed {
            Some(v) => Ok(v),
            None if xu.shape()[1] >= self.ssim.window_size && xu.shape()[2] >= self.ssim.window_size => {
                ssim_loss(xu, recon)
            }
            None => Ok(f64::NAN),
        }
    }

    fn joint_step(&mut self, x: &ImageBatch<f32>, tape: &PipelineTape<f32>) -> Result<StepRecord> {
        let xu = x.to_unit();
        let recon = tape.reconstruction();
        let (lm, ls) = self.reconstruction_weights();
        let (value, grad) = combined_with_grad(&xu, &recon, lm, ls, &self.ssim)?;
        let (g_enc, g_dec) = self.codec.backward(tape, &grad)?;
        let losses = LossBundle {
            l_mse: value.mse,
            l_ssim: self.logged_ssim(&xu, &recon, value.ssim)?,
            l_combined: value.combined,
            ..LossBundle::default()
        };
        check_finite(self.step, &losses, &[("encoder", &g_enc), ("decoder", &g_dec)])?;
        self.opt_encoder.update(self.codec.encoder.params_mut(), &g_enc)?;
        self.opt_decoder.update(self.codec.decoder.params_mut(), &g_dec)?;
        Ok(StepRecord { losses, d_real: None, d_fake: None, d_fake_post: None, routing: None })
    }

    fn cgan_step(&mut self, x: &ImageBatch<f32>, tape: &PipelineTape<f32>) -> Result<StepRecord> {
        let xu = x.to_unit();
        let recon = tape.reconstruction();
        let (mse, g_mse) = mse_with_grad(&xu, &recon)?;
        let (g_enc, g_gen_outer) = self.codec.backward(tape, &g_mse)?;
        let mut losses = LossBundle {
            l_mse: mse,
            l_ssim: self.logged_ssim(&xu, &recon, None)?,
            l_combined: mse,
            ..LossBundle::default()
        };
        let ns = self.cfg.non_saturating;
        let lambda_l1 = self.cfg.lambda_l1;

        // Gradients of the generator loss, from the same forward pass.
        let mut adversarial = None;
        if self.adversarial {
            let d = self.discriminator.as_ref().expect("cgan has a discriminator");
            let real_tape = discriminate(d, &x.to_pixel().data)?;
            let fake_tape = discriminate(d, &recon.to_pixel().data)?;
            let d_real = decisions_from_logits(real_tape.logits());
            let d_fake = decisions_from_logits(fake_tape.logits());
            let g_dec = generator_adversarial_grad(&d_fake, ns);
            let g_map = spread_decision_grad(&g_dec, fake_tape.output().shape());
            let (_, g_px) = d.backward(&fake_tape, &g_map)?;
            // D reads pixels, x̂_px = 255·x̂.
            let mut g_recon = g_px.scale(255.0);
            let (l1, g_l1) = l1_with_grad(&xu, &recon)?;
            g_recon.add_assign(&g_l1.scale(lambda_l1 as f32));
            let (g_gen_adv, _) = self.codec.decoder.backward(&tape.decoder, &g_recon)?;
            losses.l_l1 = lambda_l1 * l1;
            losses.l_gen = generator_adversarial(&d_fake, ns) + losses.l_l1;
            losses.l_gan = gan_loss(&d_real, &d_fake)?;
            adversarial = Some((real_tape, d_real, d_fake, g_gen_adv));
        }
        let g_gen_adv: &[f32] = adversarial.as_ref().map_or(&[], |a| &a.3);
        check_finite(
            self.step,
            &losses,
            &[("encoder", &g_enc), ("generator", &g_gen_outer), ("generator/adversarial", g_gen_adv)],
        )?;

        let d_before = self.verify_routing.then(|| self.disc_params());
        // (i)
        self.opt_encoder.update(self.codec.encoder.params_mut(), &g_enc)?;
        self.opt_decoder.update(self.codec.decoder.params_mut(), &g_gen_outer)?;
        let fixed_i = d_before.as_ref().map(|p| *p == self.disc_params());

        let Some((real_tape, d_real, d_fake, g_gen_adv)) = adversarial else {
            return Ok(StepRecord { losses, d_real: None, d_fake: None, d_fake_post: None, routing: None });
        };
        // (ii)
        self.opt_decoder.update(self.codec.decoder.params_mut(), &g_gen_adv)?;
        let fixed_ii = d_before.as_ref().map(|p| *p == self.disc_params());

        // (iii)
        let codec_before =
            self.verify_routing.then(|| (self.codec.encoder.params().to_vec(), self.codec.decoder.params().to_vec()));
        let recon_post = self.codec.decoder.predict(&tape.received)?;
        let d = self.discriminator.as_ref().expect("cgan has a discriminator");
        let fake_tape = discriminate(d, &recon_post.scale(255.0))?;
        let d_fake_post = decisions_from_logits(fake_tape.logits());
        let (g_r, g_f) = discriminator_loss_grad(&d_real, &d_fake_post)?;
        let (mut g_d, _) = d.backward(&real_tape, &spread_decision_grad(&g_r, real_tape.output().shape()))?;
        let (g_d_fake, _) = d.backward(&fake_tape, &spread_decision_grad(&g_f, fake_tape.output().shape()))?;
        for (a, b) in g_d.iter_mut().zip(&g_d_fake) {
            *a += *b;
        }
        losses.l_disc = discriminator_loss(&d_real, &d_fake_post)?;
        check_finite(self.step, &losses, &[("discriminator", &g_d)])?;
        let opt = self.opt_discriminator.as_mut().expect("cgan has a discriminator optimizer");
        opt.update(self.discriminator.as_mut().expect("cgan").params_mut(), &g_d)?;
        let fixed_iii = codec_before.map(|(e, g)| e == self.codec.encoder.params() && g == self.codec.decoder.params());

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (dr, df, dfp) = (mean(&d_real), mean(&d_fake), mean(&d_fake_post));
        self.watch_collapse(dr);
        Ok(StepRecord {
            losses,
            d_real: Some(dr),
            d_fake: Some(df),
            d_fake_post: Some(dfp),
            routing: match (fixed_i, fixed_ii, fixed_iii) {
                (Some(a), Some(b), Some(c)) => {
                    Some(RoutingCheck { disc_fixed_in_i: a, disc_fixed_in_ii: b, codec_fixed_in_iii: c })
                }
                _ => None,
            },
        })
    }

    fn disc_params(&self) -> Vec<f32> {
        self.discriminator.as_ref().map(|d| d.params().to_vec()).unwrap_or_default()
    }

    fn watch_collapse(&mut self, d_real: f64) {
        if !(0.02..=0.98).contains(&d_real) {
            self.collapse_run += 1;
            if self.collapse_run == COLLAPSE_STEPS {
                ::log::warn!(
                    "discriminator may have collapsed: mean D(x) outside [0.02, 0.98] for {COLLAPSE_STEPS} steps (step {})",
                    self.step
                );
            }
        } else {
            self.collapse_run = 0;
        }
    }

    fn log_row(&self, rec: &StepRecord) -> LogRow {
        let adv = self.method == Method::Cgan && self.adversarial;
        LogRow {
            step: self.step - 1,
            epoch: self.epoch,
            l_mse: rec.losses.l_mse,
            l_ssim: rec.losses.l_ssim,
            l_combined: rec.losses.l_combined,
            l_gen: adv.then_some(rec.losses.l_gen),
            l_disc: adv.then_some(rec.losses.l_disc),
            l_l1: adv.then_some(rec.losses.l_l1),
        }
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Trains until the configured epoch count or `max_steps` more steps,
    /// whichever comes first. `on_step` sees every step record.
    pub fn run(
        &mut self,
        data: &Dataset,
        max_steps: Option<u64>,
        mut on_step: impl FnMut(&TrainState, &StepRecord),
    ) -> Result<Vec<LogRow>> {
        let geometry = (self.spec.image_height, self.spec.image_width, self.spec.image_channels);
        if data.geometry() != geometry {
            return Err(contract_err!("dataset images are {:?}, the run expects {geometry:?}", data.geometry()));
        }
        if data.is_empty() {
            return Err(JsccError::Ingestion(format!("dataset {} is empty", data.id)));
        }
        let mut rows = Vec::new();
        let mut budget = max_steps.unwrap_or(u64::MAX);
        while !self.finished() && budget > 0 {
            let order = data.order(Order::SeededShuffle, self.cfg.seed, self.epoch);
            let batches: Vec<&[usize]> = Dataset::minibatches(&order, self.cfg.batch_size).collect();
            while self.batch_in_epoch < batches.len() && budget > 0 {
                let x = data.batch::<f32>(batches[self.batch_in_epoch])?;
                let rec = self.train_step(&x)?;
                rows.push(self.log_row(&rec));
                on_step(self, &rec);
                self.batch_in_epoch += 1;
                budget -= 1;
            }
            if self.batch_in_epoch == batches.len() {
                let means = epoch_means(&rows);
                if let Some(m) = means.last() {
                    ::log::info!("{} epoch {}: mean loss {m:.6}", self.method, self.epoch + 1);
                }
                self.epoch += 1;
                self.batch_in_epoch = 0;
            }
        }
        Ok(rows)
    }
}

/// A finished (or interrupted) run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRow>,
    pub run_dir: Option<PathBuf>,
}

/// Trains one (r, γ) cell and, when `out` is given, saves the checkpoint and
/// `train_log.csv` there.
pub fn train(
    method: Method,
    spec: RunSpec,
    cfg: TrainConfig,
    data: &Dataset,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    if cfg.batch_size > 1 {
        ::log::info!("batch size {} (the reference setting is 1)", cfg.batch_size);
    }
    let mut state = TrainState::init(method, spec, cfg)?;
    let log = state.run(data, None, |_, _| {})?;
    if let Some(dir) = out {
        save_checkpoint(&state, dir, log.last())?;
        save_log(&dir.join("train_log.csv"), &log)?;
    }
    Ok(TrainOutcome { state, log, run_dir: out.map(Path::to_path_buf) })
}

pub fn train_g_unet(spec: RunSpec, cfg: TrainConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    train(Method::GUnet, spec, cfg, data, out)
}

pub fn train_cgan(spec: RunSpec, cfg: TrainConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    train(Method::Cgan, spec, cfg, data, out)
}

/// Environment variable overriding the default `runs` directory.
pub const RUNS_ENV: &str = "JSCC_RUNS_DIR";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Compact decimal for path components: `10`, `0.0833`, `-2.5`.
pub fn format_param(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// `<method>/<dataset>/r<r>_snr<γ>` relative to a runs root.
pub fn run_id(method: Method, spec: &RunSpec) -> String {
    format!(
        "{}/{}/r{}_snr{}",
        method,
        spec.dataset.dir_name(),
        format_param(spec.bcr_target),
        format_param(spec.snr_train_db)
    )
}

pub fn run_dir(root: &Path, method: Method, spec: &RunSpec) -> PathBuf {
    root.join(run_id(method, spec))
}
