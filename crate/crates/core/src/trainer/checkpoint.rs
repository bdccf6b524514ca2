//! Run directories: `manifest.json`, `encoder.bin`, `decoder.bin`, and a
//! `train_state/` subdirectory with what resuming needs (optimizer moments,
//! the discriminator, the channel stream position).
//!
//! Weight files are raw little-endian `f32`; optimizer moments are `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LogRow, TrainState};
use crate::error::{JsccError, Result};
use crate::model::{method_specs, Codec};
use crate::nets::{build_discriminator, Network};
use crate::optim::Adam;
use crate::rng::StreamState;
use crate::runspec::{DatasetId, Method, RunSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastLosses {
    pub l_mse: f64,
    pub l_ssim: Option<f64>,
    pub l_combined: f64,
    pub l_gen: Option<f64>,
    pub l_disc: Option<f64>,
    pub l_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: Method,
    pub dataset: DatasetId,
    pub bcr: f64,
    pub snr_train_db: f64,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub spec: RunSpec,
    pub metrics_last: Option<LastLosses>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    learning_rate: f64,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeState {
    cfg: TrainConfig,
    batch_in_epoch: usize,
    channel_rng: StreamState,
    adversarial: bool,
    collapse_run: usize,
    encoder: OptimizerHeader,
    decoder: OptimizerHeader,
    discriminator: Option<OptimizerHeader>,
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> JsccError {
    JsccError::Checkpoint(format!("{}: {msg}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| JsccError::io(path, e))
}

fn write_f32s(path: &Path, v: &[f32]) -> Result<()> {
    write_bytes(path, &v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>())
}

fn write_f64s(path: &Path, v: &[f64]) -> Result<()> {
    write_bytes(path, &v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>())
}

fn read_exact(path: &Path, len: usize) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| ckpt_err(path, e))?;
    if bytes.len() != len {
        return Err(ckpt_err(path, format!("{} bytes, expected {len}", bytes.len())));
    }
    Ok(bytes)
}

fn read_f32s(path: &Path, n: usize) -> Result<Vec<f32>> {
    Ok(read_exact(path, 4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_f64s(path: &Path, n: usize) -> Result<Vec<f64>> {
    Ok(read_exact(path, 8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ckpt_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| ckpt_err(path, e))
}

fn save_optimizer(dir: &Path, name: &str, opt: &Adam) -> Result<OptimizerHeader> {
    let (m, v) = opt.moments();
    write_f64s(&dir.join(format!("{name}.m.bin")), m)?;
    write_f64s(&dir.join(format!("{name}.v.bin")), v)?;
    Ok(OptimizerHeader { learning_rate: opt.learning_rate, step: opt.step })
}

fn load_optimizer(dir: &Path, name: &str, head: &OptimizerHeader, n: usize) -> Result<Adam> {
    let m = read_f64s(&dir.join(format!("{name}.m.bin")), n)?;
    let v = read_f64s(&dir.join(format!("{name}.v.bin")), n)?;
    Adam::from_parts(head.learning_rate, head.step, m, v)
}

/// Writes the full state; evaluation later needs only the manifest and the
/// encoder and decoder weights.
pub fn save_checkpoint(state: &TrainState, dir: &Path, last: Option<&LogRow>) -> Result<()> {
    let resume_dir = dir.join("train_state");
    std::fs::create_dir_all(&resume_dir).map_err(|e| JsccError::io(&resume_dir, e))?;
    let manifest = Manifest {
        method: state.method,
        dataset: state.spec.dataset.clone(),
        bcr: state.spec.bcr_target,
        snr_train_db: state.spec.snr_train_db,
        epoch: state.epoch,
        step: state.step,
        seed: state.cfg.seed,
        spec: state.spec.clone(),
        metrics_last: last.map(|r| LastLosses {
            l_mse: r.l_mse,
            l_ssim: r.l_ssim.is_finite().then_some(r.l_ssim),
            l_combined: r.l_combined,
            l_gen: r.l_gen,
            l_disc: r.l_disc,
            l_l1: r.l_l1,
        }),
    };
    write_f32s(&dir.join("encoder.bin"), state.codec.encoder.params())?;
    write_f32s(&dir.join("decoder.bin"), state.codec.decoder.params())?;
    let encoder = save_optimizer(&resume_dir, "opt_encoder", &state.opt_encoder)?;
    let decoder = save_optimizer(&resume_dir, "opt_decoder", &state.opt_decoder)?;
    let discriminator = match (&state.discriminator, &state.opt_discriminator) {
        (Some(d), Some(opt)) => {
            write_f32s(&resume_dir.join("discriminator.bin"), d.params())?;
            Some(save_optimizer(&resume_dir, "opt_discriminator", opt)?)
        }
        _ => None,
    };
    write_json(
        &resume_dir.join("state.json"),
        &ResumeState {
            cfg: state.cfg.clone(),
            batch_in_epoch: state.batch_in_epoch,
            channel_rng: StreamState::capture(&state.channel_rng),
            adversarial: state.adversarial,
            collapse_run: state.collapse_run,
            encoder,
            decoder,
            discriminator,
        },
    )?;
    // Manifest last, so a complete manifest implies complete weights.
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join("manifest.json"))
}

/// Encoder and decoder for inference. The discriminator is never loaded.
pub fn load_codec(dir: &Path) -> Result<(Manifest, Codec<f32>)> {
    let manifest = read_manifest(dir)?;
    let (enc_spec, dec_spec) = method_specs(manifest.method, &manifest.spec)?;
    let mut encoder = Network::<f32>::zeroed(enc_spec)?;
    let mut decoder = Network::<f32>::zeroed(dec_spec)?;
    encoder.set_params(read_f32s(&dir.join("encoder.bin"), encoder.num_params())?)?;
    decoder.set_params(read_f32s(&dir.join("decoder.bin"), decoder.num_params())?)?;
    let codec = Codec::new(manifest.spec.clone(), encoder, decoder)?;
    Ok((manifest, codec))
}

/// Loads a checkpoint, requiring its image geometry to match `expected`.
pub fn load_codec_for(dir: &Path, expected: &RunSpec) -> Result<(Manifest, Codec<f32>)> {
    let (m, codec) = load_codec(dir)?;
    let have = (m.spec.image_height, m.spec.image_width, m.spec.image_channels, m.spec.encoder_channels());
    let want = (expected.image_height, expected.image_width, expected.image_channels, expected.encoder_channels());
    if have != want {
        return Err(ckpt_err(dir, format!("checkpoint geometry {have:?} does not match {want:?}")));
    }
    Ok((m, codec))
}

/// Full training state, continuing exactly where [`save_checkpoint`] left off.
pub fn load_state(dir: &Path) -> Result<TrainState> {
    let (manifest, codec) = load_codec(dir)?;
    let resume_dir = dir.join("train_state");
    let r: ResumeState = read_json(&resume_dir.join("state.json"))?;
    let discriminator = match manifest.method {
        Method::Cgan => {
            let s = &manifest.spec;
            let mut d =
                Network::<f32>::zeroed(build_discriminator((s.image_height, s.image_width, s.image_channels))?)?;
            d.set_params(read_f32s(&resume_dir.join("discriminator.bin"), d.num_params())?)?;
            Some(d)
        }
        _ => None,
    };
    let mut state = TrainState::assemble(
        manifest.method,
        manifest.spec.clone(),
        r.cfg.clone(),
        codec.encoder,
        codec.decoder,
        discriminator,
    )?;
    state.epoch = manifest.epoch;
    state.step = manifest.step;
    state.batch_in_epoch = r.batch_in_epoch;
    state.channel_rng = r.channel_rng.restore();
    state.adversarial = r.adversarial;
    state.collapse_run = r.collapse_run;
    state.opt_encoder = load_optimizer(&resume_dir, "opt_encoder", &r.encoder, state.opt_encoder.len())?;
    state.opt_decoder = load_optimizer(&resume_dir, "opt_decoder", &r.decoder, state.opt_decoder.len())?;
    if let (Some(head), Some(opt)) = (&r.discriminator, &state.opt_discriminator) {
        state.opt_discriminator = Some(load_optimizer(&resume_dir, "opt_discriminator", head, opt.len())?);
    }
    Ok(state)
}
