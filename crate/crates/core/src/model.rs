//! The end-to-end transmission pipeline and its gradient.
//!
//! Images (pixel scale) go through the encoder, are packed into complex
//! symbols, power-normalised per image, corrupted by AWGN and decoded. The
//! decoder's sigmoid output is the unit-scale reconstruction.

use rand::Rng;

use crate::baseline::build_baseline;
use crate::batch::{ImageBatch, PixelScale};
use crate::channel::{add_noise, pack_complex, power_normalize, power_normalize_backward, sample_noise, unpack_real};
use crate::error::{contract_err, Result};
use crate::nets::{build_encoder, build_generator, Network, NetworkSpec, Tape};
use crate::runspec::{Method, RunSpec};
use crate::tensor::{Real, Tensor};

/// Encoder and decoder specs for a method. The cGAN discriminator is not
/// part of the transmission chain.
pub fn method_specs(method: Method, spec: &RunSpec) -> Result<(NetworkSpec, NetworkSpec)> {
    match method {
        Method::GUnet | Method::Cgan => Ok((build_encoder(spec)?, build_generator(spec)?)),
        Method::Baseline => build_baseline(spec),
    }
}

/// One complex noise realisation per image.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl NoiseDraw {
    pub fn sample<R: Rng>(batch: usize, symbols: usize, noise_var: f64, rng: &mut R) -> Result<Self> {
        let mut re = Vec::with_capacity(batch);
        let mut im = Vec::with_capacity(batch);
        for _ in 0..batch {
            let (r, i) = sample_noise(symbols, noise_var, rng)?;
            re.push(r);
            im.push(i);
        }
        Ok(NoiseDraw { re, im })
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct PipelineTape<T> {
    pub encoder: Tape<T>,
    /// Channel output fed to the decoder.
    pub received: Tensor<T>,
    pub decoder: Tape<T>,
    pub noise: NoiseDraw,
}

impl<T: Real> PipelineTape<T> {
    /// Unit-scale reconstruction.
    pub fn reconstruction(&self) -> ImageBatch<T> {
        ImageBatch::new(self.decoder.output().clone(), PixelScale::Unit)
    }
}

/// Encoder plus decoder bound to a run geometry.
#[derive(Debug, Clone)]
pub struct Codec<T> {
    pub spec: RunSpec,
    pub encoder: Network<T>,
    pub decoder: Network<T>,
}

impl<T: Real> Codec<T> {
    pub fn new(spec: RunSpec, encoder: Network<T>, decoder: Network<T>) -> Result<Self> {
        let [_, h, w, c] = encoder.output_shape(1);
        if h * w * c != 2 * spec.symbols() || decoder.spec().input_shape != (h, w, c) {
            return Err(contract_err!(
                "encoder output {h}x{w}x{c} does not match decoder input {:?} or {} symbols",
                decoder.spec().input_shape,
                spec.symbols()
            ));
        }
        Ok(Codec { spec, encoder, decoder })
    }

    fn check_images(&self, x: &ImageBatch<T>) -> Result<()> {
        let [_, h, w, c] = x.shape();
        if (h, w, c) != (self.spec.image_height, self.spec.image_width, self.spec.image_channels) {
            return Err(contract_err!(
                "images are {h}x{w}x{c}, the model expects {}x{}x{}",
                self.spec.image_height,
                self.spec.image_width,
                self.spec.image_channels
            ));
        }
        Ok(())
    }

    /// Forward pass with a given noise realisation.
    pub fn forward_with_noise(&self, x: &ImageBatch<T>, noise: NoiseDraw) -> Result<PipelineTape<T>> {
        self.check_images(x)?;
        let px = x.to_pixel();
        let enc = self.encoder.forward(&px.data)?;
        let v = enc.output();
        let mut received = Tensor::zeros(v.shape());
        let b = v.batch();
        if noise.re.len() != b {
            return Err(contract_err!("{} noise draws for {b} images", noise.re.len()));
        }
        for i in 0..b {
            let z = power_normalize(&pack_complex(v.item(i))?, self.spec.avg_power)?;
            let z_hat = add_noise(&z, &noise.re[i], &noise.im[i]);
            received.item_mut(i).copy_from_slice(&unpack_real(&z_hat));
        }
        let dec = self.decoder.forward(&received)?;
        Ok(PipelineTape { encoder: enc, received, decoder: dec, noise })
    }

    /// Forward pass drawing fresh channel noise at `noise_var`.
    pub fn forward<R: Rng>(&self, x: &ImageBatch<T>, noise_var: f64, rng: &mut R) -> Result<PipelineTape<T>> {
        let noise = NoiseDraw::sample(x.data.batch(), self.spec.symbols(), noise_var, rng)?;
        self.forward_with_noise(x, noise)
    }

    /// Parameter gradients of encoder and decoder given `d loss / d x̂`
    /// (unit-scale reconstruction).
    pub fn backward(&self, tape: &PipelineTape<T>, grad_recon: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        let (g_dec, g_received) = self.decoder.backward(&tape.decoder, grad_recon)?;
        let (g_enc, _) = self.encoder.backward(&tape.encoder, &self.grad_through_channel(tape, &g_received))?;
        Ok((g_enc, g_dec))
    }

    /// Maps `d loss / d ẑ` to `d loss / d v` (encoder output). Noise is
    /// additive, so only the normalisation contributes.
    pub fn grad_through_channel(&self, tape: &PipelineTape<T>, g_received: &Tensor<T>) -> Tensor<T> {
        let v = tape.encoder.output();
        let mut g_v = Tensor::zeros(v.shape());
        for i in 0..v.batch() {
            let g = power_normalize_backward(v.item(i), g_received.item(i), self.spec.avg_power);
            g_v.item_mut(i).copy_from_slice(&g);
        }
        g_v
    }

    /// Reconstruction at `noise_var`, as a unit-scale batch.
    pub fn transmit<R: Rng>(&self, x: &ImageBatch<T>, noise_var: f64, rng: &mut R) -> Result<ImageBatch<T>> {
        Ok(self.forward(x, noise_var, rng)?.reconstruction())
    }
}
