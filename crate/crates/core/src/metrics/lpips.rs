//! LPIPS-style perceptual distance over a convolutional feature stack.
//!
//! Weights live in a local file: the 8-byte magic `JSCCLPIP`, a little-endian
//! `u32` header length, a JSON header describing the layers, then every
//! parameter as little-endian `f32` in network order followed by the per-layer
//! linear channel weights.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, JsccError, Result};
use crate::nets::{Activation, LayerSpec, Network, NetworkSpec};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"JSCCLPIP";

/// Produces per-layer activations for unit-scale images.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;

    /// Per-channel weights applied to squared feature differences.
    fn channel_weights(&self, layer: usize) -> Option<&[f64]> {
        let _ = layer;
        None
    }

    /// Mean over the batch of Σ_layers mean_hw Σ_c w_c (f̂x − f̂y)², where f̂
    /// is the feature unit-normalised along channels.
    fn distance(&self, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
        if x.shape() != y.shape() {
            return Err(contract_err!("image shapes differ: {:?} vs {:?}", x.shape(), y.shape()));
        }
        let fx = self.features(x)?;
        let fy = self.features(y)?;
        let batch = x.batch();
        let mut total = 0.0;
        for (l, (a, b)) in fx.iter().zip(&fy).enumerate() {
            let [_, h, w, c] = a.shape();
            let weights = self.channel_weights(l);
            for i in 0..batch {
                let (ai, bi) = (a.item(i), b.item(i));
                let mut acc = 0.0;
                for p in 0..h * w {
                    let va = &ai[p * c..(p + 1) * c];
                    let vb = &bi[p * c..(p + 1) * c];
                    let na = va.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                    let nb = vb.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                    for ch in 0..c {
                        let d = va[ch] / na - vb[ch] / nb;
                        acc += weights.map_or(1.0, |w| w[ch]) * d * d;
                    }
                }
                total += acc / (h * w) as f64;
            }
        }
        Ok(total / batch as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpipsLayer {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
    /// Whether this layer's activation is one of the compared features.
    pub tap: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    input_channels: usize,
    /// Per-channel shift and scale applied to unit-scale input.
    shift: Vec<f64>,
    scale: Vec<f64>,
    layers: Vec<LpipsLayer>,
}

/// ReLU conv stack with linear heads on the tapped layers.
#[derive(Debug, Clone)]
pub struct LpipsExtractor {
    header: Header,
    params: Vec<f64>,
    lin: Vec<Vec<f64>>,
}

impl LpipsExtractor {
    fn spec(layers: &[LpipsLayer], h: usize, w: usize, c: usize) -> NetworkSpec {
        NetworkSpec {
            name: "lpips".into(),
            layers: layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    LayerSpec::conv(&format!("conv{}", i + 1), l.kernel, l.filters, l.stride, Activation::Relu)
                })
                .collect(),
            input_shape: (h, w, c),
            pre_scale: None,
            post_scale: None,
        }
    }

    /// Random weights, for probes that only need a fixed feature map.
    pub fn random(layers: Vec<LpipsLayer>, input_channels: usize, seed: u64) -> Result<Self> {
        let net: Network<f64> =
            Network::new(Self::spec(&layers, 32, 32, input_channels), &mut crate::rng::stream(seed, "lpips"))?;
        let lin = layers.iter().filter(|l| l.tap).map(|l| vec![1.0; l.filters]).collect();
        Ok(LpipsExtractor {
            header: Header {
                input_channels,
                shift: vec![0.5; input_channels],
                scale: vec![0.5; input_channels],
                layers,
            },
            params: net.params().to_vec(),
            lin,
        })
    }

    /// Loads a weights file; `Ok(None)` when the file does not exist.
    pub fn load(path: &Path) -> Result<Option<Self>> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(JsccError::io(path, e)),
        };
        let bad = |m: &str| JsccError::Ingestion(format!("{}: {m}", path.display()));
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not an LPIPS weights file"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let floats: Vec<f64> =
            bytes[12 + hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        let net = Network::<f64>::zeroed(Self::spec(&header.layers, 32, 32, header.input_channels))?;
        let n = net.num_params();
        let lin_len: usize = header.layers.iter().filter(|l| l.tap).map(|l| l.filters).sum();
        if floats.len() != n + lin_len {
            return Err(bad(&format!("expected {} weights, found {}", n + lin_len, floats.len())));
        }
        let mut lin = Vec::new();
        let mut off = n;
        for l in header.layers.iter().filter(|l| l.tap) {
            lin.push(floats[off..off + l.filters].to_vec());
            off += l.filters;
        }
        Ok(Some(LpipsExtractor { params: floats[..n].to_vec(), lin, header }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.iter().chain(self.lin.iter().flatten()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| JsccError::io(path, e))?;
        f.write_all(&out).map_err(|e| JsccError::io(path, e))
    }
}

impl FeatureExtractor for LpipsExtractor {
    fn features(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let [_, h, w, c] = x.shape();
        if c != self.header.input_channels {
            return Err(contract_err!("extractor expects {} channels, got {c}", self.header.input_channels));
        }
        let mut net = Network::<f64>::zeroed(Self::spec(&self.header.layers, h, w, c))?;
        net.set_params(self.params.clone())?;
        let mut input = x.clone();
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            *v = (*v - self.header.shift[ch]) / self.header.scale[ch];
        }
        let tape = net.forward(&input)?;
        Ok(self
            .header
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.tap)
            .map(|(i, _)| tape.layer_output(i).clone())
            .collect())
    }

    fn channel_weights(&self, layer: usize) -> Option<&[f64]> {
        self.lin.get(layer).map(|v| v.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn layers() -> Vec<LpipsLayer> {
        vec![
            LpipsLayer { kernel: 3, filters: 8, stride: 1, tap: true },
            LpipsLayer { kernel: 3, filters: 16, stride: 2, tap: true },
            LpipsLayer { kernel: 3, filters: 16, stride: 2, tap: true },
        ]
    }

    fn image(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * 16 * 16 * 3;
        Tensor::from_vec([2, 16, 16, 3], (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect()).unwrap()
    }

    fn noised(x: &Tensor<f64>, sigma: f64, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        let data = x.data().iter().map(|v| (v + d.sample(&mut rng)).clamp(0.0, 1.0)).collect();
        Tensor::from_vec(x.shape(), data).unwrap()
    }

    #[test]
    fn identity_is_zero_and_noise_is_monotone() {
        let m = LpipsExtractor::random(layers(), 3, 7).unwrap();
        let x = image(1);
        assert!(m.distance(&x, &x).unwrap().abs() < 1e-12);
        let light = m.distance(&x, &noised(&x, 0.05, 2)).unwrap();
        let heavy = m.distance(&x, &noised(&x, 0.2, 2)).unwrap();
        assert!(light > 0.0 && heavy > light, "{light} {heavy}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        assert!(LpipsExtractor::load(&path).unwrap().is_none());
        let m = LpipsExtractor::random(layers(), 3, 3).unwrap();
        m.save(&path).unwrap();
        let back = LpipsExtractor::load(&path).unwrap().unwrap();
        let x = image(4);
        let y = noised(&x, 0.1, 5);
        let a = m.distance(&x, &y).unwrap();
        let b = back.distance(&x, &y).unwrap();
        assert!((a - b).abs() < 1e-4 * a);
        std::fs::write(&path, b"garbage!").unwrap();
        assert!(LpipsExtractor::load(&path).is_err());
    }
}
