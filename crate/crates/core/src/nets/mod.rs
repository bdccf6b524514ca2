//! Declarative network descriptions and the three JSCC networks.
//!
//! A [`NetworkSpec`] is a flat list of (transposed) convolutions. A layer with
//! a `skip_source` consumes the channel concatenation of the previous layer's
//! output and the named layer's output, so its input width is the sum of the
//! two (doubled when both branches are 64 wide).

mod conv;
mod network;

use serde::{Deserialize, Serialize};

pub use conv::{ConvGeom, ConvOp};
pub use network::{ForwardOptions, Network, Tape};

use crate::error::{config_err, shape_err, Result};
use crate::runspec::RunSpec;

/// Negative slope of every LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;
/// Standard deviation of the truncated-normal kernel initialiser.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    TransposedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Learnable per-channel negative slope.
    Prelu,
    Relu,
    LeakyRelu,
    Sigmoid,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: usize,
    pub filters: usize,
    pub stride: (usize, usize),
    pub activation: Activation,
    /// Layer whose output is concatenated onto this layer's input.
    pub skip_source: Option<String>,
}

impl LayerSpec {
    pub fn conv(name: &str, kernel: usize, filters: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            kernel,
            filters,
            stride: (stride, stride),
            activation,
            skip_source: None,
        }
    }

    pub fn tconv(name: &str, kernel: usize, filters: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::TransposedConv, ..Self::conv(name, kernel, filters, stride, activation) }
    }

    pub fn with_skip(mut self, source: &str) -> Self {
        self.skip_source = Some(source.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    /// (H, W, C) of one input image.
    pub input_shape: (usize, usize, usize),
    /// Input normalisation applied inside the network.
    pub pre_scale: Option<f64>,
    /// Denormalisation applied by callers to the returned output; the network
    /// itself returns the unscaled activation.
    pub post_scale: Option<f64>,
}

/// Resolved shapes of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_h: usize,
    pub in_w: usize,
    /// Input channels including any concatenated skip branch.
    pub in_c: usize,
    pub skip_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    /// Index of the skip source layer.
    pub skip_index: Option<usize>,
}

impl NetworkSpec {
    /// Resolves the shape chain, checking every layer invariant.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        let (mut h, mut w, mut c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(shape_err!("{}: empty input shape {:?}", self.name, self.input_shape));
        }
        let mut shapes: Vec<LayerShape> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kernel < 1 || layer.filters < 1 || layer.stride.0 < 1 || layer.stride.1 < 1 {
                return Err(config_err!(
                    "{}/{}: kernel, filters and strides must be at least 1",
                    self.name,
                    layer.name
                ));
            }
            let (skip_index, skip_c) = match &layer.skip_source {
                None => (None, 0),
                Some(src) => {
                    let j = self.layers[..i].iter().position(|l| &l.name == src).ok_or_else(|| {
                        config_err!("{}/{}: skip source {src:?} is not an earlier layer", self.name, layer.name)
                    })?;
                    let s = shapes[j];
                    if (s.out_h, s.out_w) != (h, w) {
                        return Err(shape_err!(
                            "{}/{}: skip source {src} is {}x{}, layer input is {h}x{w}",
                            self.name,
                            layer.name,
                            s.out_h,
                            s.out_w
                        ));
                    }
                    (Some(j), s.out_c)
                }
            };
            let (oh, ow) = match layer.kind {
                LayerKind::Conv => (h.div_ceil(layer.stride.0), w.div_ceil(layer.stride.1)),
                LayerKind::TransposedConv => (h * layer.stride.0, w * layer.stride.1),
            };
            shapes.push(LayerShape {
                in_h: h,
                in_w: w,
                in_c: c + skip_c,
                skip_c,
                out_h: oh,
                out_w: ow,
                out_c: layer.filters,
                skip_index,
            });
            h = oh;
            w = ow;
            c = layer.filters;
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        let shapes = self.shapes()?;
        Ok(shapes.last().map(|s| (s.out_h, s.out_w, s.out_c)).unwrap_or(self.input_shape))
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn skip_count(&self) -> usize {
        self.layers.iter().filter(|l| l.skip_source.is_some()).count()
    }
}

/// Encoder for an `h×w×3` image producing `c` feature maps at half resolution.
pub fn encoder_spec(h: usize, w: usize, channels: usize, c: usize) -> NetworkSpec {
    use Activation::Prelu;
    NetworkSpec {
        name: "encoder".into(),
        layers: vec![
            LayerSpec::conv("conv1", 5, 64, 2, Prelu),
            LayerSpec::conv("conv2", 3, 64, 1, Prelu),
            LayerSpec::conv("conv3", 3, 64, 1, Prelu),
            LayerSpec::conv("conv4", 3, 64, 1, Prelu),
            LayerSpec::conv("conv5", 3, c, 1, Prelu),
        ],
        input_shape: (h, w, channels),
        pre_scale: Some(1.0 / 255.0),
        post_scale: None,
    }
}

/// U-Net generator reading an `h×w×c` channel output and emitting a
/// `2h×2w×3` unit-scale image.
pub fn generator_spec(h: usize, w: usize, c: usize, out_channels: usize) -> NetworkSpec {
    use Activation::{LeakyRelu, Relu, Sigmoid};
    NetworkSpec {
        name: "generator".into(),
        layers: vec![
            LayerSpec::tconv("tconv1", 3, 64, 2, Relu),
            LayerSpec::conv("conv1", 3, 64, 2, LeakyRelu),
            LayerSpec::conv("conv2", 3, 64, 2, LeakyRelu),
            LayerSpec::conv("conv3", 3, 64, 2, LeakyRelu),
            LayerSpec::tconv("tconv2", 3, 64, 2, Relu),
            LayerSpec::tconv("tconv3", 3, 64, 2, Relu).with_skip("conv2"),
            LayerSpec::tconv("tconv4", 3, 64, 2, Relu).with_skip("conv1"),
            LayerSpec::tconv("tconv5", 3, out_channels, 1, Sigmoid).with_skip("tconv1"),
        ],
        input_shape: (h, w, c),
        pre_scale: None,
        post_scale: Some(255.0),
    }
}

/// Patch discriminator for an `h×w×c` pixel-scale image.
pub fn discriminator_spec(h: usize, w: usize, channels: usize) -> NetworkSpec {
    use Activation::{LeakyRelu, Sigmoid};
    NetworkSpec {
        name: "discriminator".into(),
        layers: vec![
            LayerSpec::conv("conv1", 4, 64, 2, LeakyRelu),
            LayerSpec::conv("conv2", 4, 128, 2, LeakyRelu),
            LayerSpec::conv("conv3", 4, 256, 2, LeakyRelu),
            LayerSpec::conv("conv4", 4, 512, 1, LeakyRelu),
            LayerSpec::conv("conv5", 4, 1, 1, Sigmoid),
        ],
        input_shape: (h, w, channels),
        pre_scale: Some(1.0 / 255.0),
        post_scale: None,
    }
}

pub fn build_encoder(spec: &RunSpec) -> Result<NetworkSpec> {
    let c = spec.encoder_channels();
    if c < 1 {
        return Err(config_err!("encoder needs at least one output channel"));
    }
    Ok(encoder_spec(spec.image_height, spec.image_width, spec.image_channels, c))
}

pub fn build_generator(spec: &RunSpec) -> Result<NetworkSpec> {
    let (h, w) = (spec.encoder_out_height, spec.encoder_out_width);
    // tconv1 doubles, then three halvings: the bottleneck is (2h/8)×(2w/8).
    if 2 * h / 8 < 4 || 2 * w / 8 < 4 || (2 * h) % 8 != 0 || (2 * w) % 8 != 0 {
        return Err(config_err!(
            "generator bottleneck for a {}x{} image falls below 4x4 or does not divide evenly",
            2 * h,
            2 * w
        ));
    }
    Ok(generator_spec(h, w, spec.encoder_channels(), spec.image_channels))
}

pub fn build_discriminator(input_shape: (usize, usize, usize)) -> Result<NetworkSpec> {
    let (h, w, c) = input_shape;
    if h < 32 || w < 32 {
        return Err(config_err!("discriminator input must be at least 32x32, got {h}x{w}"));
    }
    Ok(discriminator_spec(h, w, c))
}

/// Mean of a patch score map: the discriminator's final decision.
pub fn discriminator_decision<T: crate::tensor::Real>(score_map: &[T]) -> Result<T> {
    if score_map.is_empty() {
        return Err(shape_err!("empty discriminator score map"));
    }
    let sum: f64 = score_map.iter().map(|v| v.as_f64()).sum();
    Ok(T::from_f64c(sum / score_map.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runspec::DatasetId;

    fn spec(h: usize) -> RunSpec {
        let ds = DatasetId::Synthetic { count: 1, height: h, width: h };
        RunSpec::new(ds, 1.0 / 12.0, 10.0).unwrap()
    }

    #[test]
    fn encoder_shapes() {
        let e = build_encoder(&spec(256)).unwrap();
        assert_eq!(e.output_shape().unwrap(), (128, 128, 2));
        let e = build_encoder(&spec(32)).unwrap();
        assert_eq!(e.output_shape().unwrap(), (16, 16, 2));
        assert_eq!(e.layers.len(), 5);
        assert_eq!(e.layers[0].kernel, 5);
        assert!(e.layers.iter().all(|l| l.activation == Activation::Prelu));
    }

    #[test]
    fn generator_shapes() {
        let g = build_generator(&spec(256)).unwrap();
        let shapes = g.shapes().unwrap();
        let outs: Vec<usize> = shapes.iter().map(|s| s.out_h).collect();
        assert_eq!(outs, vec![256, 128, 64, 32, 64, 128, 256, 256]);
        assert_eq!(g.output_shape().unwrap(), (256, 256, 3));
        let g = build_generator(&spec(32)).unwrap();
        assert_eq!(g.input_shape, (16, 16, 2));
        assert_eq!(g.output_shape().unwrap(), (32, 32, 3));
    }

    #[test]
    fn skip_layers_double_input_channels() {
        let g = build_generator(&spec(32)).unwrap();
        let shapes = g.shapes().unwrap();
        for (layer, s) in g.layers.iter().zip(&shapes) {
            if layer.skip_source.is_some() {
                assert_eq!(s.in_c, 128, "{}", layer.name);
                assert_eq!(s.skip_c, 64);
            }
        }
        assert_eq!(g.skip_count(), 3);
        assert_eq!(shapes[7].in_c, 128);
    }

    #[test]
    fn discriminator_shapes() {
        let d = build_discriminator((256, 256, 3)).unwrap();
        let (h, w, c) = d.output_shape().unwrap();
        assert!(h >= 26 && w >= 26);
        assert_eq!(c, 1);
        let d = build_discriminator((32, 32, 3)).unwrap();
        let (h, w, _) = d.output_shape().unwrap();
        assert!(h >= 1 && w >= 1);
        assert!(build_discriminator((16, 16, 3)).is_err());
    }

    #[test]
    fn skip_source_must_match_spatially() {
        let mut g = generator_spec(16, 16, 2, 3);
        g.layers[5].skip_source = Some("conv1".into());
        assert!(g.shapes().is_err());
        g.layers[5].skip_source = Some("nope".into());
        assert!(g.shapes().is_err());
    }

    #[test]
    fn decision_is_mean() {
        assert_eq!(discriminator_decision(&[0.5f64; 4]).unwrap(), 0.5);
        let d = discriminator_decision(&[0.2f64, 0.4, 0.6, 0.8]).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert!(discriminator_decision::<f64>(&[]).is_err());
    }
}
