//! The no-skip symmetric autoencoder used as the ablation baseline.
//!
//! The decoder mirrors the encoder: four stride-1 3×3 transposed convolutions
//! at the channel-map resolution, then a stride-2 transposed convolution back
//! to the image size. It has the same layer count as the encoder and no skip
//! connections.

use crate::error::{config_err, Result};
use crate::nets::{build_encoder, Activation, LayerSpec, NetworkSpec};
use crate::runspec::RunSpec;

pub fn baseline_decoder_spec(h: usize, w: usize, c: usize, out_channels: usize) -> NetworkSpec {
    use Activation::{Prelu, Sigmoid};
    NetworkSpec {
        name: "baseline_decoder".into(),
        layers: vec![
            LayerSpec::tconv("tconv1", 3, 64, 1, Prelu),
            LayerSpec::tconv("tconv2", 3, 64, 1, Prelu),
            LayerSpec::tconv("tconv3", 3, 64, 1, Prelu),
            LayerSpec::tconv("tconv4", 3, 64, 1, Prelu),
            LayerSpec::tconv("tconv5", 3, out_channels, 2, Sigmoid),
        ],
        input_shape: (h, w, c),
        pre_scale: None,
        post_scale: Some(255.0),
    }
}

/// Encoder (identical to the JSCC encoder) and the mirrored decoder.
pub fn build_baseline(spec: &RunSpec) -> Result<(NetworkSpec, NetworkSpec)> {
    let encoder = build_encoder(spec)?;
    let decoder = baseline_decoder_spec(
        spec.encoder_out_height,
        spec.encoder_out_width,
        spec.encoder_channels(),
        spec.image_channels,
    );
    if decoder.skip_count() != 0 || decoder.layers.len() != encoder.layers.len() {
        return Err(config_err!("baseline decoder must mirror the encoder without skips"));
    }
    Ok((encoder, decoder))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runspec::DatasetId;

    #[test]
    fn decoder_restores_image_geometry() {
        let ds = DatasetId::Synthetic { count: 1, height: 32, width: 32 };
        let spec = RunSpec::new(ds, 1.0 / 12.0, 10.0).unwrap();
        let (enc, dec) = build_baseline(&spec).unwrap();
        assert_eq!(enc.output_shape().unwrap(), (16, 16, 2));
        assert_eq!(dec.output_shape().unwrap(), (32, 32, 3));
        assert_eq!(dec.skip_count(), 0);
        assert_eq!(dec.layers.len(), enc.layers.len());
    }
}
