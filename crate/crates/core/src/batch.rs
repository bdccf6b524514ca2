//! Image batches tagged with their pixel scale.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelScale {
    /// Values in [0, 255].
    Pixel255,
    /// Values in [0, 1].
    Unit,
}

impl PixelScale {
    pub fn max_value(self) -> f64 {
        match self {
            PixelScale::Pixel255 => 255.0,
            PixelScale::Unit => 1.0,
        }
    }
}

/// B×H×W×C images plus the scale they are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<T> {
    pub data: Tensor<T>,
    pub scale: PixelScale,
}

impl<T: Real> ImageBatch<T> {
    pub fn new(data: Tensor<T>, scale: PixelScale) -> Self {
        ImageBatch { data, scale }
    }

    /// Checks the value range implied by the scale tag.
    pub fn validated(data: Tensor<T>, scale: PixelScale) -> Result<Self> {
        let hi = scale.max_value();
        if let Some(v) = data.data().iter().map(|v| v.as_f64()).find(|v| !(0.0..=hi).contains(v)) {
            return Err(contract_err!("value {v} outside the {scale:?} range [0, {hi}]"));
        }
        Ok(ImageBatch { data, scale })
    }

    /// Builds a pixel-scale batch from 8-bit HWC images of one geometry.
    pub fn from_u8(images: &[&[u8]], h: usize, w: usize, c: usize) -> Result<Self> {
        let item = h * w * c;
        let mut data = Vec::with_capacity(images.len() * item);
        for img in images {
            if img.len() != item {
                return Err(contract_err!("image has {} bytes, expected {item} for {h}x{w}x{c}", img.len()));
            }
            data.extend(img.iter().map(|&b| T::from_f64c(b as f64)));
        }
        Ok(ImageBatch { data: Tensor::from_vec([images.len(), h, w, c], data)?, scale: PixelScale::Pixel255 })
    }

    pub fn to_scale(&self, scale: PixelScale) -> Self {
        if scale == self.scale {
            return self.clone();
        }
        let factor = T::from_f64c(scale.max_value() / self.scale.max_value());
        ImageBatch { data: self.data.scale(factor), scale }
    }

    pub fn to_unit(&self) -> Self {
        self.to_scale(PixelScale::Unit)
    }

    pub fn to_pixel(&self) -> Self {
        self.to_scale(PixelScale::Pixel255)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.data.shape()
    }

    /// Rounds a pixel-scale batch to 8-bit images, clamping to [0, 255].
    pub fn to_u8(&self) -> Vec<Vec<u8>> {
        let px = self.to_pixel();
        (0..px.data.batch())
            .map(|b| px.data.item(b).iter().map(|v| v.as_f64().round().clamp(0.0, 255.0) as u8).collect())
            .collect()
    }
}

/// Checks two batches share shape and scale.
pub fn check_pair<T: Real>(x: &ImageBatch<T>, y: &ImageBatch<T>, want: Option<PixelScale>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(contract_err!("image shapes differ: {:?} vs {:?}", x.shape(), y.shape()));
    }
    if x.scale != y.scale {
        return Err(contract_err!("pixel scales differ: {:?} vs {:?}", x.scale, y.scale));
    }
    if let Some(s) = want {
        if x.scale != s {
            return Err(contract_err!("expected {s:?} images, got {:?}", x.scale));
        }
    }
    Ok(())
}
