//! Dataset ingestion: CIFAR-10 binary batches, image folders and a synthetic
//! procedural corpus.
//!
//! Every handle stores 8-bit HWC images contiguously and yields pixel-scale
//! batches; conversion to unit scale happens only inside the model.

mod cifar;
mod folder;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;

pub use cifar::{decode_record, encode_record, load_cifar10, load_cifar10_subset, CIFAR_RECORD_LEN};
pub use folder::load_image_folder;
pub use synthetic::synthetic_dataset;

use crate::batch::ImageBatch;
use crate::error::{contract_err, Result};
use crate::runspec::DatasetId;
use crate::tensor::Real;

/// Environment variable naming the CIFAR-10 binary directory.
pub const CIFAR_ENV: &str = "JSCC_CIFAR10_DIR";
/// Seed of the synthetic corpora, independent of any run seed.
pub const SYNTHETIC_SEED: u64 = 7;
/// Fraction of a folder dataset used for training.
pub const FOLDER_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Sequential,
    SeededShuffle,
}

/// A read-only set of equally sized 8-bit images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pixels: Arc<Vec<u8>>,
}

impl Dataset {
    pub fn from_pixels(
        id: impl Into<String>,
        split: Split,
        (height, width, channels): (usize, usize, usize),
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let item = height * width * channels;
        if item == 0 || !pixels.len().is_multiple_of(item) {
            return Err(contract_err!("{} bytes do not hold whole {height}x{width}x{channels} images", pixels.len()));
        }
        Ok(Dataset { id: id.into(), split, height, width, channels, pixels: Arc::new(pixels) })
    }

    pub fn geometry(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn item_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.item_len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.item_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` images (all of them if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset { pixels: Arc::new(self.pixels[..n * self.item_len()].to_vec()), ..self.clone() }
    }

    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<ImageBatch<T>> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(contract_err!("image index {i} out of range for {} images", self.len()));
        }
        let images: Vec<&[u8]> = indices.iter().map(|&i| self.image(i)).collect();
        ImageBatch::from_u8(&images, self.height, self.width, self.channels)
    }

    /// Iteration order for one epoch. Shuffles depend only on (seed, epoch).
    pub fn order(&self, policy: Order, seed: u64, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if policy == Order::SeededShuffle {
            idx.shuffle(&mut crate::rng::stream(seed, &format!("shuffle/epoch{epoch}")));
        }
        idx
    }

    /// Consecutive minibatches of `order`, the last possibly short.
    pub fn minibatches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
        order.chunks(batch_size.max(1))
    }
}

fn cifar_root() -> PathBuf {
    std::env::var_os(CIFAR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/cifar-10-batches-bin"))
}

/// Opens one split of a named dataset.
pub fn open_dataset(id: &DatasetId, split: Split) -> Result<Dataset> {
    match id {
        DatasetId::Cifar10 => load_cifar10(&cifar_root(), split),
        DatasetId::Cifar10Mini => {
            let n = match split {
                Split::Train => 5000,
                Split::Test => 1000,
            };
            let mut d = load_cifar10_subset(&cifar_root(), split, n)?;
            d.id = id.to_string();
            Ok(d)
        }
        DatasetId::Synthetic { count, height, width } => {
            let (n, label) = match split {
                Split::Train => (*count, "train"),
                Split::Test => (synthetic_test_count(*count), "test"),
            };
            let mut d = synthetic_dataset(n, (*height, *width, 3), SYNTHETIC_SEED, label)?;
            d.id = id.to_string();
            d.split = split;
            Ok(d)
        }
        DatasetId::Folder { root, height, width } => {
            let (train, test) =
                load_image_folder(root.as_ref(), (*height, *width), FOLDER_TRAIN_FRACTION, SYNTHETIC_SEED)?;
            Ok(match split {
                Split::Train => train,
                Split::Test => test,
            })
        }
    }
}

/// Held-out synthetic images: a quarter of the training count, at least one.
pub fn synthetic_test_count(count: usize) -> usize {
    (count / 4).max(1)
}
