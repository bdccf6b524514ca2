//! Image-folder datasets: centre-crop to a square, resize, split by a seeded
//! shuffle of the sorted file names.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;

use super::{Dataset, Split};
use crate::error::{config_err, JsccError, Result};

/// Largest centred square crop of a `w×h` image: (x0, y0, side).
pub fn center_square(w: u32, h: u32) -> (u32, u32, u32) {
    let side = w.min(h);
    ((w - side) / 2, (h - side) / 2, side)
}

fn sorted_files(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| JsccError::Ingestion(format!("{}: {e}", root.display())))?;
    let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    files.sort();
    Ok(files)
}

fn prepare(path: &Path, (th, tw): (usize, usize)) -> Option<Vec<u8>> {
    let img = match image::open(path) {
        Ok(img) => img.to_rgb8(),
        Err(e) => {
            log::warn!("skipping {}: {e}", path.display());
            return None;
        }
    };
    let (w, h) = img.dimensions();
    if (w as usize) < tw || (h as usize) < th {
        log::warn!("skipping {}: {w}x{h} is smaller than {tw}x{th}", path.display());
        return None;
    }
    let (x0, y0, side) = center_square(w, h);
    let crop = image::imageops::crop_imm(&img, x0, y0, side, side).to_image();
    let out = if (side as usize, side as usize) == (tw, th) {
        crop
    } else {
        image::imageops::resize(&crop, tw as u32, th as u32, FilterType::Triangle)
    };
    Some(out.into_raw())
}

/// Returns (train, test). The split is a pure function of the sorted file
/// list and `seed`; undecodable files are skipped with a warning.
pub fn load_image_folder(
    root: &Path,
    target_hw: (usize, usize),
    split_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&split_fraction) {
        return Err(config_err!("split fraction must lie in [0, 1], got {split_fraction}"));
    }
    let mut kept = Vec::new();
    for path in sorted_files(root)? {
        if let Some(px) = prepare(&path, target_hw) {
            kept.push(px);
        }
    }
    if kept.is_empty() {
        return Err(JsccError::Ingestion(format!("no usable images under {}", root.display())));
    }
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, "folder/split"));
    let n_train = (split_fraction * kept.len() as f64).round() as usize;
    let (h, w) = target_hw;
    let id = format!("folder:{}@{h}x{w}", root.display());
    let gather = |idx: &[usize]| -> Vec<u8> {
        let mut sorted = idx.to_vec();
        sorted.sort();
        sorted.iter().flat_map(|&i| kept[i].iter().copied()).collect()
    };
    let train = Dataset::from_pixels(id.clone(), Split::Train, (h, w, 3), gather(&order[..n_train]))?;
    let test = Dataset::from_pixels(id, Split::Test, (h, w, 3), gather(&order[n_train..]))?;
    Ok((train, test))
}
