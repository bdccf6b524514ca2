//! CIFAR-10 binary batches: each record is one label byte followed by 3072
//! channel-planar pixel bytes (1024 R, 1024 G, 1024 B, row-major 32×32).

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{JsccError, Result};

pub const CIFAR_RECORD_LEN: usize = 1 + 3072;
const RECORDS_PER_FILE: usize = 10000;
const SIDE: usize = 32;

fn files(split: Split) -> Vec<String> {
    match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    }
}

/// Planar record → (label, interleaved HWC pixels).
pub fn decode_record(record: &[u8]) -> (u8, Vec<u8>) {
    let plane = SIDE * SIDE;
    let mut hwc = vec![0u8; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            hwc[p * 3 + c] = record[1 + c * plane + p];
        }
    }
    (record[0], hwc)
}

/// Inverse of [`decode_record`].
pub fn encode_record(label: u8, hwc: &[u8]) -> Vec<u8> {
    let plane = SIDE * SIDE;
    let mut rec = vec![0u8; CIFAR_RECORD_LEN];
    rec[0] = label;
    for p in 0..plane {
        for c in 0..3 {
            rec[1 + c * plane + p] = hwc[p * 3 + c];
        }
    }
    rec
}

/// Full split: 50000 train or 10000 test images.
pub fn load_cifar10(root: &Path, split: Split) -> Result<Dataset> {
    load_cifar10_subset(root, split, usize::MAX)
}

/// The first `limit` records of a split, reading only the files needed.
pub fn load_cifar10_subset(root: &Path, split: Split, limit: usize) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut count = 0;
    for name in files(split) {
        if count >= limit {
            break;
        }
        let path = root.join(&name);
        let bytes = std::fs::read(&path).map_err(|e| {
            JsccError::Ingestion(format!(
                "cannot read {} ({e}); expected {} bytes of CIFAR-10 records",
                path.display(),
                RECORDS_PER_FILE * CIFAR_RECORD_LEN
            ))
        })?;
        if bytes.len() != RECORDS_PER_FILE * CIFAR_RECORD_LEN {
            return Err(JsccError::Ingestion(format!(
                "{} has {} bytes, expected {}",
                path.display(),
                bytes.len(),
                RECORDS_PER_FILE * CIFAR_RECORD_LEN
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            if count >= limit {
                break;
            }
            pixels.extend(decode_record(rec).1);
            count += 1;
        }
    }
    Dataset::from_pixels("cifar10", split, (SIDE, SIDE, 3), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let rec: Vec<u8> = (0..CIFAR_RECORD_LEN).map(|i| (i * 31 % 251) as u8).collect();
        let (label, hwc) = decode_record(&rec);
        assert_eq!(label, rec[0]);
        // Pixel (0, 1): red plane offset 1, green 1025, blue 2049.
        assert_eq!(&hwc[3..6], &[rec[2], rec[1026], rec[2050]]);
        assert_eq!(encode_record(label, &hwc), rec);
    }

    #[test]
    fn missing_and_short_files_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path(), Split::Test).unwrap_err();
        assert!(err.to_string().contains("test_batch.bin"), "{err}");
        std::fs::write(dir.path().join("test_batch.bin"), [0u8; 100]).unwrap();
        let err = load_cifar10(dir.path(), Split::Test).unwrap_err();
        assert!(err.to_string().contains("30730000"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn loads_counts_and_subsets() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::with_capacity(RECORDS_PER_FILE * CIFAR_RECORD_LEN);
        for i in 0..RECORDS_PER_FILE {
            let hwc: Vec<u8> = (0..3072).map(|p| ((i + p) % 256) as u8).collect();
            bytes.extend(encode_record((i % 10) as u8, &hwc));
        }
        std::fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
        let d = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(d.len(), 10000);
        assert_eq!(d.image(3)[0], 3);
        let sub = load_cifar10_subset(dir.path(), Split::Test, 1000).unwrap();
        assert_eq!(sub.len(), 1000);
        assert_eq!(sub.image(999), d.image(999));
    }
}
