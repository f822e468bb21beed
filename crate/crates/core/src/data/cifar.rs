use std::fs;
use std::path::{Path, PathBuf};

use super::LabeledDataset;
use crate::error::{Error, Result};

/// One label byte followed by 32x32 pixels for each of the R, G, B planes.
pub const CIFAR10_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const BATCH_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

fn decode_batch(path: &Path, bytes: &[u8], labels: &mut Vec<u32>, pixels: &mut Vec<f32>) -> Result<()> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_BYTES) {
        let whole = bytes.len() / CIFAR10_RECORD_BYTES;
        return Err(Error::CorruptRecord {
            path: path.to_path_buf(),
            offset: (whole * CIFAR10_RECORD_BYTES) as u64,
            reason: format!(
                "truncated record: file size {} is not a multiple of {CIFAR10_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    labels.reserve(bytes.len() / CIFAR10_RECORD_BYTES);
    pixels.reserve(bytes.len() / CIFAR10_RECORD_BYTES * (CIFAR10_RECORD_BYTES - 1));
    for (r, record) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = record[0];
        if usize::from(label) >= CIFAR10_CLASSES.len() {
            return Err(Error::CorruptRecord {
                path: path.to_path_buf(),
                offset: (r * CIFAR10_RECORD_BYTES) as u64,
                reason: format!("label byte {label} is not a CIFAR-10 class"),
            });
        }
        labels.push(u32::from(label));
        // planes are already channel-major (R then G then B), i.e. CHW
        pixels.extend(record[1..].iter().map(|&p| f32::from(p) / 255.0));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        reason: format!("cannot read batch file: {e}"),
    })
}

fn class_names(dir: &Path) -> Vec<String> {
    let from_meta = fs::read_to_string(dir.join("batches.meta.txt")).ok().map(|s| {
        s.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect::<Vec<_>>()
    });
    match from_meta {
        Some(names) if names.len() == CIFAR10_CLASSES.len() => names,
        _ => CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
    }
}

/// Load a single CIFAR-10 binary batch. Pixels are scaled to `[0, 1]`.
pub fn load_cifar10_batch(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    decode_batch(path, &bytes, &mut labels, &mut pixels)?;
    let names = path.parent().map(class_names).unwrap_or_else(|| {
        CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()
    });
    LabeledDataset::new(vec![3, 32, 32], pixels, labels, names)
}

/// Load the five training batches followed by the test batch, in that order.
///
/// Pixels are scaled to `[0, 1]`; channel normalization is fitted later on the
/// training split (see [`super::Splits::normalize_from_train`]).
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for name in BATCH_FILES {
        let path: PathBuf = dir.join(name);
        let bytes = read_file(&path)?;
        decode_batch(&path, &bytes, &mut labels, &mut pixels)?;
    }
    LabeledDataset::new(vec![3, 32, 32], pixels, labels, class_names(dir))
}
