//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by a
//! 3×32×32 image in channel-major order.

use std::path::Path;

use super::{Dataset, ImageShape, Split};
use crate::error::{Error, Result};

const SIDE: usize = 32;
const IMAGE_BYTES: usize = 3 * SIDE * SIDE;
const RECORD_BYTES: usize = 1 + IMAGE_BYTES;
const CLASSES: usize = 10;

fn parse_batch(path: &Path, bytes: &[u8], pixels: &mut Vec<f32>, labels: &mut Vec<u8>) -> Result<()> {
    let fail = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(fail(
            bytes.len(),
            format!("length {} is not a positive multiple of {RECORD_BYTES}", bytes.len()),
        ));
    }
    for (i, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= CLASSES {
            return Err(fail(i * RECORD_BYTES, format!("label {label} out of range")));
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(())
}

pub fn load_cifar10<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        parse_batch(p, &bytes, &mut pixels, &mut labels)?;
    }
    Dataset::new(pixels, labels, ImageShape::new(3, SIDE, SIDE), CLASSES, split)
}

/// Loads `data_batch_{1..5}.bin` and `test_batch.bin` from one directory.
pub fn load_cifar10_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    Ok((
        load_cifar10(&train, Split::Train)?,
        load_cifar10(&[dir.join("test_batch.bin")], Split::Test)?,
    ))
}
