//! Big-endian IDX files as distributed for MNIST and Fashion-MNIST.

use std::path::Path;

use super::{Dataset, ImageShape, Split};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.bytes.len(), "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(slice.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32()?;
        if magic != expected {
            return Err(self.fail(
                0,
                format!("wrong magic 0x{magic:08x}, expected 0x{expected:08x}"),
            ));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated payload: expected {len} bytes, found {available}"),
            ));
        }
        if available > len {
            return Err(self.fail(
                self.pos + len,
                format!("{} trailing bytes after payload", available - len),
            ));
        }
        Ok(&self.bytes[self.pos..])
    }
}

/// Parses an IDX image file into `(count, height, width, pixels/255)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(r.fail(8, format!("degenerate image size {rows}×{cols}")));
    }
    let pixels = r.payload(count * rows * cols)?;
    Ok((count, rows, cols, pixels.iter().map(|&b| b as f32 / 255.0).collect()))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(LABELS_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.payload(count)?.to_vec())
}

/// Loads a single-channel IDX image/label pair. The class count is the
/// largest label plus one, but at least `min_classes`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
    min_classes: usize,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let label_bytes = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (count, rows, cols, pixels) = parse_idx_images(ip, &image_bytes)?;
    let labels = parse_idx_labels(lp, &label_bytes)?;
    if labels.len() != count {
        return Err(Error::Parse {
            path: lp.to_path_buf(),
            offset: 4,
            message: format!("{} labels for {count} images", labels.len()),
        });
    }
    let classes = labels
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
        .max(min_classes);
    Dataset::new(pixels, labels, ImageShape::new(1, rows, cols), classes, split)
}

/// Loads the standard `train-*` / `t10k-*` file pairs from one directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        Split::Train,
        10,
    )?;
    let test = load_idx(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
        Split::Test,
        10,
    )?;
    Ok((train, test))
}
