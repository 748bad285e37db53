//! Big-endian IDX files, optionally gzip-compressed.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::DatasetSplit;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("bad gzip stream: {e}"),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], path: &Path, expected: u32, ndims: usize) -> Result<Vec<usize>> {
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let need = 4 * (1 + ndims);
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if bytes.len() >= 4 && word(0) != expected {
        return Err(fail(format!("found magic 0x{:08x}, expected 0x{expected:08x}", word(0))));
    }
    if bytes.len() < need {
        return Err(fail(format!("truncated header: {} of {need} bytes", bytes.len())));
    }
    let dims: Vec<usize> = (1..=ndims).map(|i| word(i) as usize).collect();
    let body: usize = dims.iter().product();
    if bytes.len() != need + body {
        return Err(fail(format!(
            "header declares {body} data bytes but file holds {}",
            bytes.len() - need
        )));
    }
    Ok(dims)
}

/// Parses an image file into `[n×1×h×w]` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let dims = header(bytes, path, IMAGE_MAGIC, 3)?;
    let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    header(bytes, path, LABEL_MAGIC, 1)?;
    Ok(bytes[8..].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label file pair as a 10-class split.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetSplit> {
    let images = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Consistency(format!(
            "{} has {} images but {} has {} labels",
            images_path.display(),
            images.shape()[0],
            labels_path.display(),
            labels.len()
        )));
    }
    DatasetSplit::new(images, labels, MNIST_CLASSES)
}

/// Writes a single-channel split as an uncompressed IDX pair, quantizing
/// pixels (clamped to `[0, 1]`) to bytes.
pub fn write_idx(split: &DatasetSplit, images_path: &Path, labels_path: &Path) -> Result<()> {
    let s = split.images().shape();
    if s[1] != 1 {
        return Err(Error::Contract(format!("IDX holds one channel, split has {}", s[1])));
    }
    if let Some(&y) = split.labels().iter().find(|&&y| y > 255) {
        return Err(Error::Contract(format!("label {y} does not fit in a byte")));
    }
    let mut img = Vec::with_capacity(16 + split.images().len());
    for x in [IMAGE_MAGIC as usize, s[0], s[2], s[3]] {
        img.extend_from_slice(&(x as u32).to_be_bytes());
    }
    img.extend(split.images().data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lbl = Vec::with_capacity(8 + split.len());
    for x in [LABEL_MAGIC as usize, split.len()] {
        lbl.extend_from_slice(&(x as u32).to_be_bytes());
    }
    lbl.extend(split.labels().iter().map(|&y| y as u8));
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lbl).map_err(|e| Error::io(labels_path, e))
}
