//! IDX-format MNIST ingestion.
//!
//! Big-endian headers per the published format: magic 0x00000803 for image
//! files (count, rows, cols follow), 0x00000801 for label files. Images
//! load as reals in [0, 1] and are zero-padded centered to 32x32, the
//! classic LeNet input convention.

use std::path::{Path, PathBuf};

use super::{Dataset, DatasetTargets};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Padded image extent expected by the network.
pub const MNIST_PAD_SIZE: usize = 32;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw (unscaled, unpadded) image payload of an IDX file.
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let end = at + 4;
    if end > bytes.len() {
        return Err(Error::data(format!("truncated IDX header reading {what}")));
    }
    Ok(u32::from_be_bytes(
        bytes[at..end].try_into().expect("4 bytes"),
    ))
}

/// Standard file names inside an MNIST directory:
/// `(images, labels)` for the train or test split.
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    if train {
        (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )
    } else {
        (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )
    }
}

pub fn load_idx_raw_images(path: &Path) -> Result<RawImages> {
    let bytes = std::fs::read(path)?;
    let magic = be_u32(&bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::data(format!(
            "{}: expected image magic {IMAGES_MAGIC:#010x}, got {magic:#010x}",
            path.display()
        )));
    }
    let count = be_u32(&bytes, 4, "image count")? as usize;
    let rows = be_u32(&bytes, 8, "row count")? as usize;
    let cols = be_u32(&bytes, 12, "col count")? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::data(format!(
            "{}: truncated pixel data ({} of {need} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..need].to_vec(),
    })
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    let magic = be_u32(&bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::data(format!(
            "{}: expected label magic {LABELS_MAGIC:#010x}, got {magic:#010x}",
            path.display()
        )));
    }
    let count = be_u32(&bytes, 4, "label count")? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::data(format!(
            "{}: truncated labels ({} of {need} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    let labels = bytes[8..need].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::data(format!(
            "{}: label {bad} outside 0-9",
            path.display()
        )));
    }
    Ok(labels)
}

/// Loads a paired image/label file set, scaled to [0, 1] and padded to
/// `MNIST_PAD_SIZE`. `limit` keeps only the first so-many samples.
pub fn load_mnist<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<Dataset<T>> {
    let raw = load_idx_raw_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if raw.count != labels.len() {
        return Err(Error::data(format!(
            "{} images but {} labels",
            raw.count,
            labels.len()
        )));
    }
    if raw.rows > MNIST_PAD_SIZE || raw.cols > MNIST_PAD_SIZE {
        return Err(Error::data(format!(
            "{}x{} images exceed the {MNIST_PAD_SIZE} input extent",
            raw.rows, raw.cols
        )));
    }
    let keep = limit.unwrap_or(raw.count).min(raw.count);
    let off_r = (MNIST_PAD_SIZE - raw.rows) / 2;
    let off_c = (MNIST_PAD_SIZE - raw.cols) / 2;
    let plane = MNIST_PAD_SIZE * MNIST_PAD_SIZE;
    let mut images = vec![T::zero(); keep * plane];
    let scale = 1.0 / 255.0;
    for i in 0..keep {
        let src = i * raw.rows * raw.cols;
        let dst = i * plane;
        for r in 0..raw.rows {
            for c in 0..raw.cols {
                let px = raw.pixels[src + r * raw.cols + c];
                images[dst + (off_r + r) * MNIST_PAD_SIZE + (off_c + c)] =
                    T::from_f64(px as f64 * scale);
            }
        }
    }
    Dataset::from_parts(
        MNIST_PAD_SIZE,
        images,
        DatasetTargets::Labels(labels[..keep].to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_images(dir: &Path, name: &str, rows: usize, cols: usize, imgs: &[&[u8]]) -> PathBuf {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(imgs.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&(rows as u32).to_be_bytes());
        bytes.extend_from_slice(&(cols as u32).to_be_bytes());
        for img in imgs {
            assert_eq!(img.len(), rows * cols);
            bytes.extend_from_slice(img);
        }
        let path = dir.join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    }

    fn write_labels(dir: &Path, name: &str, labels: &[u8]) -> PathBuf {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        let path = dir.join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_labels(dir.path(), "labels", &[7, 2, 1]);
        assert_eq!(load_idx_labels(&path).unwrap(), vec![7, 2, 1]);
    }

    #[test]
    fn images_scale_and_pad_centered() {
        let dir = tempfile::tempdir().unwrap();
        let zero = [0u8; 9];
        let mut dot = [0u8; 9];
        dot[0] = 255; // top-left of the raw 3x3
        let images = write_images(dir.path(), "imgs", 3, 3, &[&zero, &dot]);
        let labels = write_labels(dir.path(), "labels", &[0, 1]);
        let d: Dataset<f64> = load_mnist(&images, &labels, None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.image_size(), 32);
        assert!(d.image(0).iter().all(|&v| v == 0.0));
        // (32 - 3) / 2 = 14: raw (0, 0) lands at padded (14, 14).
        let plane = d.image(1);
        assert_eq!(plane[14 * 32 + 14], 1.0);
        assert_eq!(plane.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = [0u8; 4];
        let images = write_images(dir.path(), "imgs", 2, 2, &[&img, &img]);
        let labels = write_labels(dir.path(), "labels", &[1, 2, 3]);
        assert!(load_mnist::<f32>(&images, &labels, None).is_err());
    }

    #[test]
    fn wrong_magic_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_labels(dir.path(), "as-labels", &[1]);
        assert!(load_idx_raw_images(&labels).is_err());
        let img = [0u8; 4];
        let images = write_images(dir.path(), "as-images", 2, 2, &[&img]);
        assert!(load_idx_labels(&images).is_err());
    }

    #[test]
    fn truncated_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = [7u8; 4];
        let images = write_images(dir.path(), "imgs", 2, 2, &[&img]);
        let bytes = std::fs::read(&images).unwrap();
        let cut = dir.path().join("cut");
        std::fs::write(&cut, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_idx_raw_images(&cut).is_err());
        std::fs::write(&cut, &bytes[..6]).unwrap();
        assert!(load_idx_raw_images(&cut).is_err());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_labels(dir.path(), "labels", &[3, 10]);
        assert!(load_idx_labels(&path).is_err());
    }

    #[test]
    fn limit_keeps_a_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let a = [10u8; 4];
        let b = [20u8; 4];
        let c = [30u8; 4];
        let images = write_images(dir.path(), "imgs", 2, 2, &[&a, &b, &c]);
        let labels = write_labels(dir.path(), "labels", &[1, 2, 3]);
        let d: Dataset<f32> = load_mnist(&images, &labels, Some(2)).unwrap();
        assert_eq!(d.len(), 2);
        match d.targets() {
            DatasetTargets::Labels(l) => assert_eq!(l, &[1, 2]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_idx_labels(Path::new("/nonexistent/labels")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
