//! Binary PGM (P5) output for probe visualizations.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Writes a `(1, 1, H, W)` non-negative map as an 8-bit binary PGM,
/// normalized so the maximum value maps to 255 (an all-zero map stays
/// black). Output is byte-stable for identical inputs.
pub fn write_pgm<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let s = image.shape();
    if s.b != 1 || s.c != 1 {
        return Err(Error::invalid(
            "write_pgm",
            format!("expected a single plane (1, 1, H, W), got {s}"),
        ));
    }
    let data = image.data();
    if data.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::numeric("PGM input must be finite and non-negative"));
    }
    let max = data.iter().cloned().fold(T::zero(), T::max).to_f64();
    let mut bytes = format!("P5\n{} {}\n255\n", s.w, s.h).into_bytes();
    bytes.reserve(data.len());
    for &v in data {
        let px = if max > 0.0 {
            (v.to_f64() / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        bytes.push(px);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn header_and_normalization_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.pgm");
        let t = Tensor::new(Shape::new(1, 1, 2, 3), vec![0.0, 1.0, 2.0, 4.0, 0.0, 2.0]).unwrap();
        write_pgm(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        // 0, 0.25, 0.5, 1, 0, 0.5 of 255, rounded.
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 64, 128, 255, 0, 128]);
    }

    #[test]
    fn all_zero_planes_stay_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.pgm");
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        write_pgm(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0, 0]);
    }

    #[test]
    fn output_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pgm");
        let b = dir.path().join("b.pgm");
        let t = Tensor::new(Shape::new(1, 1, 1, 4), vec![0.1, 0.7, 0.3, 0.9]).unwrap();
        write_pgm(&a, &t).unwrap();
        write_pgm(&b, &t).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn multi_channel_and_negative_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let multi = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        assert!(write_pgm(&path, &multi).is_err());
        let neg = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.5, -0.1]).unwrap();
        assert!(write_pgm(&path, &neg).is_err());
    }
}
