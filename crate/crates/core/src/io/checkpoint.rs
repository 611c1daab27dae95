//! Versioned binary checkpoint: named tensors, little-endian throughout.
//!
//! Layout: the ASCII magic `CPOOLCKPT1`, then records until end of file.
//! Each record is `name_len: u32`, the UTF-8 name, four `u32` extents
//! (b, c, h, w), and the raw scalars. The scalar width is the element
//! type of the caller — readers must use the precision the file was
//! written with (mismatches fail structurally, not silently).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"CPOOLCKPT1";

/// Longest accepted record name; a stray length usually means the file was
/// written with a different scalar precision.
const MAX_NAME: usize = 1 << 16;

/// Writes named tensors in iteration order.
pub fn write_checkpoint<'a, T, I>(path: &Path, entries: I) -> Result<()>
where
    T: Scalar + 'a,
    I: IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
{
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    for (name, tensor) in entries {
        if name.len() > MAX_NAME {
            return Err(Error::invalid("write_checkpoint", "record name too long"));
        }
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        let s = tensor.shape();
        for extent in [s.b, s.c, s.h, s.w] {
            let e = u32::try_from(extent)
                .map_err(|_| Error::invalid("write_checkpoint", "extent exceeds u32"))?;
            bytes.extend_from_slice(&e.to_le_bytes());
        }
        bytes.reserve(tensor.numel() * T::BYTES);
        for &v in tensor.data() {
            v.write_le(&mut bytes);
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads every record, in file order. Tensors come back as constants;
/// installing them into a model re-marks them trainable.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = std::fs::read(path)?;
    let whine = |what: &str| {
        Error::data(format!(
            "{}: {what} (was the file written with a different precision?)",
            path.display()
        ))
    };
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
    {
        return Err(Error::data(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut at = CHECKPOINT_MAGIC.len();
    let mut entries = Vec::new();
    let take = |at: &mut usize, n: usize, what: &str| -> Result<std::ops::Range<usize>> {
        let range = *at..*at + n;
        if range.end > bytes.len() {
            return Err(whine(&format!("truncated {what}")));
        }
        *at = range.end;
        Ok(range)
    };
    while at < bytes.len() {
        let r = take(&mut at, 4, "name length")?;
        let name_len = u32::from_le_bytes(bytes[r].try_into().expect("4 bytes")) as usize;
        if name_len > MAX_NAME {
            return Err(whine("implausible record name length"));
        }
        let r = take(&mut at, name_len, "record name")?;
        let name = std::str::from_utf8(&bytes[r])
            .map_err(|_| whine("record name is not UTF-8"))?
            .to_string();
        let mut extents = [0usize; 4];
        for e in &mut extents {
            let r = take(&mut at, 4, "extent")?;
            *e = u32::from_le_bytes(bytes[r].try_into().expect("4 bytes")) as usize;
        }
        // Corrupt extents could overflow the payload size; multiply checked.
        let payload = extents
            .iter()
            .try_fold(T::BYTES, |acc, &e| acc.checked_mul(e))
            .filter(|&p| p <= bytes.len())
            .ok_or_else(|| whine("implausible extents"))?;
        let shape = Shape::new(extents[0], extents[1], extents[2], extents[3]);
        let r = take(&mut at, payload, "tensor payload")?;
        let data = bytes[r]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect::<Vec<T>>();
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}
