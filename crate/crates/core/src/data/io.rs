//! `CSMRI1` dataset files.
//!
//! Layout, all little-endian: the 8-byte magic `"CSMRI1\0\0"`, then `u32`
//! slice count, `u32` height, `u32` width, then `count * h * w` pairs of
//! `f32` (real, imaginary), row-major per slice.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;

use super::{Dataset, Provenance};

pub const DATASET_MAGIC: &[u8; 8] = b"CSMRI1\0\0";
const HEADER_LEN: usize = 8 + 12;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let (h, w) = dataset.dims();
    let mut buf = Vec::with_capacity(HEADER_LEN + dataset.len() * h * w * 8);
    buf.extend_from_slice(DATASET_MAGIC);
    for v in [dataset.len(), h, w] {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for slice in dataset.slices() {
        for c in slice.data() {
            buf.extend_from_slice(&(c.re as f32).to_le_bytes());
            buf.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn parse(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < DATASET_MAGIC.len() {
        return Err(format_err(bytes.len(), "file too short for magic"));
    }
    if let Some(i) = (0..DATASET_MAGIC.len()).find(|&i| bytes[i] != DATASET_MAGIC[i]) {
        return Err(format_err(i, "bad magic, not a CSMRI1 dataset"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let count = read_u32(bytes, 8) as usize;
    let h = read_u32(bytes, 12) as usize;
    let w = read_u32(bytes, 16) as usize;
    if count == 0 {
        return Err(format_err(8, "dataset holds zero slices"));
    }
    if h == 0 || w == 0 {
        return Err(format_err(12, format!("invalid slice size {h}x{w}")));
    }
    let expected = count
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(8, "header sizes overflow"))?;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated data: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after last slice"));
    }

    let mut slices = Vec::with_capacity(count);
    let mut offset = HEADER_LEN;
    for _ in 0..count {
        let mut data = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            let re = f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(bytes[offset + 4..offset + 8].try_into().expect("4 bytes"));
            if !re.is_finite() || !im.is_finite() {
                return Err(format_err(offset, "non-finite sample value"));
            }
            data.push(Complex64::new(re as f64, im as f64));
            offset += 8;
        }
        slices.push(ComplexImage::new(h, w, data)?);
    }
    Dataset::new(slices, Provenance::File)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    parse(&bytes)
}
