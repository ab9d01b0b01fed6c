//! Binary grid-sequence container: `ATGS` magic, version, dimensions, then
//! row-major 32-bit little-endian floats, step by step. Bit-exact across
//! platforms; writes go through a temp file and rename so readers never see
//! a partial sequence.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridField;

const MAGIC: &[u8; 4] = b"ATGS";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 4;

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Serialize `frames` (all same shape, at least one) to `path`. Values are
/// stored as f32, the format's interchange precision.
pub fn write_grid_sequence(path: &Path, frames: &[GridField]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid_param("frames", "sequence must be non-empty"))?;
    for frame in frames {
        crate::grid::check_same_shape(first, frame)?;
    }
    let (height, width) = (first.height(), first.width());
    if height > u32::MAX as usize || width > u32::MAX as usize || frames.len() > u32::MAX as usize
    {
        return Err(Error::invalid_param("frames", "dimensions exceed u32"));
    }

    let mut bytes = Vec::with_capacity(HEADER_LEN + frames.len() * height * width * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&0u16.to_le_bytes());
    bytes.extend_from_slice(&(height as u32).to_le_bytes());
    bytes.extend_from_slice(&(width as u32).to_le_bytes());
    bytes.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for frame in frames {
        for v in frame.values() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }

    let tmp = path.with_extension("atgs.tmp");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a sequence written by [`write_grid_sequence`], validating the header
/// and every value.
pub fn read_grid_sequence(path: &Path) -> Result<Vec<GridField>> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(path, "file shorter than header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(corrupt(path, "bad magic, not a grid-sequence file"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let read_u32 =
        |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let height = read_u32(8) as usize;
    let width = read_u32(12) as usize;
    let steps = read_u32(16) as usize;
    if height == 0 || width == 0 || steps == 0 {
        return Err(corrupt(path, "zero dimension in header"));
    }
    let expected = HEADER_LEN + steps * height * width * 4;
    if bytes.len() != expected {
        return Err(corrupt(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }

    let mut frames = Vec::with_capacity(steps);
    let mut at = HEADER_LEN;
    for step in 0..steps {
        let mut values = Vec::with_capacity(height * width);
        for _ in 0..height * width {
            let v = f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
            if !v.is_finite() {
                return Err(corrupt(path, format!("non-finite value in step {step}")));
            }
            values.push(v as f64);
            at += 4;
        }
        frames.push(GridField::new(height, width, values)?);
    }
    Ok(frames)
}

/// Render a sequence as `step,row,col,value` CSV in physical units.
pub fn export_csv(frames: &[GridField]) -> String {
    let mut out = String::from("step,row,col,value\n");
    for (step, frame) in frames.iter().enumerate() {
        for row in 0..frame.height() {
            for col in 0..frame.width() {
                out.push_str(&format!("{step},{row},{col},{}\n", frame.get(row, col)));
            }
        }
    }
    out
}
