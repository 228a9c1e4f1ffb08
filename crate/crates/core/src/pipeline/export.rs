//! Image export: 8-bit portable graymaps for inspection and STCL payloads
//! for exact values.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::format::{self, Payload};
use crate::volume::Volume;

/// Binary PGM (`P5`) bytes of a `rows x cols` 8-bit image.
pub fn pgm_bytes(rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != rows * cols {
        return Err(Error::Contract(format!("{} pixels for a {rows}x{cols} image", pixels.len())));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_pgm(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, pgm_bytes(rows, cols, pixels)?).map_err(|e| Error::io(path, e))
}

/// Storage value to an 8-bit pixel, rounding and clamping.
pub fn to_pixel(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes one graymap per slice and channel as
/// `{stem}_{channel}_s{slice:02}.pgm` (slices 1-based).
pub fn write_slices(dir: &Path, stem: &str, volume: &Volume, channels: &[&str]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ch, name) in channels.iter().enumerate().take(volume.channels) {
        for s in 0..volume.slices {
            let mut px = Vec::with_capacity(volume.rows * volume.cols);
            for r in 0..volume.rows {
                for c in 0..volume.cols {
                    px.push(to_pixel(volume.get(s, r, c, ch)));
                }
            }
            let path = dir.join(format!("{stem}_{name}_s{:02}.pgm", s + 1));
            write_pgm(&path, volume.rows, volume.cols, &px)?;
        }
    }
    Ok(())
}

/// Writes a volume as an STCL file with the given metadata.
pub fn write_raw(path: &Path, meta: Map<String, Value>, volume: &Volume) -> Result<()> {
    format::write_file(path, &meta, &volume.dims(), &Payload::F32(volume.data.clone()))
}
