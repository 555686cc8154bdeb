//! Debug dumps of cost volumes: one text header line followed by raw
//! little-endian `f32` values in `D, H, W, G` order.

use std::path::Path;

use super::{read_file, write_file};
use crate::costvol::CostVolume;
use crate::error::{Error, Result};

pub fn write_volume(path: impl AsRef<Path>, vol: &CostVolume) -> Result<()> {
    let (d, h, w, g) = vol.shape();
    let mut out = format!("volume f32le D={d} H={h} W={w} G={g}\n").into_bytes();
    out.reserve(vol.len() * 4);
    for j in 0..d {
        for y in 0..h {
            for x in 0..w {
                for k in 0..g {
                    out.extend_from_slice(&vol.value(j, y, x, k).to_le_bytes());
                }
            }
        }
    }
    write_file(path.as_ref(), &out)
}

/// `(D, H, W, G)`.
pub type VolumeShape = (usize, usize, usize, usize);

/// Reads a dump back as its shape and the values in file order.
pub fn read_volume(path: impl AsRef<Path>) -> Result<(VolumeShape, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, "missing header"))?;
    let header = String::from_utf8_lossy(&bytes[..nl]);
    let mut dims = [0usize; 4];
    for (i, key) in ["D=", "H=", "W=", "G="].iter().enumerate() {
        dims[i] = header
            .split_whitespace()
            .find_map(|t| t.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(path, format!("header lacks {key}")))?;
    }
    let body = &bytes[nl + 1..];
    let n: usize = dims.iter().product();
    if body.len() != n * 4 {
        return Err(Error::parse(path, format!("expected {} data bytes, found {}", n * 4, body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(((dims[0], dims[1], dims[2], dims[3]), values))
}
