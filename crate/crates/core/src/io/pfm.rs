//! Portable float maps, single channel. Rows are stored bottom to top.

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::fusion::DepthMap;
use crate::grid::Grid;

/// Little-endian encoding (scale `-1`).
pub fn encode_pfm(grid: &Grid<f32>) -> Vec<u8> {
    let (h, w) = grid.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&grid.get(y, x).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Grid<f32>> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    // Header: magic, width, height, scale, separated by whitespace and
    // terminated by a single whitespace byte.
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(Error::parse(path, format!("expected single-channel 'Pf', got '{}'", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, format!("bad dimension '{s}'")));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let scale: f64 = fields[3]
        .parse()
        .map_err(|_| Error::parse(path, format!("bad scale '{}'", fields[3])))?;
    let little = scale < 0.0;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != h * w * 4 {
        return Err(Error::parse(path, format!("expected {} data bytes, found {}", h * w * 4, body.len())));
    }
    let mut data = vec![0.0f32; h * w];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (i / w, i % w);
        data[(h - 1 - row) * w + x] = v;
    }
    Ok(Grid::from_vec(h, w, data))
}

pub fn write_pfm(path: impl AsRef<Path>, grid: &Grid<f32>) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(grid))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Grid<f32>> {
    let path = path.as_ref();
    decode_pfm(&read_file(path)?, path)
}

/// Invalid pixels are stored as 0.
pub fn write_depth_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let g = Grid::from_fn(depth.height(), depth.width(), |y, x| depth.get(y, x).unwrap_or(0.0) as f32);
    write_pfm(path, &g)
}

/// Positive finite entries are valid.
pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    Ok(DepthMap::from_depths(read_pfm(path)?.map(|&v| v as f64)))
}
