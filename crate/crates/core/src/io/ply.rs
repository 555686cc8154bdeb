//! ASCII PLY point clouds with optional per-point gray values.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{read_text, write_file};
use crate::error::{Error, Result};
use crate::fusion::{Point, PointCloud};

pub fn encode_ply(cloud: &PointCloud) -> String {
    let gray = cloud.points.iter().any(|p| p.gray.is_some());
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if gray {
        s.push_str("property float gray\n");
    }
    s.push_str("end_header\n");
    for p in &cloud.points {
        let v = p.position;
        let _ = write!(s, "{} {} {}", v.x, v.y, v.z);
        if gray {
            let _ = write!(s, " {}", p.gray.unwrap_or(0.0));
        }
        s.push('\n');
    }
    s
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_file(path.as_ref(), encode_ply(cloud).as_bytes())
}

/// Reads files produced by [`write_ply`].
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(Error::parse(path, "missing 'ply' magic"));
    }
    let mut count = None;
    let mut properties = 0usize;
    for line in lines.by_ref() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::parse(path, format!("unsupported format '{fmt}'")))
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::parse(path, "bad vertex count"))?)
            }
            ["property", ..] => properties += 1,
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::parse(path, "missing vertex element"))?;
    if !(3..=4).contains(&properties) {
        return Err(Error::parse(path, format!("expected 3 or 4 properties, found {properties}")));
    }
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, format!("bad number '{t}'"))))
            .collect::<Result<_>>()?;
        if v.len() != properties {
            return Err(Error::parse(path, format!("vertex line '{line}' has {} fields", v.len())));
        }
        points.push(Point {
            position: Vector3::new(v[0], v[1], v[2]),
            gray: v.get(3).map(|&g| g as f32),
        });
    }
    if points.len() != count {
        return Err(Error::parse(path, "fewer vertices than declared"));
    }
    Ok(PointCloud { points })
}
