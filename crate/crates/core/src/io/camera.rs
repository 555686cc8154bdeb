//! Per-view camera text files; the layout is documented on the parent
//! module.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{read_text, write_file};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Pose};
use crate::search::DepthRange;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub intrinsics: Matrix3<f64>,
    pub pose: Pose,
    pub range: DepthRange,
}

impl CameraRecord {
    pub fn camera(&self, height: usize, width: usize) -> Result<CameraModel> {
        CameraModel::new(self.intrinsics, height, width)
    }
}

fn push_rows(s: &mut String, m: &Matrix3<f64>) {
    for r in 0..3 {
        let _ = writeln!(s, "{} {} {}", m[(r, 0)], m[(r, 1)], m[(r, 2)]);
    }
}

pub fn encode_camera(record: &CameraRecord) -> String {
    let mut s = String::from("intrinsic\n");
    push_rows(&mut s, &record.intrinsics);
    s.push_str("rotation\n");
    push_rows(&mut s, record.pose.rotation());
    let t = record.pose.translation();
    let _ = writeln!(s, "translation\n{} {} {}", t.x, t.y, t.z);
    let _ = writeln!(s, "range\n{} {}", record.range.min(), record.range.max());
    s
}

pub fn write_camera(path: impl AsRef<Path>, record: &CameraRecord) -> Result<()> {
    write_file(path.as_ref(), encode_camera(record).as_bytes())
}

pub fn decode_camera(text: &str, path: &Path) -> Result<CameraRecord> {
    let mut blocks: Vec<(String, Vec<f64>)> = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            blocks.push((line.to_ascii_lowercase(), Vec::new()));
            continue;
        }
        let Some((_, values)) = blocks.last_mut() else {
            return Err(Error::parse(path, "numbers before the first block label"));
        };
        for tok in line.split_whitespace() {
            values.push(tok.parse().map_err(|_| Error::parse(path, format!("bad number '{tok}'")))?);
        }
    }
    let block = |name: &str, len: usize| -> Result<&[f64]> {
        let (_, v) = blocks
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::parse(path, format!("missing '{name}' block")))?;
        if v.len() != len {
            return Err(Error::parse(path, format!("'{name}' needs {len} numbers, found {}", v.len())));
        }
        Ok(v)
    };
    let intrinsics = Matrix3::from_row_slice(block("intrinsic", 9)?);
    let rotation = Matrix3::from_row_slice(block("rotation", 9)?);
    let translation = Vector3::from_row_slice(block("translation", 3)?);
    let r = block("range", 2)?;
    Ok(CameraRecord {
        intrinsics,
        pose: Pose::new(rotation, translation)?,
        range: DepthRange::new(r[0], r[1])?,
    })
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<CameraRecord> {
    let path = path.as_ref();
    decode_camera(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn round_trip_is_exact() {
        let record = CameraRecord {
            intrinsics: Matrix3::new(160.0, 0.0, 80.0, 0.0, 161.5, 64.25, 0.0, 0.0, 1.0),
            pose: Pose::new(
                *Rotation3::from_euler_angles(0.01, -0.2, 0.3).matrix(),
                Vector3::new(-10.0, 0.5, 1.0 / 3.0),
            )
            .unwrap(),
            range: DepthRange::new(80.0, 120.0).unwrap(),
        };
        let text = encode_camera(&record);
        assert_eq!(decode_camera(&text, Path::new("c")).unwrap(), record);
    }

    #[test]
    fn tolerates_comments_and_reports_missing_blocks() {
        let text = "# cam\nintrinsic\n1 0 0\n0 1 0\n0 0 1\n\nrotation\n1 0 0 0 1 0 0 0 1\ntranslation\n0 0 0\nrange\n1 2\n";
        let r = decode_camera(text, Path::new("c")).unwrap();
        assert_eq!(r.range.max(), 2.0);
        let missing = text.replace("range\n1 2\n", "");
        assert!(decode_camera(&missing, Path::new("c")).is_err());
        let short = text.replace("0 0 0\nrange", "0 0\nrange");
        assert!(decode_camera(&short, Path::new("c")).is_err());
    }
}
