//! File formats read and written by the pipeline.
//!
//! Camera files are line-oriented text with four labelled blocks; blank
//! lines and lines starting with `#` are ignored:
//!
//! ```text
//! intrinsic
//! fx 0 cx
//! 0 fy cy
//! 0 0 1
//! rotation
//! r00 r01 r02
//! r10 r11 r12
//! r20 r21 r22
//! translation
//! tx ty tz
//! range
//! d_min d_max
//! ```
//!
//! The rotation and translation map world to camera coordinates. The image
//! size comes from the matching image file.

mod camera;
mod params;
mod pfm;
mod ply;
mod raster;
mod records;
mod volume;

pub use camera::{read_camera, write_camera, CameraRecord};
pub use params::{read_params, write_params};
pub use pfm::{read_depth_pfm, read_pfm, write_depth_pfm, write_pfm};
pub use ply::{read_ply, write_ply};
pub use raster::{load_gray, save_gray_png16};
pub use records::write_csv;
pub use volume::{read_volume, write_volume};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Creates parent directories and writes `bytes` in one go.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
