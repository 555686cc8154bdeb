use std::path::Path;

use serde::Serialize;

use super::write_file;
use crate::error::{Error, Result};

/// Writes rows as CSV with a header derived from the field names.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::parse(path, format!("csv encoding failed: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::parse(path, format!("csv encoding failed: {e}")))?;
    write_file(path, &bytes)
}
