//! CSV/JSON emission. Files are written to a temporary sibling and renamed.

use std::io::Write;
use std::path::Path;

use cdlab_core::geometry::DiskGrid;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Seventeen significant digits, e.g. `-1.0000000000000000e0`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header `re_w,im_w,<columns>` and one row per grid point, radius-major.
pub fn grid_csv(grid: &DiskGrid, columns: &[String], rows: &[Vec<f64>]) -> CliResult<String> {
    let points = grid.points();
    if points.is_empty() || rows.len() != points.len() {
        return Err(CliError::new("field does not match its grid"));
    }
    let mut out = String::from("re_w,im_w");
    for c in columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (w, row) in points.iter().zip(rows) {
        if row.len() != columns.len() {
            return Err(CliError::new("row width does not match the header"));
        }
        out.push_str(&fmt_real(w.re));
        out.push(',');
        out.push_str(&fmt_real(w.im));
        for x in row {
            out.push(',');
            out.push_str(&fmt_real(*x));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable value");
    s.push('\n');
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::field("out", format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let unwritable = |e: std::io::Error| CliError::field("out", format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(unwritable)?;
    tmp.write_all(contents).map_err(unwritable)?;
    tmp.as_file().sync_all().map_err(unwritable)?;
    tmp.persist(path).map_err(|e| unwritable(e.error))?;
    Ok(())
}
