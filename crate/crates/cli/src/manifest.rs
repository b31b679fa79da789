//! Run manifests: `<out>.manifest.json` next to every written output.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::output::{file_digest, json_text, write_atomic};

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    /// `(path as given, sha256)`.
    pub specs: Vec<(String, String)>,
    pub grid: Option<String>,
    pub fd_step: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: f64,
    pub elapsed_seconds: f64,
    pub outputs: Vec<(String, String)>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn pairs(v: &[(String, String)]) -> Value {
    Value::Array(v.iter().map(|(p, d)| json!({"path": p, "sha256": d})).collect())
}

fn read_pairs(v: Option<&Value>, key: &str) -> CliResult<Vec<(String, String)>> {
    let bad = || CliError::field("manifest", format!("malformed `{key}`"));
    v.and_then(Value::as_array)
        .ok_or_else(bad)?
        .iter()
        .map(|e| {
            let p = e.get("path").and_then(Value::as_str).ok_or_else(bad)?;
            let d = e.get("sha256").and_then(Value::as_str).ok_or_else(bad)?;
            Ok((p.to_string(), d.to_string()))
        })
        .collect()
}

impl RunManifest {
    pub fn to_json(&self) -> Value {
        json!({
            "argv": self.argv,
            "cwd": self.cwd.to_string_lossy(),
            "specs": pairs(&self.specs),
            "grid": self.grid,
            "fd_step": self.fd_step,
            "tol": self.tol,
            "seed": self.seed,
            "version": self.version,
            "started_unix": self.started_unix,
            "elapsed_seconds": self.elapsed_seconds,
            "outputs": pairs(&self.outputs),
        })
    }

    pub fn write(&self, out: &Path) -> CliResult<PathBuf> {
        let path = manifest_path(out);
        write_atomic(&path, json_text(&self.to_json()).as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<RunManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::field("manifest", format!("cannot read {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::field("manifest", format!("not valid JSON: {e}")))?;
        let bad = |k: &str| CliError::field("manifest", format!("malformed `{k}`"));
        let argv = v
            .get("argv")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("argv"))?
            .iter()
            .map(|a| a.as_str().map(str::to_string).ok_or_else(|| bad("argv")))
            .collect::<CliResult<_>>()?;
        let cwd = PathBuf::from(v.get("cwd").and_then(Value::as_str).ok_or_else(|| bad("cwd"))?);
        Ok(RunManifest {
            argv,
            cwd,
            specs: read_pairs(v.get("specs"), "specs")?,
            grid: v.get("grid").and_then(Value::as_str).map(str::to_string),
            fd_step: v.get("fd_step").and_then(Value::as_f64),
            tol: v.get("tol").and_then(Value::as_f64),
            seed: v.get("seed").and_then(Value::as_u64),
            version: v.get("version").and_then(Value::as_str).unwrap_or_default().to_string(),
            started_unix: v.get("started_unix").and_then(Value::as_f64).unwrap_or(0.0),
            elapsed_seconds: v.get("elapsed_seconds").and_then(Value::as_f64).unwrap_or(0.0),
            outputs: read_pairs(v.get("outputs"), "outputs")?,
        })
    }

    /// `argv` with relative `--spec`/`--out` values anchored at `cwd`.
    pub fn anchored_argv(&self) -> Vec<String> {
        let anchor = |p: &str| {
            let path = Path::new(p);
            if path.is_absolute() {
                p.to_string()
            } else {
                self.cwd.join(path).to_string_lossy().into_owned()
            }
        };
        let mut out = Vec::with_capacity(self.argv.len());
        let mut next_is_path = false;
        for a in &self.argv {
            if next_is_path {
                out.push(anchor(a));
                next_is_path = false;
            } else if a == "--spec" || a == "--out" {
                out.push(a.clone());
                next_is_path = true;
            } else if let Some(v) = a.strip_prefix("--spec=") {
                out.push(format!("--spec={}", anchor(v)));
            } else if let Some(v) = a.strip_prefix("--out=") {
                out.push(format!("--out={}", anchor(v)));
            } else {
                out.push(a.clone());
            }
        }
        out
    }

    /// Checks that every spec file still has its recorded digest.
    pub fn check_specs(&self) -> CliResult<()> {
        for (p, d) in &self.specs {
            let path = if Path::new(p).is_absolute() {
                PathBuf::from(p)
            } else {
                self.cwd.join(p)
            };
            let now = file_digest(&path).map_err(|e| CliError::field("spec", e.message))?;
            if &now != d {
                return Err(CliError::field("spec", format!("{p} changed since the manifest was written")));
            }
        }
        Ok(())
    }
}
