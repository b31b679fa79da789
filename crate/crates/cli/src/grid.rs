//! `--grid "r=START:STOP:STEP,theta=START:STOP:STEP"`, angles in degrees.
//!
//! Radii include `STOP`; angles stop short of 360.

use cdlab_core::geometry::{DiskGrid, DEFAULT_FD_STEP};

use crate::error::{CliError, CliResult};

pub const DEFAULT_GRID: &str = "r=0:0.8:0.1,theta=0:360:30";

fn range(spec: &str, key: &str) -> CliResult<(f64, f64, f64)> {
    let bad = || CliError::field("grid", format!("`{key}` must be START:STOP:STEP, got `{spec}`"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(start.is_finite() && stop.is_finite() && step > 0.0 && step.is_finite() && stop >= start) {
        return Err(CliError::field("grid", format!("`{key}` needs STOP >= START and STEP > 0")));
    }
    Ok((start, stop, step))
}

/// `start + i step` for `i = 0, 1, ..` up to `stop` (within a step fraction).
fn samples(start: f64, stop: f64, step: f64, inclusive: bool) -> Vec<f64> {
    let slack = 1e-9 * step;
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let x = start + i as f64 * step;
        let inside = if inclusive { x <= stop + slack } else { x < stop - slack };
        if !inside {
            break;
        }
        out.push(if (x - stop).abs() <= slack { stop } else { x });
        i += 1;
    }
    out
}

pub fn parse_grid(text: &str, fd_step: Option<f64>) -> CliResult<DiskGrid> {
    let mut r = None;
    let mut theta = None;
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::field("grid", format!("expected key=value, got `{part}`")))?;
        match key.trim() {
            "r" if r.is_none() => r = Some(range(value, "r")?),
            "theta" if theta.is_none() => theta = Some(range(value, "theta")?),
            k => return Err(CliError::field("grid", format!("unexpected or repeated key `{k}`"))),
        }
    }
    let (Some((r0, r1, rs)), Some((t0, t1, ts))) = (r, theta) else {
        return Err(CliError::field("grid", "both `r` and `theta` are required"));
    };
    let radii = samples(r0, r1, rs, true);
    let angles: Vec<f64> = samples(t0, t1, ts, true)
        .into_iter()
        .filter(|a| *a < 360.0)
        .map(f64::to_radians)
        .collect();
    let grid = DiskGrid::new(radii, angles, DEFAULT_FD_STEP)?;
    match fd_step {
        Some(h) => grid.with_fd_step(h).map_err(|e| {
            let mut e = CliError::from(e);
            e.field = Some("fd-step".into());
            e
        }),
        None => Ok(grid),
    }
}
