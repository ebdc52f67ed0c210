//! File and stream writers for trajectories, certificates, stability charts,
//! and error envelopes.
//!
//! All floating-point values are written as `{:.8e}` scientific notation
//! (NaN spelled `NaN`), so identical runs produce byte-identical files. The
//! JSON documents contain no absolute paths and no timestamps for the same
//! reason.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::observer::{observer_error_bound, ObserverConfig};
use crate::plant::TruckParams;
use crate::sim::Trajectory;
use crate::stability::{AxisLine, CriticalDelay, StabilityChart, StabilityGrid, STABLE_RE_THRESHOLD};

/// Errors raised when writing result files.
#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot serialize {what}: {source}")]
    Json {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Canonical float formatting for CSV output.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.8e}")
    }
}

/// Column order of the trajectory CSV.
pub const TRAJECTORY_HEADER: &str =
    "t,D,v,v1,phi,u_cmd,u_applied,h,b,b_hat,e,e_bound,y_bound,h_bar";

/// Writes the trajectory as CSV, keeping every `decimation`-th sample plus
/// the final one. Statistics in the metadata always reflect the full
/// resolution regardless of thinning.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    decimation: usize,
) -> Result<(), OutputError> {
    assert!(decimation >= 1, "decimation must be >= 1");
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        let n = traj.t.len();
        for i in (0..n).step_by(decimation) {
            emit_row(&mut w, traj, i)?;
        }
        if n > 0 && !(n - 1).is_multiple_of(decimation) {
            emit_row(&mut w, traj, n - 1)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

fn emit_row<W: Write>(w: &mut W, traj: &Trajectory, i: usize) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_float(traj.t[i]),
        fmt_float(traj.d[i]),
        fmt_float(traj.v[i]),
        fmt_float(traj.v1[i]),
        fmt_float(traj.phi[i]),
        fmt_float(traj.u_cmd[i]),
        fmt_float(traj.u_applied[i]),
        fmt_float(traj.h[i]),
        fmt_float(traj.b[i]),
        fmt_float(traj.b_hat[i]),
        fmt_float(traj.e[i]),
        fmt_float(traj.e_bound[i]),
        fmt_float(traj.y_bound[i]),
        fmt_float(traj.h_bar[i]),
    )
}

/// Writes any serializable document as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(
    path: &Path,
    value: &T,
    what: &'static str,
) -> Result<(), OutputError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|source| OutputError::Json { what, source })?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Writes the gain-plane boundary points as CSV.
pub fn write_chart_csv(path: &Path, chart: &StabilityChart) -> Result<(), OutputError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "omega,alpha,k_b,branch")?;
        for p in &chart.points {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_float(p.omega),
                fmt_float(p.alpha),
                fmt_float(p.k_b),
                p.branch
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Companion document for a chart CSV: delay, search box, axes lines, and
/// (when defined) the critical delay of the plant.
#[derive(Serialize)]
pub struct ChartSidecar<'a> {
    pub tau: f64,
    pub alpha_max: f64,
    pub kb_max: f64,
    pub n_points: usize,
    pub params: &'a TruckParams,
    pub axes: &'a [AxisLine],
    pub gaps: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical_delay: Option<CriticalDelay>,
}

/// Writes the chart sidecar JSON next to the CSV.
pub fn write_chart_sidecar(
    path: &Path,
    chart: &StabilityChart,
    params: &TruckParams,
    critical_delay: Option<CriticalDelay>,
) -> Result<(), OutputError> {
    let doc = ChartSidecar {
        tau: chart.tau,
        alpha_max: chart.alpha_max,
        kb_max: chart.kb_max,
        n_points: chart.points.len(),
        params,
        axes: &chart.axes,
        gaps: &chart.gaps,
        critical_delay,
    };
    write_json(path, &doc, "stability chart sidecar")
}

/// Writes a rightmost-root gain grid as long-form CSV.
pub fn write_grid_csv(path: &Path, grid: &StabilityGrid) -> Result<(), OutputError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "alpha,k_b,rightmost_re,stable")?;
        for (i, &alpha) in grid.alphas.iter().enumerate() {
            for (j, &k_b) in grid.k_bs.iter().enumerate() {
                let re = grid.rightmost(i, j);
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt_float(alpha),
                    fmt_float(k_b),
                    fmt_float(re),
                    re < STABLE_RE_THRESHOLD
                )?;
            }
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Streams the observer error envelope as `t,bound` CSV rows.
pub fn write_bound_csv<W: Write>(
    w: &mut W,
    cfg: &ObserverConfig,
    t_max: f64,
    dt: f64,
) -> std::io::Result<()> {
    writeln!(w, "t,bound")?;
    let n = (t_max / dt).round() as usize;
    for i in 0..=n {
        let t = i as f64 * dt;
        writeln!(
            w,
            "{},{}",
            fmt_float(t),
            fmt_float(observer_error_bound(t, cfg))
        )?;
    }
    Ok(())
}

/// A plotting hint document written alongside each trajectory: which columns
/// belong on which panel.
#[derive(Debug, Serialize)]
pub struct PlotSpec {
    pub scenario: String,
    pub trajectory: String,
    pub metadata: String,
    pub panels: Vec<PlotPanel>,
}

#[derive(Debug, Serialize)]
pub struct PlotPanel {
    pub title: String,
    pub x: String,
    pub y: Vec<String>,
}

/// Standard panel layout for a simulated trajectory.
pub fn default_plotspec(scenario: &str, trajectory: &str, metadata: &str) -> PlotSpec {
    let panel = |title: &str, cols: &[&str]| PlotPanel {
        title: title.to_string(),
        x: "t".to_string(),
        y: cols.iter().map(|c| c.to_string()).collect(),
    };
    PlotSpec {
        scenario: scenario.to_string(),
        trajectory: trajectory.to_string(),
        metadata: metadata.to_string(),
        panels: vec![
            panel("barrier value and guarantees", &["h", "y_bound", "h_bar"]),
            panel("speeds", &["v", "v1"]),
            panel("control input", &["u_cmd", "u_applied"]),
            panel("disturbance effect and estimate", &["b", "b_hat"]),
            panel("estimation error and envelope", &["e", "e_bound"]),
            panel("road grade", &["phi"]),
        ],
    }
}
