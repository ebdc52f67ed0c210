//! Reference and disturbance signal sources: constants, sinusoids, and
//! CSV-backed timeseries with linear interpolation.
//!
//! Timeseries files carry the lead-vehicle speed and the road grade on a
//! common time grid, with the header `t,v1,phi` (`t` in seconds, `v1` in m/s,
//! `phi` in radians). Queries outside the data range clamp to the endpoint
//! values; analytic sources are defined for all t.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Errors raised while ingesting a timeseries file. Every variant that refers
/// to file content carries a 1-based line number.
#[derive(Debug, Error)]
pub enum TimeseriesError {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected header `t,v1,phi`, found `{found}`")]
    BadHeader {
        path: String,
        line: usize,
        found: String,
    },
    #[error("{path}:{line}: expected 3 comma-separated values, found {found}")]
    BadFieldCount {
        path: String,
        line: usize,
        found: usize,
    },
    #[error("{path}:{line}: column `{column}`: cannot parse `{token}` as a number")]
    BadNumber {
        path: String,
        line: usize,
        column: &'static str,
        token: String,
    },
    #[error("{path}:{line}: column `{column}`: value must be finite")]
    NonFinite {
        path: String,
        line: usize,
        column: &'static str,
    },
    #[error("{path}:{line}: time column must be strictly increasing ({prev} followed by {cur})")]
    NonMonotonicTime {
        path: String,
        line: usize,
        prev: f64,
        cur: f64,
    },
    #[error("{path}: no data rows")]
    Empty { path: String },
}

/// Which column of a timeseries file to expose as a signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeseriesColumn {
    /// Lead-vehicle speed, m/s.
    V1,
    /// Road grade, rad.
    Phi,
}

impl fmt::Display for TimeseriesColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeseriesColumn::V1 => write!(f, "v1"),
            TimeseriesColumn::Phi => write!(f, "phi"),
        }
    }
}

/// Uniformly usable sampled signal with linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeseries {
    t: Vec<f64>,
    value: Vec<f64>,
}

impl Timeseries {
    /// Builds a timeseries from sample arrays. `t` must be strictly
    /// increasing and non-empty; both arrays must have the same length.
    pub fn new(t: Vec<f64>, value: Vec<f64>) -> Result<Self, TimeseriesError> {
        assert_eq!(t.len(), value.len(), "sample arrays must have equal length");
        if t.is_empty() {
            return Err(TimeseriesError::Empty {
                path: "<memory>".into(),
            });
        }
        for i in 1..t.len() {
            if t[i] <= t[i - 1] {
                return Err(TimeseriesError::NonMonotonicTime {
                    path: "<memory>".into(),
                    line: i + 2,
                    prev: t[i - 1],
                    cur: t[i],
                });
            }
        }
        Ok(Self { t, value })
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn end_time(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Applies `f` to every sample value in place (e.g. unit conversion).
    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.value {
            *v = f(*v);
        }
    }

    /// Linear interpolation with endpoint clamping.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.t.len();
        let i = self.t.partition_point(|&x| x <= t);
        if i == 0 {
            self.value[0]
        } else if i == n {
            self.value[n - 1]
        } else {
            let (t0, t1) = (self.t[i - 1], self.t[i]);
            let (v0, v1) = (self.value[i - 1], self.value[i]);
            v0 + (t - t0) / (t1 - t0) * (v1 - v0)
        }
    }

    /// Largest finite-difference slope magnitude of `f(value)` over the data,
    /// `max_i |f(v_{i+1}) - f(v_i)| / (t_{i+1} - t_i)`.
    ///
    /// Used to derive a Lipschitz bound for data-driven disturbances.
    pub fn max_mapped_slope(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut max = 0.0f64;
        for i in 1..self.t.len() {
            let slope = ((f(self.value[i]) - f(self.value[i - 1])) / (self.t[i] - self.t[i - 1]))
                .abs();
            max = max.max(slope);
        }
        max
    }

    /// Largest magnitude of `f(value)` over the samples.
    pub fn max_mapped_abs(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.value.iter().fold(0.0f64, |m, &v| m.max(f(v).abs()))
    }
}

/// A scalar signal defined for all simulation times.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    Constant(f64),
    Sinusoid {
        /// Amplitude (rad for the grade signal), after any unit conversion.
        amplitude: f64,
        /// Angular frequency, rad/s.
        omega: f64,
        /// Phase offset, rad.
        phase: f64,
    },
    Timeseries(Timeseries),
}

impl SignalSource {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SignalSource::Constant(v) => *v,
            SignalSource::Sinusoid {
                amplitude,
                omega,
                phase,
            } => amplitude * (omega * t + phase).sin(),
            SignalSource::Timeseries(ts) => ts.eval(t),
        }
    }

    /// Last defined time for sampled sources; analytic sources have none.
    pub fn end_time(&self) -> Option<f64> {
        match self {
            SignalSource::Timeseries(ts) => Some(ts.end_time()),
            _ => None,
        }
    }
}

/// Reads one column of a `t,v1,phi` CSV file as a signal source.
///
/// The file must be UTF-8 with a header row, comma separators, and LF or CRLF
/// line endings. The time column must be strictly increasing. All errors
/// carry the offending 1-based line number.
pub fn load_timeseries(
    path: &Path,
    column: TimeseriesColumn,
) -> Result<SignalSource, TimeseriesError> {
    Ok(SignalSource::Timeseries(load_timeseries_data(path, column)?))
}

/// Like [`load_timeseries`] but returns the raw samples.
pub fn load_timeseries_data(
    path: &Path,
    column: TimeseriesColumn,
) -> Result<Timeseries, TimeseriesError> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path).map_err(|source| TimeseriesError::Io {
        path: display.clone(),
        source,
    })?;
    let mut t = Vec::new();
    let mut value = Vec::new();
    let mut lines = content.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| TimeseriesError::Empty {
        path: display.clone(),
    })?;
    let header_fields: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    if header_fields != ["t", "v1", "phi"] {
        return Err(TimeseriesError::BadHeader {
            path: display,
            line: 1,
            found: header.trim_end_matches('\r').to_string(),
        });
    }

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(TimeseriesError::BadFieldCount {
                path: display,
                line: line_no,
                found: fields.len(),
            });
        }
        let parse = |token: &str, col: &'static str| -> Result<f64, TimeseriesError> {
            let v: f64 = token.parse().map_err(|_| TimeseriesError::BadNumber {
                path: display.clone(),
                line: line_no,
                column: col,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(TimeseriesError::NonFinite {
                    path: display.clone(),
                    line: line_no,
                    column: col,
                });
            }
            Ok(v)
        };
        let ti = parse(fields[0], "t")?;
        let vi = match column {
            TimeseriesColumn::V1 => parse(fields[1], "v1")?,
            TimeseriesColumn::Phi => parse(fields[2], "phi")?,
        };
        if let Some(&prev) = t.last() {
            if ti <= prev {
                return Err(TimeseriesError::NonMonotonicTime {
                    path: display,
                    line: line_no,
                    prev,
                    cur: ti,
                });
            }
        }
        t.push(ti);
        value.push(vi);
    }

    if t.is_empty() {
        return Err(TimeseriesError::Empty { path: display });
    }
    Ok(Timeseries { t, value })
}
