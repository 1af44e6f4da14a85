//! Metric and statistics-view observation with a fixture replay mode.
//!
//! Detection is threshold-only: a metric is abnormal in a window iff some
//! point strictly exceeds its configured threshold. Thresholds come from
//! config and are not normative.

mod source;
pub mod tools;

pub use source::{MetricSource, SourceConfig, SourceKind};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ObservabilityError {
    #[error("unknown metric: {0}")]
    UnknownMetric(String),
    #[error("invalid window: start {start} is after end {end}")]
    InvalidWindow { start: i64, end: i64 },
    #[error("no threshold configured for {0}")]
    MissingThreshold(String),
    #[error("malformed fixture {path}: {reason}")]
    MalformedFixture { path: String, reason: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("source config error: {0}")]
    Config(String),
}

/// Inclusive time range in unix seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> Result<Self, ObservabilityError> {
        if start > end {
            return Err(ObservabilityError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start <= ts && ts <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyClass {
    RunningSlow,
    FullDisk,
    ExecutionErrors,
    Hanging,
    Crashing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyAlert {
    pub alert_id: String,
    pub start_time: i64,
    pub end_time: i64,
    pub description: String,
    pub anomaly_class: AnomalyClass,
}

impl AnomalyAlert {
    pub fn validate(&self) -> Result<(), ObservabilityError> {
        if self.alert_id.trim().is_empty() {
            return Err(ObservabilityError::Config("alert_id is empty".into()));
        }
        self.window().map(|_| ())
    }

    pub fn window(&self) -> Result<TimeWindow, ObservabilityError> {
        TimeWindow::new(self.start_time, self.end_time)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric_name: String,
    pub points: Vec<(i64, f64)>,
}

impl MetricSeries {
    pub fn is_strictly_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[0].0 < w[1].0)
    }

    /// Largest value; the earliest timestamp wins ties.
    pub fn peak(&self) -> Option<(i64, f64)> {
        self.points
            .iter()
            .copied()
            .fold(None, |best, p| match best {
                Some((_, v)) if v >= p.1 => best,
                _ => Some(p),
            })
    }

    pub fn restricted_to(&self, window: TimeWindow) -> Self {
        Self {
            metric_name: self.metric_name.clone(),
            points: self.points.iter().copied().filter(|(t, _)| window.contains(*t)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowQueryRecord {
    pub template: String,
    pub calls: u64,
    pub total_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbnormalityCheck {
    pub metric_name: String,
    pub abnormal: bool,
    pub threshold: f64,
    pub peak: Option<(i64, f64)>,
    pub evidence: String,
    pub series: MetricSeries,
}

impl AbnormalityCheck {
    pub fn verdict(&self) -> &'static str {
        if self.abnormal {
            "The metric is abnormal"
        } else {
            "The metric is normal"
        }
    }
}

/// Number formatting shared by observations: integers print without a
/// fraction, everything else with up to four decimals.
pub fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
