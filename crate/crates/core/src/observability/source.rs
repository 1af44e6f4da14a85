//! Metric sources: fixture replay, Prometheus range queries and Postgres
//! statistics views.

use super::{fmt_value, AbnormalityCheck, MetricSeries, ObservabilityError, SlowQueryRecord, TimeWindow};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    PrometheusHttp,
    PostgresViews,
    Fixture,
}

fn default_step() -> u64 {
    15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Postgres connection string. Also used for slow queries when the
    /// metric source is Prometheus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dsn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default = "default_step")]
    pub step_seconds: u64,
}

impl SourceConfig {
    pub fn fixture(dir: impl Into<PathBuf>, thresholds: BTreeMap<String, f64>) -> Self {
        Self {
            kind: SourceKind::Fixture,
            endpoint: None,
            dsn: None,
            fixture_dir: Some(dir.into()),
            thresholds,
            step_seconds: default_step(),
        }
    }

    pub fn validate(&self) -> Result<(), ObservabilityError> {
        let missing = |what: &str| Err(ObservabilityError::Config(format!("{what} is required for this source kind")));
        match self.kind {
            SourceKind::PrometheusHttp if self.endpoint.is_none() => missing("endpoint"),
            SourceKind::PostgresViews if self.dsn.is_none() => missing("dsn"),
            SourceKind::Fixture if self.fixture_dir.is_none() => missing("fixture_dir"),
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
struct FixtureFile {
    metric_name: String,
    points: Vec<(i64, f64)>,
}

/// Read-only handle over a configured source. Safe to share across threads.
#[derive(Clone, Debug)]
pub struct MetricSource {
    cfg: SourceConfig,
}

fn valid_metric_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':')
}

const PG_ACTIVITY_METRICS: &[(&str, &str)] = &[
    ("active_sessions", "state = 'active'"),
    ("idle_in_transaction_sessions", "state = 'idle in transaction'"),
    ("lock_wait_count", "wait_event_type = 'Lock'"),
    ("total_sessions", "true"),
];

impl MetricSource {
    pub fn new(cfg: SourceConfig) -> Result<Self, ObservabilityError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.cfg
    }

    pub fn threshold(&self, name: &str) -> Option<f64> {
        self.cfg.thresholds.get(name).copied()
    }

    fn fixture_dir(&self) -> &Path {
        self.cfg.fixture_dir.as_deref().expect("validated")
    }

    /// Points of `name` inside `window`, ordered by time.
    pub fn fetch_metric(&self, name: &str, window: TimeWindow) -> Result<MetricSeries, ObservabilityError> {
        if !valid_metric_name(name) {
            return Err(ObservabilityError::UnknownMetric(name.to_string()));
        }
        let full = match self.cfg.kind {
            SourceKind::Fixture => self.read_fixture(name)?,
            SourceKind::PrometheusHttp => self.prometheus_range(name, window)?,
            SourceKind::PostgresViews => self.postgres_activity(name)?,
        };
        Ok(full.restricted_to(window))
    }

    fn read_fixture(&self, name: &str) -> Result<MetricSeries, ObservabilityError> {
        let path = self.fixture_dir().join(format!("{name}.json"));
        let malformed = |reason: String| ObservabilityError::MalformedFixture {
            path: path.display().to_string(),
            reason,
        };
        let raw = match std::fs::read_to_string(&path) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ObservabilityError::UnknownMetric(name.to_string()))
            }
            Err(e) => return Err(malformed(e.to_string())),
        };
        let f: FixtureFile = serde_json::from_str(&raw).map_err(|e| malformed(e.to_string()))?;
        if f.metric_name != name {
            return Err(malformed(format!("declares metric {} but file is named {name}", f.metric_name)));
        }
        let series = MetricSeries {
            metric_name: f.metric_name,
            points: f.points,
        };
        if !series.is_strictly_increasing() {
            return Err(malformed("timestamps are not strictly increasing".into()));
        }
        Ok(series)
    }

    fn prometheus_range(&self, name: &str, window: TimeWindow) -> Result<MetricSeries, ObservabilityError> {
        let base = self.cfg.endpoint.as_deref().expect("validated").trim_end_matches('/');
        let resp: Value = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(10))
            .build()
            .get(&format!("{base}/api/v1/query_range"))
            .query("query", name)
            .query("start", &window.start.to_string())
            .query("end", &window.end.to_string())
            .query("step", &self.cfg.step_seconds.max(1).to_string())
            .call()
            .map_err(|e| ObservabilityError::Transport(e.to_string()))?
            .into_json()
            .map_err(|e| ObservabilityError::Transport(e.to_string()))?;
        parse_prometheus_matrix(name, &resp)
    }

    fn postgres_client(&self) -> Result<postgres::Client, ObservabilityError> {
        let dsn = self
            .cfg
            .dsn
            .as_deref()
            .ok_or_else(|| ObservabilityError::Config("dsn is required for statistics views".into()))?;
        postgres::Client::connect(dsn, postgres::NoTls).map_err(|e| ObservabilityError::Transport(e.to_string()))
    }

    /// pg_stat_activity only has a present value, so the series is a single
    /// point stamped now.
    fn postgres_activity(&self, name: &str) -> Result<MetricSeries, ObservabilityError> {
        let (_, predicate) = PG_ACTIVITY_METRICS
            .iter()
            .find(|(m, _)| *m == name)
            .ok_or_else(|| ObservabilityError::UnknownMetric(name.to_string()))?;
        let mut client = self.postgres_client()?;
        let sql = format!("SELECT count(*)::float8 FROM pg_stat_activity WHERE {predicate}");
        let row = client
            .query_one(sql.as_str(), &[])
            .map_err(|e| ObservabilityError::Transport(e.to_string()))?;
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or_default();
        Ok(MetricSeries {
            metric_name: name.to_string(),
            points: vec![(now, row.get::<_, f64>(0))],
        })
    }

    pub fn is_abnormal_metric(&self, name: &str, window: TimeWindow) -> Result<AbnormalityCheck, ObservabilityError> {
        let threshold = self
            .threshold(name)
            .ok_or_else(|| ObservabilityError::MissingThreshold(name.to_string()))?;
        let series = self.fetch_metric(name, window)?;
        let peak = series.peak();
        let abnormal = peak.is_some_and(|(_, v)| v > threshold);
        let evidence = match peak {
            None => format!("{name} has no points between {} and {}", window.start, window.end),
            Some((ts, v)) => format!(
                "{name} peaked at {} (t={ts}), {} threshold {}",
                fmt_value(v),
                if abnormal { "above" } else { "within" },
                fmt_value(threshold)
            ),
        };
        Ok(AbnormalityCheck {
            metric_name: name.to_string(),
            abnormal,
            threshold,
            peak,
            evidence,
            series,
        })
    }

    /// Slowest statement templates, by total time descending.
    pub fn fetch_slow_queries(&self, window: TimeWindow) -> Result<Vec<SlowQueryRecord>, ObservabilityError> {
        let _ = window;
        let mut records = match (self.cfg.kind, &self.cfg.dsn) {
            (SourceKind::Fixture, _) => {
                let path = self.fixture_dir().join("slow_queries.json");
                let raw = std::fs::read_to_string(&path).map_err(|e| ObservabilityError::MalformedFixture {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                serde_json::from_str::<Vec<SlowQueryRecord>>(&raw).map_err(|e| ObservabilityError::MalformedFixture {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?
            }
            (_, Some(_)) => {
                // pg_stat_statements is cumulative; the window cannot be
                // applied without snapshots.
                let mut client = self.postgres_client()?;
                client
                    .query(
                        "SELECT query, calls::int8, total_exec_time::float8 FROM pg_stat_statements \
                         ORDER BY total_exec_time DESC LIMIT 50",
                        &[],
                    )
                    .map_err(|e| ObservabilityError::Transport(e.to_string()))?
                    .iter()
                    .map(|r| SlowQueryRecord {
                        template: r.get(0),
                        calls: r.get::<_, i64>(1).max(0) as u64,
                        total_time_ms: r.get(2),
                    })
                    .collect()
            }
            (_, None) => return Err(ObservabilityError::Config("dsn is required for statistics views".into())),
        };
        records.sort_by(|a, b| b.total_time_ms.total_cmp(&a.total_time_ms));
        Ok(records)
    }

    /// Metrics this source can serve.
    pub fn list_metrics(&self) -> Vec<String> {
        match self.cfg.kind {
            SourceKind::Fixture => {
                let mut names: Vec<String> = std::fs::read_dir(self.fixture_dir())
                    .map(|rd| {
                        rd.filter_map(Result::ok)
                            .filter_map(|e| {
                                let p = e.path();
                                (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_string))?
                            })
                            .filter(|n| n != "slow_queries")
                            .collect()
                    })
                    .unwrap_or_default();
                names.sort();
                names
            }
            SourceKind::PrometheusHttp => self.cfg.thresholds.keys().cloned().collect(),
            SourceKind::PostgresViews => PG_ACTIVITY_METRICS.iter().map(|(m, _)| m.to_string()).collect(),
        }
    }
}

fn parse_prometheus_matrix(name: &str, resp: &Value) -> Result<MetricSeries, ObservabilityError> {
    if resp.get("status").and_then(Value::as_str) != Some("success") {
        return Err(ObservabilityError::Transport(format!(
            "prometheus error: {}",
            resp.get("error").and_then(Value::as_str).unwrap_or("unknown")
        )));
    }
    let result = resp
        .pointer("/data/result")
        .and_then(Value::as_array)
        .ok_or_else(|| ObservabilityError::Transport("missing data.result".into()))?;
    let Some(first) = result.first() else {
        return Err(ObservabilityError::UnknownMetric(name.to_string()));
    };
    let mut points = Vec::new();
    for pair in first.get("values").and_then(Value::as_array).into_iter().flatten() {
        let ts = pair.get(0).and_then(Value::as_f64);
        let v = pair.get(1).and_then(Value::as_str).and_then(|s| s.parse::<f64>().ok());
        match (ts, v) {
            (Some(ts), Some(v)) if v.is_finite() => points.push((ts as i64, v)),
            (Some(_), Some(_)) => {}
            _ => return Err(ObservabilityError::Transport("malformed sample in prometheus matrix".into())),
        }
    }
    points.sort_by_key(|p| p.0);
    points.dedup_by_key(|p| p.0);
    Ok(MetricSeries {
        metric_name: name.to_string(),
        points,
    })
}
