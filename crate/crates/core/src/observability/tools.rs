//! Observation tools exposed to the engine through the tool registry.

use super::{fmt_value, MetricSource, ObservabilityError, TimeWindow};
use crate::tools::{MetricReading, ToolArgs, ToolContext, ToolExecutor, ToolOutput};
use serde_json::Value;
use std::collections::HashMap;
use std::sync::Arc;

fn window_from(args: &ToolArgs, ctx: &ToolContext<'_>) -> Result<TimeWindow, String> {
    let get = |k: &str, default: i64| args.get(k).and_then(Value::as_i64).unwrap_or(default);
    TimeWindow::new(get("start_time", ctx.window.start), get("end_time", ctx.window.end)).map_err(|e| e.to_string())
}

fn metric_arg<'a>(args: &'a ToolArgs, ctx: &ToolContext<'_>) -> Result<&'a str, String> {
    let name = args
        .get("metric_name")
        .and_then(Value::as_str)
        .ok_or("metric_name is required")?;
    if !ctx.metric_allowed(name) {
        return Err(format!("metric {name} is outside this agent's scope"));
    }
    Ok(name)
}

fn err(e: ObservabilityError) -> String {
    e.to_string()
}

struct IsAbnormal(Arc<MetricSource>);

impl ToolExecutor for IsAbnormal {
    fn execute(&self, args: &ToolArgs, ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        let name = metric_arg(args, ctx)?;
        let check = self.0.is_abnormal_metric(name, window_from(args, ctx)?).map_err(err)?;
        Ok(ToolOutput {
            text: format!("{}. {}.", check.verdict(), check.evidence),
            readings: check
                .peak
                .map(|(at, peak)| MetricReading { metric: name.to_string(), peak, at })
                .into_iter()
                .collect(),
            abnormal: if check.abnormal { vec![name.to_string()] } else { vec![] },
        })
    }
}

struct FetchMetric(Arc<MetricSource>);

impl ToolExecutor for FetchMetric {
    fn execute(&self, args: &ToolArgs, ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        let name = metric_arg(args, ctx)?;
        let window = window_from(args, ctx)?;
        let series = self.0.fetch_metric(name, window).map_err(err)?;
        let Some((at, peak)) = series.peak() else {
            return Ok(ToolOutput::text(format!(
                "{name} has no points between {} and {}.",
                window.start, window.end
            )));
        };
        let n = series.points.len();
        let mean = series.points.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let min = series.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let mut text = format!(
            "{name} over [{}, {}]: {n} points, peak {} at t={at}, min {}, mean {}.",
            window.start,
            window.end,
            fmt_value(peak),
            fmt_value(min),
            fmt_value(mean)
        );
        let mut abnormal = Vec::new();
        if let Some(thr) = self.0.threshold(name) {
            if peak > thr {
                text.push_str(&format!(" {name} is abnormal (threshold {}).", fmt_value(thr)));
                abnormal.push(name.to_string());
            }
        }
        Ok(ToolOutput {
            text,
            readings: vec![MetricReading { metric: name.to_string(), peak, at }],
            abnormal,
        })
    }
}

struct SlowQueries(Arc<MetricSource>);

impl ToolExecutor for SlowQueries {
    fn execute(&self, args: &ToolArgs, ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        let limit = args.get("limit").and_then(Value::as_u64).unwrap_or(5).max(1) as usize;
        let records = self.0.fetch_slow_queries(window_from(args, ctx)?).map_err(err)?;
        if records.is_empty() {
            return Ok(ToolOutput::text("pg_stat_statements recorded no slow query templates."));
        }
        let mut text = String::from("Slowest templates in pg_stat_statements:");
        for (i, r) in records.iter().take(limit).enumerate() {
            text.push_str(&format!(
                "\n{}. {} (calls={}, total_time_ms={})",
                i + 1,
                r.template,
                r.calls,
                fmt_value(r.total_time_ms)
            ));
        }
        Ok(ToolOutput::text(text))
    }
}

/// Threshold check over every metric the source has a threshold for.
struct ScanMetrics(Arc<MetricSource>);

impl ToolExecutor for ScanMetrics {
    fn execute(&self, args: &ToolArgs, ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        let window = window_from(args, ctx)?;
        let available = self.0.list_metrics();
        let mut out = ToolOutput::default();
        let mut lines = Vec::new();
        for name in self.0.config().thresholds.keys() {
            if !ctx.metric_allowed(name) || !available.contains(name) {
                continue;
            }
            let check = match self.0.is_abnormal_metric(name, window) {
                Ok(c) => c,
                Err(ObservabilityError::UnknownMetric(_)) => continue,
                Err(e) => return Err(e.to_string()),
            };
            let Some((at, peak)) = check.peak else { continue };
            out.readings.push(MetricReading { metric: name.clone(), peak, at });
            if check.abnormal {
                out.abnormal.push(name.clone());
                lines.push(format!(
                    "{name} abnormal: peak {} at t={at} above threshold {}",
                    fmt_value(peak),
                    fmt_value(check.threshold)
                ));
            } else {
                lines.push(format!("{name} normal: peak {}", fmt_value(peak)));
            }
        }
        out.text = format!(
            "Scanned {} metrics between {} and {}; {} abnormal.\n{}",
            out.readings.len(),
            window.start,
            window.end,
            out.abnormal.len(),
            lines.join("\n")
        );
        Ok(out)
    }
}

/// Executors keyed by binding name.
pub fn executors(source: Arc<MetricSource>) -> HashMap<String, Arc<dyn ToolExecutor>> {
    let mut m: HashMap<String, Arc<dyn ToolExecutor>> = HashMap::new();
    m.insert("observability.is_abnormal_metric".into(), Arc::new(IsAbnormal(source.clone())));
    m.insert("observability.fetch_metric".into(), Arc::new(FetchMetric(source.clone())));
    m.insert("observability.fetch_slow_queries".into(), Arc::new(SlowQueries(source.clone())));
    m.insert("observability.scan_metrics".into(), Arc::new(ScanMetrics(source)));
    m
}
