use dbdoctor_core::diagnosis::render_markdown;
use dbdoctor_core::DiagnosisReport;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Json,
}

pub fn render_report(report: &DiagnosisReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
    }
}
