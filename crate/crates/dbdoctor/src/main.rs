use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dbdoctor::bench::{load_scenarios, render_table, run_bench, BenchSettings};
use dbdoctor::{render_report, AppConfig, ReportFormat, SessionManager, SessionMode, SessionStatus, StartRequest};
use dbdoctor_core::gateway::{Gateway, ProviderConfig};
use dbdoctor_core::knowledge::{ingest_document, IngestOptions, KnowledgeBase};
use dbdoctor_core::promptlab::{propose_prompts, score_prompt, select_template, DiagnosisSample, EngineDiagnoser, PromptCandidate, DEFAULT_RESERVE};
use dbdoctor_core::AnomalyAlert;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

/// Writes a line to stdout, exiting quietly when the reader has gone away
/// (for example when piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    }};
}

#[derive(Parser)]
#[command(name = "dbdoctor", version, about = "LLM-driven database diagnosis")]
struct Cli {
    /// Service configuration file.
    #[arg(long, global = true, default_value = "dbdoctor.json")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract experience from a maintenance document into the knowledge base.
    Ingest {
        /// Markdown or plain-text document.
        doc: PathBuf,
        /// Scripted replies to use instead of the configured provider.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Where to write the knowledge base (defaults to the configured one).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diagnose one alert and print the report.
    Diagnose {
        #[arg(long)]
        alert: PathBuf,
        #[arg(long, default_value = "single")]
        mode: SessionMode,
        #[arg(long, value_enum, default_value = "markdown")]
        format: ReportFormat,
        /// Give up waiting after this many seconds.
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Run every scenario in a directory and print the tally.
    Bench {
        #[arg(long)]
        scenarios: PathBuf,
        /// Comma-separated modes.
        #[arg(long, default_value = "single,baseline-metrics-only", value_delimiter = ',')]
        modes: Vec<SessionMode>,
        #[arg(long)]
        json: bool,
    },
    /// Propose, score and select a diagnosis prompt template.
    PromptTune {
        /// JSON list of labeled samples.
        #[arg(long)]
        samples: PathBuf,
        /// Scripted replies for the proposal step (defaults to the provider).
        #[arg(long)]
        proposal_script: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, default_value_t = DEFAULT_RESERVE)]
        reserve: usize,
    },
}

/// Bench runs only need the shared knowledge files; without an explicit
/// config they are taken from `dbdoctor.json` next to the scenarios dir.
fn bench_config(cli_config: &Path, scenarios: &Path) -> Result<AppConfig> {
    let path = if cli_config.is_file() {
        cli_config.to_path_buf()
    } else {
        scenarios.parent().unwrap_or(Path::new(".")).join("dbdoctor.json")
    };
    AppConfig::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { doc, script, out } => {
            let cfg = AppConfig::load(&cli.config)?;
            let provider = script.map(ProviderConfig::scripted).unwrap_or(cfg.provider.clone());
            let gw = Gateway::from_config(&provider)?;
            let kb = KnowledgeBase::load_or_default(&cfg.kb_path)?;
            let text = std::fs::read_to_string(&doc).with_context(|| format!("reading {}", doc.display()))?;
            let report = ingest_document(&text, &kb, &gw, &IngestOptions::default())?;
            let out = out.unwrap_or(cfg.kb_path);
            kb.save(&out)?;
            out!(
                "{} chunks, {} added, {} already present, {} rejected, {} failed; knowledge base now has {} segments ({})",
                report.chunks,
                report.added.len(),
                report.already_present.len(),
                report.rejected.len(),
                report.failed_chunks.len(),
                kb.len(),
                out.display()
            );
            for r in &report.rejected {
                let why: Vec<String> = r.violations.iter().map(|v| v.to_string()).collect();
                out!("rejected {}: {}", r.name, why.join("; "));
            }
        }
        Command::Diagnose {
            alert,
            mode,
            format,
            timeout_secs,
        } => {
            let cfg = AppConfig::load(&cli.config)?;
            let text = std::fs::read_to_string(&alert).with_context(|| format!("reading {}", alert.display()))?;
            let alert: AnomalyAlert = serde_json::from_str(&text).context("parsing alert")?;
            let manager = SessionManager::new(cfg)?;
            let s = manager.start(StartRequest {
                alert,
                mode,
                session_id: None,
            })?;
            let s = manager.wait(&s.session_id, Duration::from_secs(timeout_secs))?;
            match (s.status, &s.report) {
                (SessionStatus::Done, Some(r)) => out!("{}", render_report(r, format)),
                (SessionStatus::Aborted, _) => bail!("diagnosis aborted: {}", s.error.unwrap_or_default()),
                _ => bail!("diagnosis did not finish within {timeout_secs}s"),
            }
            eprintln!("session {} saved under {}", s.session_id, manager.store().root().display());
        }
        Command::Serve { port } => {
            let manager = Arc::new(SessionManager::new(AppConfig::load(&cli.config)?)?);
            tokio::runtime::Runtime::new()?.block_on(dbdoctor::api::serve(manager, port))?;
        }
        Command::Bench { scenarios, modes, json } => {
            let cfg = bench_config(&cli.config, &scenarios)?;
            let res = cfg.resources()?;
            let list = load_scenarios(&scenarios)?;
            let settings = BenchSettings {
                params: cfg.search.clone(),
                embed_dim: cfg.provider.embed_dim,
                collab: cfg.collab.clone(),
            };
            let result = run_bench(&res, &list, &modes, &settings);
            if json {
                out!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                out!("{}", render_table(&result).trim_end());
            }
        }
        Command::PromptTune {
            samples,
            proposal_script,
            count,
            reserve,
        } => {
            let cfg = AppConfig::load(&cli.config)?;
            let res = cfg.resources()?;
            let text = std::fs::read_to_string(&samples).with_context(|| format!("reading {}", samples.display()))?;
            let mut list: Vec<DiagnosisSample> = serde_json::from_str(&text).context("parsing samples")?;
            let base = samples.parent().unwrap_or(Path::new("."));
            for s in &mut list {
                if s.fixture_dir.is_relative() {
                    s.fixture_dir = base.join(&s.fixture_dir);
                }
                if let Some(p) = s.script_path.as_mut().filter(|p| p.is_relative()) {
                    *p = base.join(&*p);
                }
            }
            let provider = proposal_script.map(ProviderConfig::scripted).unwrap_or(cfg.provider.clone());
            let gw = Gateway::from_config(&provider)?;
            let proposal = propose_prompts(&list, count, &gw)?;
            for r in &proposal.rejected {
                out!("rejected: {r}");
            }
            let diagnoser = EngineDiagnoser {
                registry: res.registry.clone(),
                kb: res.kb.clone(),
                thresholds: res.thresholds.clone(),
                params: cfg.search.clone(),
                embed_dim: cfg.provider.embed_dim,
            };
            let mut scored = Vec::new();
            for c in std::iter::once(PromptCandidate::default_seed()).chain(proposal.candidates) {
                scored.push(score_prompt(&c, &list, &diagnoser)?);
            }
            let sel = select_template(&scored, reserve)?;
            for (i, s) in sel.reserved.iter().enumerate() {
                let first = s.candidate.template.lines().next().unwrap_or_default();
                out!("{:>2}. {:.2} {:?} {first}", i + 1, s.score, s.candidate.origin);
            }
            out!("\nChosen template:\n{}", sel.chosen.template);
        }
    }
    Ok(())
}
