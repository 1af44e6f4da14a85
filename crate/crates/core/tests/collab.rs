mod common;

use common::*;
use dbdoctor_core::collab::{
    post_message, run_collaborative, schedule_speaker, AgentRole, EnvironmentSettings, Grounding, PostOutcome, SelectorPolicy, CHIEF,
};
use dbdoctor_core::diagnosis::{DiagnosisEngine, EngineConfig};
use dbdoctor_core::gateway::{Gateway, LanguageModel, ScriptRule, ScriptedBackend};
use dbdoctor_core::{ChatRecord, SessionLog};

const CANARY: &str = "purple elephants were dancing on the rooftop";

fn quiet_rules(report: &str) -> Vec<ScriptRule> {
    vec![
        ScriptRule::new("[task: schedule]", "CpuAgent"),
        ScriptRule::new("[task: propose_action]", FINAL),
        ScriptRule::new("[task: agent_report]", report),
        ScriptRule::new("[task: chief_review]", "CONTINUE keep looking."),
        ScriptRule::new("[task: consolidate]", "- No root cause identified."),
    ]
}

fn workload_alert() -> dbdoctor_core::AnomalyAlert {
    alert("workload_contention", "Checkout requests slowed down during a marketing campaign.")
}

#[test]
fn ungrounded_analysis_never_reaches_later_prompts() {
    let gw = Gateway::from_rules(quiet_rules(CANARY)).unwrap();
    let engine = DiagnosisEngine::new(&gw, toolbox("workload"), None, EngineConfig::default());
    let env = EnvironmentSettings {
        max_rounds: 2,
        ..EnvironmentSettings::default()
    };
    let log = SessionLog::new();
    let out = run_collaborative(&workload_alert(), AgentRole::builtin(), &env, &engine, &log).unwrap();
    assert_eq!(out.filtered.len(), 2);
    assert!(out.filtered.iter().all(|r| r.analysis == CANARY));
    assert!(log.records().iter().all(|r| !r.analysis.contains("purple")));
    assert!(out.report.notes.iter().any(|n| n == "Filtered an ungrounded analysis from CpuAgent."));
    for req in gw.request_log() {
        let prompt = req.latest_prompt().unwrap_or("");
        if prompt.contains("[task: agent_report]") {
            continue;
        }
        assert!(!prompt.contains("purple"), "canary leaked into {prompt:?}");
    }
}

#[test]
fn accept_all_lets_anything_through() {
    let log = SessionLog::new();
    let env = EnvironmentSettings {
        selector: SelectorPolicy::AcceptAll,
        ..EnvironmentSettings::default()
    };
    let out = post_message(&log, ChatRecord::analysis("CpuAgent", CANARY), &env, &Grounding::default());
    assert_eq!(out, PostOutcome::Accepted(1));

    let strict = EnvironmentSettings::default();
    let g = Grounding {
        metrics: vec!["cpu_usage".into()],
        ..Grounding::default()
    };
    assert!(matches!(post_message(&log, ChatRecord::analysis("CpuAgent", CANARY), &strict, &g), PostOutcome::Filtered(_)));
    assert!(matches!(post_message(&log, ChatRecord::analysis("CpuAgent", "CPU usage peaked."), &strict, &g), PostOutcome::Accepted(_)));
    assert!(matches!(post_message(&log, ChatRecord::analysis("human", "try again"), &strict, &g), PostOutcome::Accepted(_)));
}

#[test]
fn one_round_gives_one_specialist_utterance() {
    let gw = Gateway::from_rules(quiet_rules("cpu_usage looked fine.")).unwrap();
    let engine = DiagnosisEngine::new(&gw, toolbox("workload"), None, EngineConfig::default());
    let env = EnvironmentSettings {
        max_rounds: 1,
        selector: SelectorPolicy::AcceptAll,
        ..EnvironmentSettings::default()
    };
    let log = SessionLog::new();
    run_collaborative(&workload_alert(), AgentRole::builtin(), &env, &engine, &log).unwrap();
    let specialist = log.records().iter().filter(|r| r.speaker != CHIEF && !r.is_human()).count();
    assert_eq!(specialist, 1);
}

#[test]
fn unknown_agent_name_falls_back_to_round_robin() {
    let gw = Gateway::from_rules(vec![ScriptRule::new("[task: schedule", "DiskAgent")]).unwrap();
    let agents = AgentRole::builtin();
    assert_eq!(schedule_speaker(&agents, 1, &[], &gw).unwrap(), "CpuAgent");
    assert_eq!(schedule_speaker(&agents, 2, &[], &gw).unwrap(), "MemoryAgent");
    assert_eq!(schedule_speaker(&agents, 3, &[], &gw).unwrap(), "CpuAgent");
    let prompts: Vec<String> = gw.request_log().iter().map(|r| r.latest_prompt().unwrap().to_string()).collect();
    assert_eq!(prompts.len(), 6);
    assert!(prompts[1].contains("[task: schedule_retry]") && prompts[1].contains("DiskAgent"));

    let gw = Gateway::from_rules(vec![
        ScriptRule::new("[task: schedule]", "DiskAgent"),
        ScriptRule::new("[task: schedule_retry]", "MemoryAgent then"),
    ])
    .unwrap();
    assert_eq!(schedule_speaker(&agents, 1, &[], &gw).unwrap(), "MemoryAgent");
}

#[test]
fn single_specialist_is_always_chosen() {
    let gw = Gateway::from_rules(vec![]).unwrap();
    let agents = vec![AgentRole::chief(), AgentRole::memory_agent()];
    for round in 1..5 {
        assert_eq!(schedule_speaker(&agents, round, &[], &gw).unwrap(), "MemoryAgent");
    }
    assert_eq!(gw.completion_calls(), 0);
}

#[test]
fn chief_checks_application_side_when_nothing_found() {
    let gw = Gateway::from_rules(quiet_rules("cpu_usage looked fine.")).unwrap();
    let engine = DiagnosisEngine::new(&gw, toolbox("workload"), None, EngineConfig::default());
    let env = EnvironmentSettings {
        max_rounds: 1,
        ..EnvironmentSettings::default()
    };
    let log = SessionLog::new();
    let out = run_collaborative(&workload_alert(), AgentRole::builtin(), &env, &engine, &log).unwrap();
    assert!(out.report.causes.is_empty());
    assert!(log
        .records()
        .iter()
        .any(|r| r.speaker == CHIEF && r.analysis.starts_with("The specialists found no root cause")));
}

#[test]
fn invalid_roster_is_rejected() {
    let gw = Gateway::from_rules(vec![]).unwrap();
    let engine = DiagnosisEngine::new(&gw, toolbox("workload"), None, EngineConfig::default());
    let env = EnvironmentSettings::default();
    let err = run_collaborative(&workload_alert(), vec![AgentRole::cpu_agent()], &env, &engine, &SessionLog::new()).unwrap_err();
    assert!(err.to_string().contains(CHIEF));
    assert_eq!(gw.completion_calls(), 0);
}

#[test]
fn workload_contention_is_found_and_consolidated() {
    let gw = Gateway::scripted(ScriptedBackend::load(&data("collab_script.json"), 64).unwrap());
    let kb = kb();
    let engine = DiagnosisEngine::new(&gw, toolbox("workload"), Some(&kb), EngineConfig::default());
    let log = SessionLog::new();
    let out = run_collaborative(&workload_alert(), AgentRole::builtin(), &EnvironmentSettings::default(), &engine, &log).unwrap();
    let report = out.report;

    assert!(report.cause_ids().contains(&"WORKLOAD_CONTENTION".to_string()));
    let cpu = report.causes.iter().find(|c| c.cause_id == "WORKLOAD_CONTENTION").unwrap();
    assert_eq!(cpu.reported_by.as_deref(), Some("CpuAgent"));
    // Every agent's causes end up in the merged report.
    for c in &report.causes {
        let by = c.reported_by.as_deref().unwrap();
        assert!(["CpuAgent", "MemoryAgent", CHIEF].contains(&by));
    }

    let records = log.records();
    assert!(records.iter().any(|r| r.speaker == "CpuAgent" && r.analysis.contains("top_template_share")));
    let last = records.last().unwrap();
    assert_eq!(last.speaker, CHIEF);
    assert_eq!(last.analysis, report.analysis);
    assert!(out.filtered.iter().all(|r| r.speaker == "MemoryAgent"));

    let cpu_agent = out.agents.iter().find(|a| a.name == "CpuAgent").unwrap();
    assert_eq!(cpu_agent.memory.lines[0], "- I know the anomaly ran from 1684600060 to 1684600120.");
    assert!(cpu_agent.memory.lines.len() >= 2);
}
