use dbdoctor_core::collab::{summarize_progressive, ChatSummary, SummaryError};
use dbdoctor_core::gateway::{Gateway, LanguageModel, ScriptRule};
use dbdoctor_core::ChatRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn abnormal_cpu_record() -> ChatRecord {
    ChatRecord {
        seq: 4,
        speaker: "CpuAgent".into(),
        thought: Some("Now that I have the start and end time of the anomaly, I need to diagnose the causes of the anomaly".into()),
        action: Some("is_abnormal_metric".into()),
        action_input: Some(r#"{"start_time": 1684600070, "end_time": 1684600074, "metric_name": "cpu_usage"}"#.into()),
        observation: Some("The metric is abnormal".into()),
        ..Default::default()
    }
}

#[test]
fn appends_one_goal_line_and_keeps_the_rest() {
    let gw = Gateway::from_rules(vec![ScriptRule::new(
        "[task: summarize_record]",
        "I searched for is_abnormal_metric, and I now know that the CPU usage is abnormal.",
    )])
    .unwrap();
    let current = ChatSummary::anchored(vec!["- I know the start and end time of the anomaly.".into()], 2000);
    let next = summarize_progressive(&current, &abnormal_cpu_record(), &gw).unwrap();
    assert_eq!(
        next.lines,
        vec![
            "- I know the start and end time of the anomaly.",
            "- I searched for is_abnormal_metric, and I now know that the CPU usage is abnormal.",
        ]
    );
    let prompt = gw.request_log()[0].latest_prompt().unwrap().to_string();
    assert!(prompt.contains("- I know the start and end time of the anomaly."));
    assert!(prompt.contains("Action: is_abnormal_metric"));
    assert!(prompt.contains("Observation: The metric is abnormal"));
}

#[test]
fn empty_summary_grows_to_one_line() {
    let gw = Gateway::from_rules(vec![ScriptRule::new("[task: summarize_record]", "CPU was high.")]).unwrap();
    let next = summarize_progressive(&ChatSummary::new(500), &abnormal_cpu_record(), &gw).unwrap();
    // The tool name is added when the model leaves it out.
    assert_eq!(next.lines, vec!["- I used is_abnormal_metric: CPU was high."]);
}

#[test]
fn record_without_tool_is_rejected() {
    let gw = Gateway::from_rules(vec![]).unwrap();
    let rec = ChatRecord::analysis("CpuAgent", "just talking");
    let err = summarize_progressive(&ChatSummary::new(500), &rec, &gw).unwrap_err();
    assert!(matches!(err, SummaryError::NoToolAction(_)));
    assert_eq!(gw.completion_calls(), 0);
}

#[test]
fn long_sessions_stay_under_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tools = ["scan_metrics", "fetch_metric", "fetch_slow_queries", "is_abnormal_metric"];
    for trial in 0..20 {
        let cap = rng.gen_range(40..600);
        let gw = Gateway::from_rules(vec![ScriptRule::regex(
            r"\[task: summarize_record\]",
            "I searched for fetch_metric and learned that something moved quite a lot during the window.",
        )])
        .unwrap();
        let mut s = ChatSummary::anchored(vec!["- I know the anomaly ran from 1684600060 to 1684600120.".into()], cap);
        for i in 0..100 {
            let tool = tools[rng.gen_range(0..tools.len())];
            let rec = ChatRecord {
                seq: i + 1,
                speaker: "CpuAgent".into(),
                action: Some(tool.into()),
                action_input: Some("{}".into()),
                observation: Some("x".repeat(rng.gen_range(0..400))),
                ..Default::default()
            };
            s = summarize_progressive(&s, &rec, &gw).unwrap();
            assert!(s.len() <= cap, "trial {trial} step {i}: {} > {cap}", s.len());
        }
        if cap >= 200 {
            assert_eq!(s.lines[0], "- I know the anomaly ran from 1684600060 to 1684600120.");
            assert!(s.lines.last().unwrap().contains("fetch_metric"));
        }
    }
}
