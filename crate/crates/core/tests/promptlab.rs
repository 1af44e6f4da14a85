mod common;

use common::*;
use dbdoctor_core::diagnosis::DEFAULT_TEMPLATE;
use dbdoctor_core::gateway::{Gateway, LanguageModel, ScriptRule};
use dbdoctor_core::promptlab::{
    propose_prompts, score_prompt, select_template, DiagnosisSample, PromptCandidate, PromptLabError, PromptOrigin, SampleDiagnoser,
};

const CAUSES: [&str; 5] = ["MISSING_INDEXES", "LOCK_CONTENTION", "CPU_CONTENTION", "IO_CONTENTION", "FETCH_LARGE_DATA"];

fn samples() -> Vec<DiagnosisSample> {
    CAUSES
        .iter()
        .enumerate()
        .map(|(i, c)| DiagnosisSample {
            alert: alert(&format!("s{i}"), "Queries slowed down."),
            fixture_dir: data("fixtures/missing_indexes"),
            labeled_causes: vec![c.to_string()],
            script_path: None,
        })
        .collect()
}

/// Finds the labeled cause for the first `k` samples, where `k` is the
/// number of `+` marks in the template.
struct Counting;

impl SampleDiagnoser for Counting {
    fn diagnose(&self, template: &str, sample: &DiagnosisSample) -> Result<Vec<String>, String> {
        let k = template.matches('+').count();
        let idx: usize = sample.alert.alert_id[1..].parse().unwrap();
        if template.contains("boom") {
            return Err("engine failed".into());
        }
        Ok(if idx < k { sample.labeled_causes.clone() } else { vec!["SOMETHING_ELSE".into()] })
    }
}

#[test]
fn score_is_share_of_labels_found() {
    let s = samples();
    let scored = score_prompt(&PromptCandidate::seeded("++++"), &s, &Counting).unwrap();
    assert!((scored.score - 0.80).abs() < 1e-12);
    assert_eq!(scored.per_sample["s4"], vec!["SOMETHING_ELSE"]);
    let failed = score_prompt(&PromptCandidate::seeded("boom +++++"), &s, &Counting).unwrap();
    assert_eq!(failed.score, 0.0);
}

#[test]
fn selection_keeps_best_in_descending_order() {
    let s = samples();
    let templates = ["++", "+++++", "+", "++++", "+++", "++"];
    let scored: Vec<_> = templates
        .iter()
        .map(|t| score_prompt(&PromptCandidate::seeded(*t), &s, &Counting).unwrap())
        .collect();
    let sel = select_template(&scored, 4).unwrap();
    let got: Vec<f64> = sel.reserved.iter().map(|p| p.score).collect();
    assert_eq!(got.len(), 4);
    assert!(got.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(sel.chosen.template, "+++++");
    let max = scored.iter().map(|p| p.score).fold(f64::MIN, f64::max);
    assert_eq!(sel.reserved[0].score, max);
    assert!(select_template(&[], 3).is_err());
}

#[test]
fn proposals_without_experience_slot_are_rejected() {
    let good = DEFAULT_TEMPLATE.replace("Diagnose", "Carefully diagnose");
    let bad = "Look at {anomaly} with {tools} for {task_description}.";
    let reply = serde_json::to_string(&vec![good.clone(), bad.to_string()]).unwrap();
    let gw = Gateway::from_rules(vec![ScriptRule::new("[task: propose_prompt]", reply)]).unwrap();
    let p = propose_prompts(&samples(), 5, &gw).unwrap();
    assert_eq!(p.candidates.len(), 1);
    assert_eq!(p.candidates[0].origin, PromptOrigin::LlmSuggested);
    assert_eq!(p.rejected.len(), 1);
    assert!(p.rejected[0].contains("{experience}"));
    // Five samples fit in one proposal request.
    assert_eq!(gw.completion_calls(), 1);

    let only_bad = Gateway::from_rules(vec![ScriptRule::new("[task: propose_prompt]", bad)]).unwrap();
    assert!(matches!(propose_prompts(&samples(), 5, &only_bad), Err(PromptLabError::NoValidCandidates(_))));
}

#[test]
fn unlabeled_samples_are_rejected() {
    let mut s = samples();
    s[2].labeled_causes.clear();
    assert!(matches!(score_prompt(&PromptCandidate::default_seed(), &s, &Counting), Err(PromptLabError::UnlabeledSample(_))));
    assert!(matches!(score_prompt(&PromptCandidate::default_seed(), &[], &Counting), Err(PromptLabError::NoSamples)));
}
