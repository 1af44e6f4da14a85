//! Prompt text for the engine's model calls.
//!
//! Every user prompt starts with a `[task: ...]` marker so scripted replies
//! can be keyed on the kind of call.

pub const TEMPLATE_SLOTS: [&str; 4] = ["task_description", "anomaly", "tools", "experience"];

pub const DEFAULT_TASK_DESCRIPTION: &str =
    "Work out which conditions inside the database explain the anomaly below. Check metrics before drawing conclusions, and only call the listed tools.";

pub const DEFAULT_TEMPLATE: &str = "{task_description}

Anomaly:
{anomaly}

Tools you can call:
{tools}

Experience that may apply:
{experience}";

/// Fills `{slot}` occurrences. Unknown braces are left alone.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Slots the template does not contain, in canonical order.
pub fn missing_slots(template: &str) -> Vec<&'static str> {
    TEMPLATE_SLOTS
        .iter()
        .copied()
        .filter(|s| !template.contains(&format!("{{{s}}}")))
        .collect()
}

pub(crate) const PROPOSE_SYSTEM: &str = "You are a database administrator diagnosing a performance anomaly one tool call at a time. \
Answer with `Thought:`, `Action:` (a tool name) and `Action Input:` (a JSON object of arguments). \
When nothing useful is left to check, answer with `Final Answer:` instead.";

pub(crate) const REFLECT_SYSTEM: &str = "Decide whether a diagnosis step produced information that helps locate the root cause. \
Answer `useful` or `not useful`, optionally followed by a reason.";

pub(crate) const JUDGE_SYSTEM: &str = "You check whether collected metric evidence satisfies a diagnosis rule. Answer `yes` or `no` first.";

pub(crate) const FINAL_SYSTEM: &str = "Write the closing analysis of a database diagnosis for an on-call engineer. \
Name each root cause on its own line as `Root cause: <ID>` and each fix as `Solution: <text>`.";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_template_has_every_slot() {
        assert!(missing_slots(DEFAULT_TEMPLATE).is_empty());
        assert_eq!(missing_slots("{anomaly} {tools}"), vec!["task_description", "experience"]);
    }

    #[test]
    fn render_fills_slots() {
        let s = render_template("a {x} b {y} {x}", &[("x", "1"), ("y", "2")]);
        assert_eq!(s, "a 1 b 2 1");
    }
}
