//! Prompt templates, shipped as text resources. Placeholders are `{name}`
//! style and are filled in a single pass, so substituted values are never
//! re-expanded.

/// Bumped whenever a template's wording changes.
pub const TEMPLATE_VERSION: u32 = 1;

pub const ANECDOTE: &str = include_str!("../../resources/prompts/anecdote.txt");
pub const BACKSTORY: &str = include_str!("../../resources/prompts/backstory.txt");
pub const OPINION: &str = include_str!("../../resources/prompts/opinion.txt");
pub const CURRENT_OPINION: &str = include_str!("../../resources/prompts/current_opinion.txt");
pub const PERCEPTION_PLAN: &str = include_str!("../../resources/prompts/perception_plan.txt");
pub const MALICIOUS_PLAN: &str = include_str!("../../resources/prompts/malicious_plan.txt");
pub const APP_ACTION: &str = include_str!("../../resources/prompts/app_action.txt");
pub const INTRODUCTION: &str = include_str!("../../resources/prompts/introduction.txt");
pub const VOTE_POLL: &str = include_str!("../../resources/prompts/vote_poll.txt");
pub const FAVORABILITY_POLL: &str = include_str!("../../resources/prompts/favorability_poll.txt");

pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after.find('}').filter(|&end| {
            end > 0 && after[..end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        });
        match key_len.and_then(|end| values.iter().find(|(k, _)| *k == &after[..end]).map(|(_, v)| (end, v))) {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_string()
}

/// Bullet list, or a placeholder line when empty.
pub fn bullets<S: AsRef<str>>(items: impl IntoIterator<Item = S>) -> String {
    let lines: Vec<String> = items.into_iter().map(|s| format!("- {}", s.as_ref())).collect();
    if lines.is_empty() {
        "(nothing)".to_string()
    } else {
        lines.join("\n")
    }
}
