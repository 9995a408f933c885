use crate::action::EgoAction;

const ANSWER_MARKER: &str = "final answer:";

/// Map free-form model output to an action. A `Final Answer: <TOKEN>` line
/// wins (the last such line when several exist); otherwise the last action
/// token anywhere in the text; `None` when the text names no action.
pub fn parse_action(raw_text: &str) -> Option<EgoAction> {
    let lower = raw_text.to_ascii_lowercase();
    let answers: Vec<EgoAction> = lower
        .match_indices(ANSWER_MARKER)
        .filter_map(|(i, m)| leading_token(&lower[i + m.len()..]))
        .collect();
    if let Some(a) = answers.last() {
        return Some(*a);
    }
    last_token(&lower)
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Token at the start of `rest`, skipping whitespace and light markup.
fn leading_token(rest: &str) -> Option<EgoAction> {
    let trimmed = rest.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '`' | '"' | '\'' | '<' | '['));
    EgoAction::ALL.into_iter().find(|a| {
        let t = a.token().to_ascii_lowercase();
        trimmed.starts_with(&t) && trimmed.as_bytes().get(t.len()).map_or(true, |b| !is_word(*b))
    })
}

fn last_token(lower: &str) -> Option<EgoAction> {
    let bytes = lower.as_bytes();
    EgoAction::ALL
        .into_iter()
        .filter_map(|a| {
            let t = a.token().to_ascii_lowercase();
            lower
                .match_indices(&t)
                .filter(|(i, _)| {
                    let end = i + t.len();
                    (*i == 0 || !is_word(bytes[i - 1])) && (end >= bytes.len() || !is_word(bytes[end]))
                })
                .map(|(i, _)| i)
                .last()
                .map(|i| (i, a))
        })
        .max_by_key(|(i, _)| *i)
        .map(|(_, a)| a)
}
