//! Plain-text prompt templates with `{name}` placeholders.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::EgoAction;
use crate::error::{Error, Result};

/// Every placeholder a template may reference.
pub const PLACEHOLDERS: &[&str] = &[
    "ego_speed",
    "lane_id",
    "nearby_vehicles",
    "lane_summaries",
    "safety_left",
    "safety_right",
    "last_action",
    "objective",
];

macro_rules! builtin {
    ($name:literal) => {
        include_str!(concat!("../../templates/v1/", $name, ".txt"))
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub version: String,
    pub system_message: String,
    pub driving_rules: String,
    pub decision_cautions: String,
    pub user_objective: String,
    pub last_outcome: String,
    pub overview: String,
    pub safety: String,
    pub output_format: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub const FILES: [&'static str; 8] = [
        "system_message",
        "driving_rules",
        "decision_cautions",
        "user_objective",
        "last_outcome",
        "overview",
        "safety",
        "output_format",
    ];

    pub fn builtin() -> Self {
        Self {
            version: include_str!("../../templates/v1/VERSION").trim().to_string(),
            system_message: builtin!("system_message").trim().to_string(),
            driving_rules: builtin!("driving_rules").trim().to_string(),
            decision_cautions: builtin!("decision_cautions").trim().to_string(),
            user_objective: builtin!("user_objective").trim().to_string(),
            last_outcome: builtin!("last_outcome").trim().to_string(),
            overview: builtin!("overview").trim().to_string(),
            safety: builtin!("safety").trim().to_string(),
            output_format: builtin!("output_format").trim().to_string(),
        }
    }

    /// Load `<name>.txt` for every template plus an optional `VERSION` file.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(format!("{name}.txt"));
            fs::read_to_string(&path)
                .map(|s| s.trim().to_string())
                .map_err(|e| Error::io(path, e))
        };
        let version = fs::read_to_string(dir.join("VERSION"))
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|_| dir.display().to_string());
        let t = Self {
            version,
            system_message: read("system_message")?,
            driving_rules: read("driving_rules")?,
            decision_cautions: read("decision_cautions")?,
            user_objective: read("user_objective")?,
            last_outcome: read("last_outcome")?,
            overview: read("overview")?,
            safety: read("safety")?,
            output_format: read("output_format")?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("system_message", &self.system_message),
            ("driving_rules", &self.driving_rules),
            ("decision_cautions", &self.decision_cautions),
            ("user_objective", &self.user_objective),
            ("last_outcome", &self.last_outcome),
            ("overview", &self.overview),
            ("safety", &self.safety),
            ("output_format", &self.output_format),
        ];
        for (name, body) in all {
            if body.trim().is_empty() {
                return Err(template_error(name, "template is empty"));
            }
            for p in placeholders(body) {
                if !PLACEHOLDERS.contains(&p.as_str()) {
                    return Err(template_error(name, format!("unknown placeholder {{{p}}}")));
                }
            }
        }
        for a in EgoAction::ALL {
            let n = count_token(&self.output_format, a.token());
            if n != 1 {
                return Err(template_error(
                    "output_format",
                    format!("must name {} exactly once, found {n}", a.token()),
                ));
            }
        }
        Ok(())
    }
}

fn template_error(name: &str, reason: impl Into<String>) -> Error {
    Error::Template {
        template: name.to_string(),
        reason: reason.into(),
    }
}

fn placeholders(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(after[..close].to_string());
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Occurrences of `token` not embedded in a longer identifier.
pub(crate) fn count_token(text: &str, token: &str) -> usize {
    let bytes = text.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    text.match_indices(token)
        .filter(|(i, _)| {
            let before = *i == 0 || !is_word(bytes[i - 1]);
            let end = i + token.len();
            let after = end >= bytes.len() || !is_word(bytes[end]);
            before && after
        })
        .count()
}

/// Substitute `{name}` placeholders. Every placeholder in the template must
/// have a value.
pub fn render(template_name: &str, body: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(body.len() + 64);
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| template_error(template_name, "unterminated placeholder"))?;
        let key = &after[..close];
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| template_error(template_name, format!("no value for {{{key}}}")))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_are_valid() {
        PromptTemplates::builtin().validate().unwrap();
        assert_eq!(PromptTemplates::builtin().version, "v1");
    }

    #[test]
    fn render_substitutes() {
        let s = render("t", "lane {lane_id} at {ego_speed} m/s", &[("lane_id", "2"), ("ego_speed", "25.0")]).unwrap();
        assert_eq!(s, "lane 2 at 25.0 m/s");
        assert!(render("t", "x {missing}", &[]).is_err());
        assert!(render("t", "x {open", &[]).is_err());
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let mut t = PromptTemplates::builtin();
        t.overview.push_str(" {weather}");
        assert!(matches!(t.validate(), Err(Error::Template { .. })));
    }

    #[test]
    fn output_format_must_name_each_token_once() {
        let mut t = PromptTemplates::builtin();
        t.output_format = "Answer with IDLE or FASTER.".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn token_counting_respects_word_boundaries() {
        assert_eq!(count_token("LANE_LEFT and IDLE", "IDLE"), 1);
        assert_eq!(count_token("IDLEX", "IDLE"), 0);
        assert_eq!(count_token("FASTER, FASTER", "FASTER"), 2);
    }

    #[test]
    fn load_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = PromptTemplates::builtin();
        for (name, body) in PromptTemplates::FILES.iter().zip([
            &t.system_message,
            &t.driving_rules,
            &t.decision_cautions,
            &t.user_objective,
            &t.last_outcome,
            &t.overview,
            &t.safety,
            &t.output_format,
        ]) {
            fs::write(dir.path().join(format!("{name}.txt")), body).unwrap();
        }
        fs::write(dir.path().join("VERSION"), "v1\n").unwrap();
        assert_eq!(PromptTemplates::load_dir(dir.path()).unwrap(), t);
        fs::remove_file(dir.path().join("safety.txt")).unwrap();
        assert!(matches!(PromptTemplates::load_dir(dir.path()), Err(Error::Io { .. })));
    }
}
