//! Prompt templates.
//!
//! Templates are stored as data files and substituted verbatim; a slot is
//! written `${name}` in the template text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Plan,
    Bbox,
    Translation,
    Rotation,
}

impl TemplateId {
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Plan => include_str!("../../data/prompts/plan.txt"),
            TemplateId::Bbox => include_str!("../../data/prompts/bbox.txt"),
            TemplateId::Translation => include_str!("../../data/prompts/translation.txt"),
            TemplateId::Rotation => include_str!("../../data/prompts/rotation.txt"),
        }
    }

    /// Slot names the template requires, in first-use order.
    pub fn slots(self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for (_, name) in markers(self.text()) {
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt template {template:?} needs slot {slot:?}")]
    MissingSlot { template: TemplateId, slot: String },
}

/// `(byte range, name)` of every `${name}` marker in `text`.
fn markers(text: &str) -> Vec<(std::ops::Range<usize>, &str)> {
    let mut out = Vec::new();
    let mut rest = 0;
    while let Some(start) = text[rest..].find("${").map(|i| i + rest) {
        let Some(len) = text[start + 2..].find('}') else { break };
        let name = &text[start + 2..start + 2 + len];
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            out.push((start..start + 3 + len, name));
        }
        rest = start + 2;
    }
    out
}

/// Substitutes every slot of `template` with the matching value.
/// Slots not used by the template are ignored.
pub fn render_prompt(template: TemplateId, slots: &BTreeMap<String, String>) -> Result<String, PromptError> {
    let text = template.text();
    let mut out = String::with_capacity(text.len() + 64);
    let mut last = 0;
    for (range, name) in markers(text) {
        let value = slots
            .get(name)
            .ok_or_else(|| PromptError::MissingSlot { template, slot: name.to_string() })?;
        out.push_str(&text[last..range.start]);
        out.push_str(value);
        last = range.end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

pub fn slot_map<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
