//! Lexicon-based reference classifier for visual types.
//!
//! Checks run in a fixed order: waiting, external tool, hand gesture,
//! movement. The first category with a matching token wins; otherwise the
//! step is a highlight. The result is only used to cross-check the type a
//! provider assigned.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::VisualType;

const DEFAULT_LEXICONS: &str = include_str!("../../data/lexicons.txt");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("reading lexicon file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Waiting,
    Tool,
    Gesture,
    Movement,
    Default,
}

impl MatchRule {
    pub fn visual_type(self) -> VisualType {
        match self {
            MatchRule::Waiting => VisualType::Widget,
            MatchRule::Tool => VisualType::Tool,
            MatchRule::Gesture => VisualType::HandGesture,
            MatchRule::Movement => VisualType::Movement,
            MatchRule::Default => VisualType::Highlight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchTrace {
    pub visual_type: VisualType,
    pub rule: MatchRule,
    pub token: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassifierLexicons {
    pub waiting: Vec<String>,
    pub tool: Vec<String>,
    pub gesture: Vec<String>,
    pub movement: Vec<String>,
}

impl ClassifierLexicons {
    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut lex = ClassifierLexicons::default();
        let mut current: Option<&mut Vec<String>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(match name.trim() {
                    "waiting" => &mut lex.waiting,
                    "tool" => &mut lex.tool,
                    "gesture" => &mut lex.gesture,
                    "movement" => &mut lex.movement,
                    other => {
                        return Err(LexiconError::Syntax { line: i + 1, reason: format!("unknown category [{other}]") })
                    }
                });
                continue;
            }
            let list = current.as_deref_mut().ok_or_else(|| LexiconError::Syntax {
                line: i + 1,
                reason: "token before any [category] header".into(),
            })?;
            let token = normalize(line);
            if !token.is_empty() {
                list.push(token);
            }
        }
        Ok(lex)
    }

    fn ordered(&self) -> [(MatchRule, &[String]); 4] {
        [
            (MatchRule::Waiting, &self.waiting),
            (MatchRule::Tool, &self.tool),
            (MatchRule::Gesture, &self.gesture),
            (MatchRule::Movement, &self.movement),
        ]
    }
}

impl ClassifierLexicons {
    /// The word lists shipped with the crate.
    pub fn builtin() -> &'static ClassifierLexicons {
        static LEX: OnceLock<ClassifierLexicons> = OnceLock::new();
        LEX.get_or_init(|| ClassifierLexicons::parse(DEFAULT_LEXICONS).expect("shipped lexicons parse"))
    }
}

/// Lowercases and turns everything except letters, digits and `'` into
/// single spaces.
fn normalize(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Byte offset of the first whole-word occurrence of `token` in `haystack`.
fn find_word(haystack: &str, token: &str) -> Option<usize> {
    let padded = format!(" {haystack} ");
    padded.find(&format!(" {token} "))
}

pub fn classify_visual_type(instruction: &str, lexicons: &ClassifierLexicons) -> MatchTrace {
    let text = normalize(instruction);
    for (rule, tokens) in lexicons.ordered() {
        // Earliest occurrence in the text wins, longer token on ties.
        let hit = tokens
            .iter()
            .filter_map(|t| find_word(&text, t).map(|pos| (pos, std::cmp::Reverse(t.len()), t)))
            .min();
        if let Some((_, _, token)) = hit {
            return MatchTrace { visual_type: rule.visual_type(), rule, token: Some(token.clone()) };
        }
    }
    MatchTrace { visual_type: VisualType::Highlight, rule: MatchRule::Default, token: None }
}
