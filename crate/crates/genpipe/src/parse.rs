//! Parsing of the `{"qa_pairs": [...]}` envelope.
//!
//! Answers tag each object mention with its id, `<obj2>`. Each tag becomes
//! a `[SEG]` marker and contributes, in order, one target id.

use std::fmt;

use aura_core::{count_seg, Conversation, SEG_TOKEN};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bundle::ObjectAnnotationBundle;
use crate::{GenError, Result, QA_PAIRS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemProblem {
    Count { expected: usize, found: usize },
    Malformed { detail: String },
    EmptyQuestion,
    NoTargets,
    UnknownObject { id: String },
    StraySeg,
}

impl fmt::Display for ItemProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Count { expected, found } => write!(f, "expected {expected} pairs, found {found}"),
            Self::Malformed { detail } => write!(f, "malformed item: {detail}"),
            Self::EmptyQuestion => f.write_str("question is empty"),
            Self::NoTargets => f.write_str("answer tags no object"),
            Self::UnknownObject { id } => write!(f, "answer tags unknown object {id}"),
            Self::StraySeg => write!(f, "answer contains a literal {SEG_TOKEN} marker"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    /// Position in the envelope; `None` for whole-response problems.
    pub index: Option<usize>,
    pub problem: ItemProblem,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedQa {
    /// Items in envelope order, including flagged ones, with their index.
    pub items: Vec<(usize, Conversation)>,
    pub errors: Vec<ItemError>,
}

impl ParsedQa {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn conversations(&self) -> Vec<Conversation> {
        self.items.iter().map(|(_, c)| c.clone()).collect()
    }
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

/// Replaces `<id>` tags with `[SEG]` and collects the ids in order.
pub fn untag_answer(tagged: &str) -> (String, Vec<String>) {
    let mut text = String::with_capacity(tagged.len());
    let mut ids = Vec::new();
    let mut rest = tagged;
    while let Some(open) = rest.find('<') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('>') {
            Some(close) if close > 0 && after[..close].chars().all(is_id_char) => {
                ids.push(after[..close].to_string());
                text.push_str(SEG_TOKEN);
                rest = &after[close + 1..];
            }
            _ => {
                text.push('<');
                rest = after;
            }
        }
    }
    text.push_str(rest);
    (text, ids)
}

/// Inverse of [`untag_answer`] for answers whose markers match the targets.
pub fn tag_answer(answer: &str, target_ids: &[String]) -> String {
    let mut out = String::with_capacity(answer.len());
    let mut ids = target_ids.iter();
    let mut pieces = answer.split(SEG_TOKEN).peekable();
    while let Some(piece) = pieces.next() {
        out.push_str(piece);
        if pieces.peek().is_some() {
            match ids.next() {
                Some(id) => {
                    out.push('<');
                    out.push_str(id);
                    out.push('>');
                }
                None => out.push_str(SEG_TOKEN),
            }
        }
    }
    out
}

/// The envelope the generator is instructed to produce.
pub fn render_qa(items: &[Conversation]) -> String {
    let pairs: Vec<Value> = items
        .iter()
        .map(|c| {
            serde_json::json!({
                "question": c.question,
                "answer": tag_answer(&c.answer, &c.target_ids),
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "qa_pairs": pairs })).expect("json serializes")
}

/// Outermost `{...}` of `raw`, tolerating code fences and surrounding prose.
fn envelope_slice(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

/// Parses with the default expected count.
pub fn parse_qa(raw: &str, bundle: &ObjectAnnotationBundle) -> Result<ParsedQa> {
    parse_qa_expecting(raw, bundle, QA_PAIRS)
}

pub fn parse_qa_expecting(raw: &str, bundle: &ObjectAnnotationBundle, expected: usize) -> Result<ParsedQa> {
    let slice = envelope_slice(raw).ok_or_else(|| GenError::Envelope("no JSON object in response".into()))?;
    let value: Value = serde_json::from_str(slice).map_err(|e| GenError::Envelope(e.to_string()))?;
    let pairs = value
        .get("qa_pairs")
        .and_then(Value::as_array)
        .ok_or_else(|| GenError::Envelope("missing `qa_pairs` array".into()))?;

    let mut out = ParsedQa::default();
    if pairs.len() != expected {
        out.errors.push(ItemError {
            index: None,
            problem: ItemProblem::Count {
                expected,
                found: pairs.len(),
            },
        });
    }
    for (index, pair) in pairs.iter().enumerate() {
        let field = |name: &str| pair.get(name).and_then(Value::as_str);
        let (Some(question), Some(tagged)) = (field("question"), field("answer")) else {
            out.errors.push(ItemError {
                index: Some(index),
                problem: ItemProblem::Malformed {
                    detail: "needs string fields `question` and `answer`".into(),
                },
            });
            continue;
        };
        let mut flag = |problem| out.errors.push(ItemError { index: Some(index), problem });
        if count_seg(tagged) > 0 {
            flag(ItemProblem::StraySeg);
        }
        let (answer, target_ids) = untag_answer(tagged);
        if question.trim().is_empty() {
            flag(ItemProblem::EmptyQuestion);
        }
        if target_ids.is_empty() {
            flag(ItemProblem::NoTargets);
        }
        for id in &target_ids {
            if bundle.object(id).is_none() {
                flag(ItemProblem::UnknownObject { id: id.clone() });
            }
        }
        out.items.push((
            index,
            Conversation {
                question: question.to_string(),
                answer,
                target_ids,
            },
        ));
    }
    Ok(out)
}
