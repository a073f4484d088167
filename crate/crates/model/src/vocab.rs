//! Word-level vocabulary and tokenizer.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

pub const PAD: &str = "[PAD]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const SEG: &str = "[SEG]";
pub const UNK: &str = "[UNK]";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const SEG_ID: usize = 3;
pub const UNK_ID: usize = 4;

const SPECIALS: [&str; 5] = [PAD, BOS, EOS, SEG, UNK];
const PUNCT: &[char] = &['.', ',', '?', '!', ';', ':'];

/// Splits on whitespace, detaches `[SEG]` and trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        while !rest.is_empty() {
            if let Some(pos) = rest.find(SEG) {
                push_word(&mut out, &rest[..pos]);
                out.push(SEG.to_string());
                rest = &rest[pos + SEG.len()..];
            } else {
                push_word(&mut out, rest);
                rest = "";
            }
        }
    }
    out
}

fn push_word(out: &mut Vec<String>, word: &str) {
    let core = word.trim_end_matches(PUNCT);
    if !core.is_empty() {
        out.push(core.to_string());
    }
    for c in word[core.len()..].chars() {
        out.push(c.to_string());
    }
}

/// Inverse of [`tokenize`] up to whitespace normalisation.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        let glue = t == SEG || (t.len() == 1 && t.starts_with(PUNCT));
        if !out.is_empty() && !glue {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials first, then the corpus words in sorted order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(tokenize)
            .filter(|w| !SPECIALS.contains(&w.as_str()))
            .collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_tokens(tokens).expect("specials lead the list")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(ModelError::Vocab(format!(
                "vocabulary must start with {SPECIALS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModelError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| ModelError::Vocab(format!("token id {id} outside vocabulary of {}", self.len())))
    }

    /// Unknown words map to `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    /// Answer tokens followed by `[EOS]`: the teacher-forcing target.
    pub fn encode_answer(&self, text: &str) -> Vec<usize> {
        let mut ids = self.encode(text);
        ids.push(EOS_ID);
        ids
    }

    /// Text of `ids`, stopping at `[EOS]` and skipping `[PAD]`/`[BOS]`.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS_ID => break,
                PAD_ID | BOS_ID => {}
                _ => words.push(self.token(id)?),
            }
        }
        Ok(detokenize(&words))
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.len()) {
            Some(bad) => Err(ModelError::Vocab(format!(
                "token id {bad} outside vocabulary of {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_detaches_markers_and_punctuation() {
        let t = tokenize("The red ellipse[SEG] is hidden, right?");
        assert_eq!(
            t,
            vec!["The", "red", "ellipse", "[SEG]", "is", "hidden", ",", "right", "?"]
        );
        assert_eq!(detokenize(&t), "The red ellipse[SEG] is hidden, right?");
    }

    #[test]
    fn adjacent_markers() {
        assert_eq!(tokenize("a[SEG][SEG]."), vec!["a", "[SEG]", "[SEG]", "."]);
    }

    #[test]
    fn vocab_round_trip() {
        let v = Vocab::build(["Move the blue triangle[SEG].", "It is the red ellipse[SEG]."]);
        assert_eq!(v.id(SEG), Some(SEG_ID));
        let ids = v.encode_answer("It is the blue triangle[SEG].");
        assert_eq!(*ids.last().unwrap(), EOS_ID);
        assert_eq!(v.decode(&ids).unwrap(), "It is the blue triangle[SEG].");
        assert_eq!(v.encode("purple")[0], UNK_ID);
        assert!(v.check_ids(&[v.len()]).is_err());
    }
}
