use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ModelError, TokenId, TokenizedSummary};

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Word-level tokenizer: lowercase, then split each whitespace chunk into
/// alphanumeric runs (apostrophes kept inside words) and single punctuation
/// characters.
pub fn word_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() || (c == '\'' && !word.is_empty()) {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: Option<TokenId>,
    unk: Option<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_tokens(r.tokens)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens }
    }
}

impl Vocab {
    /// A vocabulary over exactly these tokens. `<eos>` and `<unk>` are
    /// recognised if present.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let index: HashMap<String, TokenId> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            eos: index.get(EOS).copied(),
            unk: index.get(UNK).copied(),
            tokens,
            index,
        }
    }

    /// Build from a corpus: `<eos>`, `<unk>`, then the most frequent word
    /// pieces (ties broken alphabetically) up to `max_size` entries.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in word_pieces(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let specials = [EOS.to_string(), UNK.to_string()];
        let tokens = specials
            .into_iter()
            .chain(words.into_iter().map(|(w, _)| w))
            .take(max_size.max(2));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> Option<TokenId> {
        self.eos
    }

    pub fn unk(&self) -> Option<TokenId> {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encode a summary. Every word piece must be in the vocabulary; an
    /// `<eos>` is appended when the vocabulary has one.
    pub fn encode_summary(&self, text: &str) -> Result<TokenizedSummary, ModelError> {
        let mut tokens = word_pieces(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or(ModelError::OutOfVocabulary(w)))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(eos) = self.eos {
            tokens.push(eos);
        }
        if tokens.is_empty() {
            return Err(ModelError::EmptySummary);
        }
        Ok(TokenizedSummary {
            text: self.decode(&tokens),
            tokens,
        })
    }

    /// Encode source text; unknown pieces map to `<unk>` or are dropped.
    pub fn encode_source(&self, text: &str) -> Vec<TokenId> {
        word_pieces(text)
            .into_iter()
            .filter_map(|w| self.id(&w).or(self.unk))
            .collect()
    }

    /// Join non-special tokens with single spaces.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| Some(id) != self.eos)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
