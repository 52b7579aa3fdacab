//! Vocabulary and token-id captions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;

pub const PAD_SURFACE: &str = "<pad>";
pub const BOS_SURFACE: &str = "<bos>";
pub const EOS_SURFACE: &str = "<eos>";

/// A caption as vocabulary ids. Special markers are the reserved ids
/// [`PAD`], [`BOS`] and [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Content tokens only: stops at the first [`EOS`] and skips [`BOS`]/[`PAD`].
    pub fn content(&self) -> TokenSequence {
        TokenSequence(
            self.0
                .iter()
                .copied()
                .take_while(|&t| t != EOS)
                .filter(|&t| !is_special(t))
                .collect(),
        )
    }

    /// `content()` followed by a single [`EOS`].
    pub fn with_eos(&self) -> TokenSequence {
        let mut ids = self.content().0;
        ids.push(EOS);
        TokenSequence(ids)
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSequence(v)
    }
}

pub fn is_special(id: TokenId) -> bool {
    id == PAD || id == BOS || id == EOS
}

/// Bidirectional id ↔ surface mapping. Ids 0..3 are always the special markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary with the special markers followed by `words`.
    /// Duplicate surfaces keep their first id.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab { words: Vec::new(), index: HashMap::new() };
        for w in [PAD_SURFACE, BOS_SURFACE, EOS_SURFACE] {
            v.push(w.to_string());
        }
        for w in words {
            v.push(w.into());
        }
        v
    }

    /// Rebuilds from a full word list whose first three entries are the markers.
    pub fn from_full_list(words: Vec<String>) -> Option<Self> {
        if words.len() < 3 || words[0] != PAD_SURFACE || words[1] != BOS_SURFACE || words[2] != EOS_SURFACE {
            return None;
        }
        Some(Vocab::new(words.into_iter().skip(3)))
    }

    fn push(&mut self, w: String) {
        if !self.index.contains_key(&w) {
            self.index.insert(w.clone(), self.words.len() as TokenId);
            self.words.push(w);
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> &str {
        self.words.get(id as usize).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn surfaces<'a>(&'a self, seq: &TokenSequence) -> Vec<&'a str> {
        seq.ids().iter().map(|&t| self.surface(t)).collect()
    }

    /// Space-joined content surfaces.
    pub fn render(&self, seq: &TokenSequence) -> String {
        self.surfaces(&seq.content()).join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first() {
        let v = Vocab::new(["a", "b", "a"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("b"), Some(4));
        assert_eq!(Vocab::from_full_list(v.words().to_vec()), Some(v));
    }

    #[test]
    fn content_stops_at_eos() {
        let s = TokenSequence(vec![BOS, 5, 6, EOS, 7, PAD]);
        assert_eq!(s.content().0, vec![5, 6]);
        assert_eq!(s.with_eos().0, vec![5, 6, EOS]);
    }
}
