/// A lowercased, whitespace-free surface token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    /// Builds a token from a surface string, lowercasing it. Returns `None`
    /// for empty strings or strings containing whitespace.
    pub fn new(surface: &str) -> Option<Self> {
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return None;
        }
        Some(Token(surface.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercases, splits on whitespace and strips leading/trailing punctuation
/// from every piece. Pieces that become empty are dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|piece| {
            let trimmed = piece.trim_matches(|c: char| c.is_ascii_punctuation() || is_unicode_punct(c));
            Token::new(trimmed)
        })
        .collect()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '“' | '”' | '‘' | '’' | '…' | '«' | '»' | '¿' | '¡')
}
