//! Token counting for patch-length filtering and prompt-window checks.

/// A pluggable token counter. `name` is recorded in dataset metadata so that
/// thresholds computed under one tokenizer are never compared with another.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> u64;
}

/// Splits on whitespace and punctuation: every run of word characters
/// (alphanumerics and `_`) is one token, and every other non-space character
/// is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

impl WordPunctTokenizer {
    pub const NAME: &'static str = "word-punct-v1";

    pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
        let mut rest = text;
        std::iter::from_fn(move || {
            rest = rest.trim_start();
            let first = rest.chars().next()?;
            let len = if is_word(first) {
                rest.find(|c: char| !is_word(c)).unwrap_or(rest.len())
            } else {
                first.len_utf8()
            };
            let (tok, tail) = rest.split_at(len);
            rest = tail;
            Some(tok)
        })
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl Tokenizer for WordPunctTokenizer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn count(&self, text: &str) -> u64 {
        Self::tokens(text).count() as u64
    }
}

/// Counts tokens with the default tokenizer.
pub fn count_tokens(text: &str) -> u64 {
    WordPunctTokenizer.count(text)
}
