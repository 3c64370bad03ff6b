//! Deterministic, model-agnostic token counting.
//!
//! One token per maximal run of word characters (alphanumerics and `_`) and
//! one per maximal run of other non-whitespace characters.

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Space,
    Word,
    Punct,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphanumeric() || c == '_' {
        Class::Word
    } else {
        Class::Punct
    }
}

pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut prev = Class::Space;
    for c in text.chars() {
        let cls = class(c);
        if cls != Class::Space && cls != prev {
            count += 1;
        }
        prev = cls;
    }
    count
}

/// Longest prefix of `text` holding at most `max_tokens` tokens.
pub fn truncate_to_tokens(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut prev = Class::Space;
    for (i, c) in text.char_indices() {
        let cls = class(c);
        if cls != Class::Space && cls != prev {
            count += 1;
            if count > max_tokens {
                return text[..i].trim_end();
            }
        }
        prev = cls;
    }
    text
}
