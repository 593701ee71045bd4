//! Tokenization and sentence segmentation shared by the detectors.
//!
//! Every offset here is a char offset (see [`crate::model::Span`]).

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::model::Span;

const BUILTIN_ABBREVIATIONS: &str = include_str!("../data/lexicons/abbreviations.txt");

/// A lowercased word together with where it sits in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Span,
}

/// Splits on anything that is not alphanumeric and lowercases the pieces.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Like [`word_tokens`], keeping char spans.
pub fn tokens(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = pos;
            }
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.push(Token {
                text: std::mem::take(&mut current),
                span: Span::new(start, pos),
            });
        }
        pos += 1;
    }
    if !current.is_empty() {
        out.push(Token {
            text: current,
            span: Span::new(start, pos),
        });
    }
    out
}

fn builtin_abbreviations() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| parse_abbreviations(BUILTIN_ABBREVIATIONS))
}

pub fn parse_abbreviations(raw: &str) -> HashSet<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Rule-based sentence splitter.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus trailing closing quotes
/// or brackets) that is followed by whitespace or the end of the text. A
/// lone `.` after a guarded abbreviation or a single capital initial does
/// not end a sentence.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter {
            abbreviations: builtin_abbreviations().clone(),
        }
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '”' | '’' | '»')
}

impl SentenceSplitter {
    pub fn with_abbreviations(abbreviations: HashSet<String>) -> Self {
        SentenceSplitter { abbreviations }
    }

    fn guarded(&self, chars: &[char], dot: usize) -> bool {
        let mut begin = dot;
        while begin > 0 && (chars[begin - 1].is_alphanumeric() || chars[begin - 1] == '.') {
            begin -= 1;
        }
        let word: String = chars[begin..dot].iter().collect();
        if word.is_empty() {
            return false;
        }
        let mut it = word.chars();
        if let (Some(c), None) = (it.next(), it.next()) {
            if c.is_uppercase() {
                return true;
            }
        }
        self.abbreviations.contains(&word.to_lowercase())
    }

    /// Sentence spans, trimmed of surrounding whitespace. Spans are ordered,
    /// disjoint and non-empty.
    pub fn split(&self, text: &str) -> Vec<Span> {
        let chars: Vec<char> = text.chars().collect();
        let mut spans = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            if !is_terminator(chars[i]) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < chars.len() && is_terminator(chars[j]) {
                j += 1;
            }
            let single_dot = j == i + 1 && chars[i] == '.';
            while j < chars.len() && is_closer(chars[j]) {
                j += 1;
            }
            let at_boundary = j == chars.len() || chars[j].is_whitespace();
            if at_boundary && !(single_dot && self.guarded(&chars, i)) {
                push_trimmed(&chars, start, j, &mut spans);
                start = j;
            }
            i = j;
        }
        push_trimmed(&chars, start, chars.len(), &mut spans);
        spans
    }
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<Span>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push(Span::new(start, end));
    }
}

/// Convenience wrapper over the default splitter.
pub fn split_sentences(text: &str) -> Vec<Span> {
    SentenceSplitter::default().split(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::slice;

    fn sentences(text: &str) -> Vec<&str> {
        split_sentences(text)
            .into_iter()
            .map(|s| slice(text, s).unwrap())
            .collect()
    }

    #[test]
    fn basic_split() {
        assert_eq!(sentences("Nice day. You idiot."), vec!["Nice day.", "You idiot."]);
        assert_eq!(sentences("no terminal punctuation"), vec!["no terminal punctuation"]);
        assert_eq!(sentences("Wait... what?! Really."), vec!["Wait...", "what?!", "Really."]);
    }

    #[test]
    fn abbreviations_and_initials_do_not_split() {
        assert_eq!(
            sentences("Dr. Smith met Mr. J. Doe, e.g. at noon. Then left."),
            vec!["Dr. Smith met Mr. J. Doe, e.g. at noon.", "Then left."]
        );
    }

    #[test]
    fn inner_dots_do_not_split() {
        assert_eq!(
            sentences("Mail jane.doe@example.com now. Pi is 3.14 ok."),
            vec!["Mail jane.doe@example.com now.", "Pi is 3.14 ok."]
        );
    }

    #[test]
    fn empty_segments_skipped() {
        assert!(split_sentences("   ").is_empty());
        assert_eq!(sentences(" . ! "), vec![".", "!"]);
        for s in split_sentences("a.  \n  b!   ") {
            assert!(!s.is_empty());
        }
    }

    #[test]
    fn tokens_have_char_spans() {
        let text = "Héllo, wörld 42!";
        let toks = tokens(text);
        let words: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, vec!["héllo", "wörld", "42"]);
        for t in &toks {
            assert_eq!(slice(text, t.span).unwrap().to_lowercase(), t.text);
        }
        assert_eq!(word_tokens(text), words);
    }
}
