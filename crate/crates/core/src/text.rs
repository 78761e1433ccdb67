//! Line conventions shared by the tokenizer and the ground-truth extractor.
//!
//! A line is a maximal run of bytes terminated by `\n` or by the end of the
//! text. A trailing newline does not open a new (empty) line, so `"a\nb\n"`
//! has two lines and the empty text has none.

use std::ops::Range;

/// Byte ranges of every line, each including its terminating newline if any.
pub fn line_spans(text: &[u8]) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, &b) in text.iter().enumerate() {
        if b == b'\n' {
            spans.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < text.len() {
        spans.push(start..text.len());
    }
    spans
}

pub fn line_count(text: &str) -> usize {
    line_spans(text.as_bytes()).len()
}

/// Line contents without their terminating newline.
pub fn split_lines(text: &str) -> Vec<&str> {
    line_spans(text.as_bytes())
        .into_iter()
        .map(|r| {
            let s = &text[r];
            s.strip_suffix('\n').unwrap_or(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(line_count(""), 0);
        assert_eq!(line_count("a"), 1);
        assert_eq!(line_count("a\n"), 1);
        assert_eq!(line_count("a\nb"), 2);
        assert_eq!(line_count("a\n\nb\n"), 3);
        assert_eq!(line_count("\n"), 1);
    }

    #[test]
    fn split_matches_count() {
        for t in ["", "x", "x\n", "x\r\ny", "\n\n", "ab\ncd\n\nef"] {
            assert_eq!(split_lines(t).len(), line_count(t));
        }
        assert_eq!(split_lines("ab\n\ncd"), vec!["ab", "", "cd"]);
    }
}
