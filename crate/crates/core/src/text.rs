//! Offset and counting helpers shared across the toolkit.
//!
//! All span offsets in this crate count Unicode scalar values (code
//! points), never bytes. These helpers are the single place where the
//! char/byte conversion happens.

/// Number of Unicode scalar values in `s`.
pub fn char_count(s: &str) -> usize {
    s.chars().count()
}

/// Number of words, counted as maximal non-whitespace runs.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Byte offset of every char boundary, plus the final length.
///
/// `offsets[i]` is the byte position of the i-th code point, so a span
/// `[start, end)` in code points covers bytes `offsets[start]..offsets[end]`.
pub fn char_to_byte_offsets(s: &str) -> Vec<usize> {
    let mut offsets: Vec<usize> = s.char_indices().map(|(b, _)| b).collect();
    offsets.push(s.len());
    offsets
}

/// Substring of `s` at code-point range `[start, end)`.
///
/// Returns `None` when the range is out of bounds or inverted.
pub fn char_substring(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut iter = s.char_indices();
    let byte_start = if start == 0 {
        0
    } else {
        iter.nth(start - 1).map(|(b, c)| b + c.len_utf8())?
    };
    let mut rest = s[byte_start..].char_indices();
    let byte_end = if end == start {
        byte_start
    } else {
        rest.nth(end - start - 1)
            .map(|(b, c)| byte_start + b + c.len_utf8())?
    };
    Some(&s[byte_start..byte_end])
}
