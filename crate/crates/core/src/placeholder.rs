//! Lexical grammar for placeholder tokens.
//!
//! A well-formed token is `__ROLE<k>__`: two underscores, an uppercase
//! role (underscores allowed inside, e.g. `DATE_GENERIC`), a positive
//! decimal index without leading zeros, two underscores. Anything that
//! opens and closes like a token but breaks the grammar is reported as
//! malformed rather than silently treated as text, so screening can see
//! near-miss placeholders.
//!
//! Offsets are code points, like every other offset in this crate.

/// Classification of one scanned token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    WellFormed { role: String, index: u32 },
    Malformed,
}

/// One placeholder-shaped token found in a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceholderToken {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub kind: TokenKind,
}

fn is_inner_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Scan a text for placeholder-shaped tokens, left to right.
///
/// Adjacent tokens such as `__VET1____CLINIC1__` are split correctly: a
/// scan resumes immediately after each closing `__`.
pub fn scan(text: &str) -> Vec<PlaceholderToken> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i + 4 <= n {
        if chars[i] != '_' || chars[i + 1] != '_' {
            i += 1;
            continue;
        }
        // Opening pair at i; look for the closing pair.
        let mut j = i + 2;
        let mut close = None;
        while j < n && is_inner_char(chars[j]) {
            if chars[j] == '_' && j + 1 < n && chars[j + 1] == '_' {
                close = Some(j);
                break;
            }
            j += 1;
        }
        match close {
            Some(close) if close > i + 2 => {
                let inner: String = chars[i + 2..close].iter().collect();
                let token_text: String = chars[i..close + 2].iter().collect();
                tokens.push(PlaceholderToken {
                    start: i,
                    end: close + 2,
                    text: token_text,
                    kind: classify_inner(&inner),
                });
                i = close + 2;
            }
            _ => {
                // No closing pair, or an empty `____`: the opening pair is
                // plain text.
                i += 2;
            }
        }
    }
    tokens
}

fn classify_inner(inner: &str) -> TokenKind {
    let digits_at = inner.find(|c: char| c.is_ascii_digit());
    let Some(digits_at) = digits_at else {
        return TokenKind::Malformed;
    };
    let (role, digits) = inner.split_at(digits_at);
    let role_ok = !role.is_empty()
        && role.chars().all(|c| c.is_ascii_uppercase() || c == '_')
        && role.starts_with(|c: char| c.is_ascii_uppercase())
        && !role.ends_with('_');
    let index_ok = digits.chars().all(|c| c.is_ascii_digit()) && !digits.starts_with('0');
    if !role_ok || !index_ok {
        return TokenKind::Malformed;
    }
    match digits.parse::<u32>() {
        Ok(index) => TokenKind::WellFormed {
            role: role.to_string(),
            index,
        },
        Err(_) => TokenKind::Malformed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(text: &str) -> Vec<(String, u32)> {
        scan(text)
            .into_iter()
            .filter_map(|t| match t.kind {
                TokenKind::WellFormed { role, index } => Some((role, index)),
                TokenKind::Malformed => None,
            })
            .collect()
    }

    #[test]
    fn scans_simple_tokens() {
        assert_eq!(
            roles("Seen by __VET1__ at __CLINIC2__."),
            vec![("VET".to_string(), 1), ("CLINIC".to_string(), 2)]
        );
    }

    #[test]
    fn roles_may_contain_underscores() {
        assert_eq!(
            roles("on __DATE_GENERIC1__"),
            vec![("DATE_GENERIC".to_string(), 1)]
        );
    }

    #[test]
    fn adjacent_tokens_split_cleanly() {
        assert_eq!(
            roles("__VET1____CLINIC1__"),
            vec![("VET".to_string(), 1), ("CLINIC".to_string(), 1)]
        );
    }

    #[test]
    fn near_misses_are_malformed() {
        for text in ["__VET__", "__vet1__", "__VET01__", "__1VET__", "__VET_1__"] {
            let tokens = scan(text);
            assert_eq!(tokens.len(), 1, "{text}");
            assert_eq!(tokens[0].kind, TokenKind::Malformed, "{text}");
        }
    }

    #[test]
    fn plain_text_and_bare_underscores_yield_nothing() {
        assert!(scan("no placeholders here").is_empty());
        assert!(scan("a __ b ____ c").is_empty());
        assert!(scan("trailing __").is_empty());
    }

    #[test]
    fn offsets_are_code_points() {
        let tokens = scan("Zoë __VET1__");
        assert_eq!(tokens.len(), 1);
        assert_eq!((tokens[0].start, tokens[0].end), (4, 12));
        assert_eq!(tokens[0].text, "__VET1__");
    }
}
