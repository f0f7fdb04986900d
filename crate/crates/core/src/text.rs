//! Small text helpers shared across modules.

/// Lowercase and collapse runs of whitespace to a single space.
pub(crate) fn normalize_ws_lower(s: &str) -> String {
    collapse_ws(&s.to_lowercase())
}

pub(crate) fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Last `n` characters of `s` (char-boundary safe).
pub(crate) fn tail_chars(s: &str, n: usize) -> &str {
    let count = s.chars().count();
    if count <= n {
        return s;
    }
    let skip = count - n;
    let (idx, _) = s.char_indices().nth(skip).expect("index within bounds");
    &s[idx..]
}

/// Lowercase alphanumeric tokens.
pub(crate) fn tokens(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}
