//! Word tokenization shared by the bag-of-words embedder and the lexical metrics:
//! lowercase, then split on anything that is not alphanumeric. Punctuation is a separator and
//! never becomes a token.

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Remove one surrounding Markdown code fence (with optional language tag), if present.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(body) = t.strip_prefix("```") else { return t };
    let Some(body) = body.strip_suffix("```") else { return t };
    match body.find('\n') {
        Some(nl) if !body[..nl].trim().contains(char::is_whitespace) => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

/// Parse a model reply that should be a single JSON value, tolerating a code fence.
pub fn parse_json_reply(text: &str) -> Result<serde_json::Value, serde_json::Error> {
    serde_json::from_str(strip_code_fence(text))
}

/// Whether `word` occurs in `text` delimited by non-alphanumeric characters (case-sensitive).
pub fn contains_word(text: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    text.match_indices(word).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}
