use std::sync::LazyLock;

use regex::Regex;

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(^|[^\w@])@\w+").unwrap());

/// Replaces URLs with `HTTPURL` and user mentions with `@USER`, then
/// collapses runs of whitespace. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let text = URL.replace_all(raw, "HTTPURL");
    let text = MENTION.replace_all(&text, "${1}@USER");
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
