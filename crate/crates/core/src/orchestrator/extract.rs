use serde::{Deserialize, Serialize};

use super::CascadeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Opening and closing markers; when both appear, the enclosed span wins.
    pub sentinels: Option<(String, String)>,
    /// Lines starting with one of these (ASCII case-insensitive) are
    /// preamble. Text after a colon on such a line is still used.
    pub drop_prefixes: Vec<String>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            sentinels: Some(("<simplified>".into(), "</simplified>".into())),
            drop_prefixes: vec![
                "Here is".into(),
                "Here's".into(),
                "Sure".into(),
                "Simplified sentence".into(),
            ],
        }
    }
}

const QUOTE_PAIRS: [(char, char); 6] = [
    ('"', '"'),
    ('\'', '\''),
    ('\u{201c}', '\u{201d}'),
    ('\u{2018}', '\u{2019}'),
    ('\u{ab}', '\u{bb}'),
    ('`', '`'),
];

pub fn strip_quotes(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let mut chars = s.chars();
        let (Some(first), Some(last)) = (chars.next(), chars.next_back()) else {
            return s;
        };
        match QUOTE_PAIRS.iter().find(|(o, c)| *o == first && *c == last) {
            Some(_) => s = s[first.len_utf8()..s.len() - last.len_utf8()].trim(),
            None => return s,
        }
    }
}

fn starts_with_ci(line: &str, prefix: &str) -> bool {
    line.len() >= prefix.len()
        && line.is_char_boundary(prefix.len())
        && line[..prefix.len()].eq_ignore_ascii_case(prefix)
}

/// Pulls the simplified sentence out of a raw model reply.
pub fn extract_output(raw: &str, config: &ExtractionConfig) -> Result<String, CascadeError> {
    let text = raw.trim();
    if text.is_empty() {
        return Err(CascadeError::EmptyResponse);
    }
    if let Some((open, close)) = &config.sentinels {
        if let Some(start) = text.find(open.as_str()) {
            let inner = &text[start + open.len()..];
            if let Some(end) = inner.find(close.as_str()) {
                let span = strip_quotes(&inner[..end]);
                if !span.is_empty() {
                    return Ok(span.to_string());
                }
            }
        }
    }
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let candidate = if config.drop_prefixes.iter().any(|p| starts_with_ci(line, p)) {
            match line.split_once(':') {
                Some((_, after)) => after,
                None => continue,
            }
        } else {
            line
        };
        let cleaned = strip_quotes(candidate);
        if !cleaned.is_empty() {
            return Ok(cleaned.to_string());
        }
    }
    Err(CascadeError::EmptyResponse)
}
