//! Strict parsing of keyed JSON responses (`{"<id>": "<text>" | null, ...}`).
//!
//! Both the aligner and the translation runner ask models for a JSON object
//! with exactly the request's keys in the request's order. Parsing keeps the
//! key order as written and rejects duplicates, which `serde_json::Map`
//! would silently collapse.

use std::fmt;

use serde::de::{Deserialize, Deserializer, MapAccess, Visitor};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("key mismatch: missing {missing:?}, extra {extra:?}")]
    KeyMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("keys out of order: expected {expected:?}, found {found:?}")]
    OrderViolation {
        expected: Vec<String>,
        found: Vec<String>,
    },
}

/// Strips one surrounding Markdown code fence, if present.
pub fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(body) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(body) = body.strip_suffix("```") else {
        return trimmed;
    };
    // drop the info string (`json`, ...) on the opening line
    match body.find('\n') {
        Some(nl) => body[nl + 1..].trim(),
        None => body.trim(),
    }
}

struct OrderedEntries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    entries.push((k, v));
                }
                Ok(OrderedEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

/// Parses a JSON object into its entries in written order.
pub fn parse_ordered_object(text: &str) -> Result<Vec<(String, Value)>, ResponseError> {
    let entries: OrderedEntries =
        serde_json::from_str(text).map_err(|e| ResponseError::Malformed(e.to_string()))?;
    let mut seen = std::collections::HashSet::new();
    for (k, _) in &entries.0 {
        if !seen.insert(k.as_str()) {
            return Err(ResponseError::Malformed(format!("duplicate key {k:?}")));
        }
    }
    Ok(entries.0)
}

/// Validates a keyed response against the expected ids.
///
/// Values must be strings, or null when `allow_null` is set. The result
/// follows `expected` order.
pub fn parse_keyed_response(
    raw: &str,
    expected: &[String],
    allow_null: bool,
) -> Result<Vec<(String, Option<String>)>, ResponseError> {
    let body = strip_code_fence(raw);
    let entries = parse_ordered_object(body)?;

    let found: Vec<String> = entries.iter().map(|(k, _)| k.clone()).collect();
    let expected_set: std::collections::HashSet<&str> = expected.iter().map(String::as_str).collect();
    let found_set: std::collections::HashSet<&str> = found.iter().map(String::as_str).collect();
    let missing: Vec<String> = expected
        .iter()
        .filter(|k| !found_set.contains(k.as_str()))
        .cloned()
        .collect();
    let extra: Vec<String> = found
        .iter()
        .filter(|k| !expected_set.contains(k.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(ResponseError::KeyMismatch { missing, extra });
    }
    if found != expected {
        return Err(ResponseError::OrderViolation {
            expected: expected.to_vec(),
            found,
        });
    }

    entries
        .into_iter()
        .map(|(k, v)| match v {
            Value::String(s) => Ok((k, Some(s))),
            Value::Null if allow_null => Ok((k, None)),
            other => Err(ResponseError::Malformed(format!(
                "value for {k:?} must be {}, got {other}",
                if allow_null { "text or null" } else { "text" }
            ))),
        })
        .collect()
}

/// Rewrites unescaped double quotes that sit inside string values as single
/// quotes. A quote closes a string only when the next non-space character is
/// `:`, `}`, `]`, the end of input, or a `,` followed by another string or
/// the end. Returns the repaired text and the number of substitutions.
pub fn repair_inner_quotes(raw: &str) -> (String, usize) {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len());
    let mut in_string = false;
    let mut fixes = 0;
    let mut i = 0;
    let next_non_ws = |from: usize| {
        let mut j = from;
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        j
    };
    while i < chars.len() {
        let c = chars[i];
        if !in_string {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
            i += 1;
            continue;
        }
        match c {
            '\\' => {
                out.push(c);
                if let Some(&n) = chars.get(i + 1) {
                    out.push(n);
                }
                i += 2;
                continue;
            }
            '"' => {
                let j = next_non_ws(i + 1);
                let closes = match chars.get(j) {
                    None => true,
                    Some(':') | Some('}') | Some(']') => true,
                    Some(',') => {
                        let k = next_non_ws(j + 1);
                        matches!(chars.get(k), None | Some('"'))
                    }
                    _ => false,
                };
                if closes {
                    in_string = false;
                    out.push('"');
                } else {
                    out.push('\'');
                    fixes += 1;
                }
            }
            _ => out.push(c),
        }
        i += 1;
    }
    (out, fixes)
}
