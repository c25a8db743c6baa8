//! `key = value` text blocks used for config files and checkpoint metadata.

use std::fmt::Display;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Parse `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys and malformed lines are errors.
pub fn parse(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::config(format!("duplicate key `{k}` on line {}", i + 1)));
        }
    }
    Ok(out)
}

pub fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::config(format!("invalid value `{raw}` for `{key}`: {e}")))
}

pub fn boolean(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{raw}` for `{key}`"))),
    }
}

/// Render pairs as `key = value` lines.
pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
