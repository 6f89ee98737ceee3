//! Flat `key = value` config text.
//!
//! One pair per line, `#` starts a comment, blank lines ignored. Later
//! occurrences of a key win, which is how command-line overrides work.

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected 'key = value', got '{raw}'", ln + 1)));
        };
        let k = k.trim();
        let v = v.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", ln + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Collapse duplicate keys, last wins, preserving first-seen order.
pub fn dedup_last(pairs: &[(String, String)]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (k, v) in pairs {
        match out.iter_mut().find(|(ek, _)| ek == k) {
            Some((_, ev)) => *ev = v.clone(),
            None => out.push((k.clone(), v.clone())),
        }
    }
    out
}

pub fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_spacing() {
        let text = "a = 1\n# full comment\n\n b=two words \nc = 3 # trailing\n";
        let pairs = parse_kv(text).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("a".to_string(), "1".to_string()),
                ("b".to_string(), "two words".to_string()),
                ("c".to_string(), "3".to_string()),
            ]
        );
    }

    #[test]
    fn rejects_bad_lines_with_line_numbers() {
        let err = parse_kv("a = 1\nnonsense\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("wrong error {other:?}"),
        }
        assert!(parse_kv("= value\n").is_err());
    }

    #[test]
    fn last_duplicate_wins() {
        let pairs = parse_kv("a = 1\nb = 2\na = 3\n").unwrap();
        let d = dedup_last(&pairs);
        assert_eq!(d, vec![("a".to_string(), "3".to_string()), ("b".to_string(), "2".to_string())]);
    }
}
