//! `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; keys are flag names without
//! the leading dashes. A bare key is a boolean switch.

use crate::error::{Error, Result};

pub fn parse_config(text: &str) -> Result<Vec<(String, Option<String>)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), Some(v.trim().to_string())),
            None => (line, None),
        };
        let key = key.trim_start_matches('-');
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("bad key in '{raw}'"),
            });
        }
        out.push((key.to_string(), value));
    }
    Ok(out)
}

/// Flags equivalent to a config file, for prepending to command-line args.
pub fn config_to_args(text: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (k, v) in parse_config(text)? {
        args.push(format!("--{k}"));
        if let Some(v) = v {
            args.push(v);
        }
    }
    Ok(args)
}
