//! `key = value` config files, spliced into argv so explicit flags win.
//!
//! Keys are long flag names without the leading dashes (`strategy`,
//! `noise-sigma`, `noise_sigma` also works). `true`/`false` toggle switches.
//! Blank lines and lines starting with `#` are ignored.

use std::ffi::OsString;
use std::path::Path;

use crate::error::CliError;

pub const SUBCOMMANDS: [&str; 8] = [
    "ingest",
    "generate",
    "select-longtail",
    "experiment",
    "rank",
    "classify",
    "loss-check",
    "serve",
];

/// Parses the text of a config file into `(key, value)` pairs.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') {
            return Err(CliError::validation(format!("{}:{}: bad key {key:?}", path.display(), i + 1)));
        }
        if key == "config" {
            return Err(CliError::validation(format!("{}:{}: config files cannot nest", path.display(), i + 1)));
        }
        let value = value.trim().trim_matches('"').to_string();
        out.push((key, value));
    }
    Ok(out)
}

fn to_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut flags = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => flags.push(format!("--{key}").into()),
            "false" => {}
            _ => flags.push(format!("--{key}={value}").into()),
        }
    }
    flags
}

/// Removes `--config FILE` from `args` and inserts the file's flags directly
/// after the subcommand, ahead of the user's own flags.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| CliError::validation("--config needs a file argument"))?;
            config = Some(path);
        } else if let Some(path) = text.strip_prefix("--config=") {
            config = Some(path.into());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let flags = to_flags(&parse_config(&text, path)?);
    let at = rest
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map(|i| i + 1)
        .unwrap_or(rest.len());
    rest.splice(at..at, flags);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_splices() {
        let entries = parse_config("# c\nstrategy = blc\n\nno_ranking = true\nseed=7\n", Path::new("x")).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(
            to_flags(&entries),
            vec![OsString::from("--strategy=blc"), "--no-ranking".into(), "--seed=7".into()]
        );
        assert!(parse_config("novalue\n", Path::new("x")).is_err());
        assert!(parse_config("config = other\n", Path::new("x")).is_err());
    }
}
