//! Flat `key=value` run configuration files.
//!
//! Values from a file are spliced into the argument list ahead of the
//! user's own flags, so anything given on the command line wins. Every
//! command writes the fully resolved settings back out as `config.resolved`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

/// Arguments that never appear in a config file.
const NOT_CONFIGURABLE: &[&str] = &["config", "help", "version"];

/// Positional arguments are recorded under the name of their flag form.
pub const POSITIONAL_SUFFIX: &str = "_pos";

#[derive(Debug)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key=value, found {line:?}", i + 1);
        };
        out.push(Entry {
            key: key.trim().replace('_', "-"),
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Turns config entries into flags understood by `sub`, skipping keys the
/// user already set on the command line. Unknown keys are an error.
pub fn to_args(sub: &Command, entries: &[Entry], path: &Path, given: &ArgMatches) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for e in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()) && !NOT_CONFIGURABLE.contains(&e.key.as_str()));
        let Some(arg) = arg else {
            bail!(
                "{}:{}: unknown key {:?} for command {}",
                path.display(),
                e.line,
                e.key,
                sub.get_name()
            );
        };
        let on_command_line = given
            .try_get_raw(arg.get_id().as_str())
            .is_ok_and(|v| v.is_some())
            && given.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine);
        if on_command_line {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match e.value.as_str() {
                "true" => args.push(format!("--{}", e.key)),
                "false" => {}
                other => bail!("{}:{}: {:?} is not true or false", path.display(), e.line, other),
            },
            _ => {
                args.push(format!("--{}", e.key));
                args.push(e.value.clone());
            }
        }
    }
    Ok(args)
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

/// Every setting of `sub` as resolved in `matches`, one `key=value` per line
/// in declaration order. Multi-valued settings repeat their key.
pub fn render_resolved(sub: &Command, matches: &ArgMatches) -> String {
    let mut out = String::new();
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        if NOT_CONFIGURABLE.contains(&id) {
            continue;
        }
        let key = match arg.get_long() {
            Some(long) => long.to_string(),
            None => id.trim_end_matches(POSITIONAL_SUFFIX).replace('_', "-"),
        };
        for v in matches.get_raw(id).into_iter().flatten() {
            let _ = writeln!(out, "{key}={}", v.to_string_lossy());
        }
    }
    out
}
