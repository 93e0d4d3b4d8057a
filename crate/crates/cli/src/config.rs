//! `key = value` config files, merged into argv ahead of the user's flags so
//! that command-line values win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, CommandFactory};

use crate::args::Cli;

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.push((key, value));
    }
    Ok(out)
}

fn config_path(raw: &[OsString]) -> Option<OsString> {
    let mut it = raw.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

/// Returns argv with config entries spliced in right after the subcommand.
pub fn expand_args(raw: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&raw) else {
        return Ok(raw);
    };
    let cmd = Cli::command();
    let Some((pos, sub)) = raw
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a.to_str()?).map(|s| (i, s)))
    else {
        return Ok(raw);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in parse_config(&text)? {
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help")
            .ok_or_else(|| anyhow!("unknown config key {key:?} for `{}`", sub.get_name()))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            let on: bool = value
                .parse()
                .map_err(|_| anyhow!("config key {key:?} expects true or false, got {value:?}"))?;
            if on {
                injected.push(format!("--{key}").into());
            }
        } else {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        }
    }
    let mut out = raw[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&raw[pos + 1..]);
    Ok(out)
}
