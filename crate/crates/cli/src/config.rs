//! Config files are applied by rewriting the argument list: every option the
//! command line leaves unset is appended from the file, so flags always win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, CommandFactory};

use crate::args::Cli;
use crate::exit::Failure;

const SKIP: [&str; 4] = ["config", "verbose", "help", "version"];

/// Leaf values of the file. Tables named after a command apply only when
/// that command runs and take precedence over other tables.
fn flatten(
    table: &toml::Table,
    commands: &[String],
    all_commands: &[String],
    specific: bool,
    out: &mut BTreeMap<String, (bool, toml::Value)>,
) -> anyhow::Result<()> {
    for (key, value) in table {
        let name = key.replace('_', "-");
        match value {
            toml::Value::Table(t) => {
                let is_command = all_commands.contains(&name);
                if is_command && !commands.contains(&name) {
                    continue;
                }
                flatten(t, commands, all_commands, specific || is_command, out)?;
            }
            v => match out.get(&name) {
                Some((s, _)) if *s == specific => bail!("configuration key {key:?} is set twice"),
                Some((true, _)) => {}
                _ => {
                    out.insert(name, (specific, v.clone()));
                }
            },
        }
    }
    Ok(())
}

fn render(value: &toml::Value) -> anyhow::Result<String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => {
            let nested = items.iter().any(|v| v.is_array());
            let parts = items.iter().map(render).collect::<anyhow::Result<Vec<_>>>()?;
            parts.join(if nested { ";" } else { "," })
        }
        other => bail!("unsupported configuration value {other}"),
    })
}

fn all_command_names(cmd: &clap::Command, out: &mut Vec<String>) {
    for sub in cmd.get_subcommands() {
        out.push(sub.get_name().to_string());
        all_command_names(sub, out);
    }
}

/// Argument list with values from `--config` filled in.
pub fn layered_args(argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let root = Cli::command();
    // Lenient first pass: required options may still come from the file.
    let matches = root.clone().ignore_errors(true).try_get_matches_from(&argv).map_err(Failure::Clap)?;
    let Some(path) = find_config(&matches) else {
        return Ok(argv);
    };
    inject(&root, &matches, &path, argv).map_err(Failure::Usage)
}

fn find_config(matches: &ArgMatches) -> Option<PathBuf> {
    let mut m = matches;
    let mut found = m.get_one::<PathBuf>("config").cloned();
    while let Some((_, sub)) = m.subcommand() {
        found = sub.get_one::<PathBuf>("config").cloned().or(found);
        m = sub;
    }
    found
}

fn inject(root: &clap::Command, matches: &ArgMatches, path: &Path, mut argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;

    let mut cmd = root;
    let mut m = matches;
    let mut path_names = Vec::new();
    while let Some((name, sub)) = m.subcommand() {
        path_names.push(name.to_string());
        cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
        m = sub;
    }
    let mut all = Vec::new();
    all_command_names(root, &mut all);
    let mut values = BTreeMap::new();
    flatten(&table, &path_names, &all, false, &mut values)?;

    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if SKIP.contains(&id) {
            continue;
        }
        let Some((_, value)) = values.remove(long) else { continue };
        if m.value_source(id) == Some(ValueSource::CommandLine) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => {
                if value.as_bool().with_context(|| format!("configuration key {long:?} must be true or false"))? {
                    argv.push(format!("--{long}").into());
                }
            }
            _ => argv.push(format!("--{long}={}", render(&value)?).into()),
        }
    }
    for key in values.keys() {
        log::warn!("configuration key {key:?} is not used by this command");
    }
    Ok(argv)
}
