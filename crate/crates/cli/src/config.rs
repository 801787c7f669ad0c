//! Layering of command-line flags over a TOML config file over defaults.
//!
//! Top-level keys of the file set global flags (`seed`, `out`); a table
//! named after the subcommand sets that subcommand's flags. Keys are flag
//! names with `-` or `_`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Flag,
    File,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::File => "file",
            Source::Default => "default",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Setting {
    pub value: String,
    pub source: Source,
}

/// Effective settings of one invocation and where each came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CliConfig {
    pub subcommand: String,
    pub config_file: Option<PathBuf>,
    pub settings: BTreeMap<String, Setting>,
}

impl CliConfig {
    pub fn get(&self, name: &str) -> Option<&Setting> {
        self.settings.get(name)
    }

    pub fn render(&self) -> String {
        let mut out = format!("effective settings for `{}`:\n", self.subcommand);
        for (name, s) in &self.settings {
            out.push_str(&format!("  {name} = {} ({})\n", s.value, s.source));
        }
        out
    }
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, CliError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(CliError::Usage(format!("config key {key:?}: unsupported value {other}"))),
    }
}

/// Flag arguments equivalent to one config entry.
fn config_args(cmd: &Command, key: &str, value: &toml::Value) -> Result<Vec<String>, CliError> {
    let id = key.replace('-', "_");
    let arg = cmd
        .get_arguments()
        .find(|a| a.get_id().as_str() == id && a.get_long().is_some())
        .ok_or_else(|| CliError::Usage(format!("config key {key:?} is not a flag of `{}`", cmd.get_name())))?;
    let long = format!("--{}", arg.get_long().expect("checked"));
    if matches!(arg.get_action(), ArgAction::SetTrue) {
        return match value {
            toml::Value::Boolean(true) => Ok(vec![long]),
            toml::Value::Boolean(false) => Ok(Vec::new()),
            _ => Err(CliError::Usage(format!("config key {key:?} must be true or false"))),
        };
    }
    let mut out = vec![long];
    match value {
        toml::Value::Array(items) => {
            let items = items.iter().map(|v| scalar(key, v)).collect::<Result<Vec<_>, _>>()?;
            match arg.get_value_delimiter() {
                Some(d) => out.push(items.join(&d.to_string())),
                None => out.extend(items),
            }
        }
        v => out.push(scalar(key, v)?),
    }
    Ok(out)
}

fn raw_value(m: &ArgMatches, id: &str) -> Option<String> {
    let raw = m.get_raw(id)?;
    Some(raw.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","))
}

/// Parses `argv` against `cmd`, filling every flag not given on the command
/// line from the `--config` file when it sets one.
pub fn layered_matches(mut cmd: Command, argv: &[OsString]) -> Result<(ArgMatches, CliConfig), CliError> {
    cmd.build();
    let first = cmd.clone().try_get_matches_from(argv)?;
    let Some((sub, sub_first)) = first.subcommand() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let sub_cmd = cmd.find_subcommand(sub).expect("parsed subcommand exists").clone();
    let config_file = sub_first.get_one::<PathBuf>("config").cloned();

    let mut from_file = BTreeSet::new();
    let matches = match &config_file {
        None => first.clone(),
        Some(path) => {
            let table = read_table(path)?;
            let mut extra = Vec::new();
            for (key, value) in &table {
                let section = match value {
                    toml::Value::Table(t) if key == sub => t,
                    toml::Value::Table(_) => continue,
                    _ => {
                        extra.push((key.clone(), value.clone()));
                        continue;
                    }
                };
                extra.extend(section.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            let mut inserted = Vec::new();
            for (key, value) in extra {
                let id = key.replace('-', "_");
                let explicit = sub_cmd.get_arguments().any(|a| a.get_id().as_str() == id)
                    && sub_first.value_source(&id) == Some(ValueSource::CommandLine);
                if explicit {
                    continue;
                }
                inserted.extend(config_args(&sub_cmd, &key, &value)?);
                from_file.insert(id);
            }
            let at = argv
                .iter()
                .skip(1)
                .position(|a| a.to_str() == Some(sub))
                .map_or(argv.len(), |i| i + 2);
            let mut argv2 = argv[..at].to_vec();
            argv2.extend(inserted.into_iter().map(OsString::from));
            argv2.extend_from_slice(&argv[at..]);
            cmd.clone().try_get_matches_from(argv2)?
        }
    };

    let sub_final = matches.subcommand_matches(sub).expect("same subcommand");
    let mut settings = BTreeMap::new();
    for arg in sub_cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(id, "help" | "version" | "config") {
            continue;
        }
        let source = match sub_final.value_source(id) {
            Some(ValueSource::CommandLine) if from_file.contains(id) => Source::File,
            Some(ValueSource::CommandLine) => Source::Flag,
            Some(ValueSource::DefaultValue) => Source::Default,
            _ => continue,
        };
        if let Some(value) = raw_value(sub_final, id) {
            settings.insert(id.to_string(), Setting { value, source });
        } else if matches!(arg.get_action(), ArgAction::SetTrue) {
            let value = sub_final.get_flag(id).to_string();
            settings.insert(id.to_string(), Setting { value, source });
        }
    }
    Ok((
        matches.clone(),
        CliConfig {
            subcommand: sub.to_string(),
            config_file,
            settings,
        },
    ))
}
