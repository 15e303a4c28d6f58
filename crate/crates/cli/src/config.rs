use std::path::Path;

use crate::CliError;

/// Appends flags from a TOML config file to `args` for every key the command
/// line does not already set.
///
/// Top-level keys apply to every subcommand; a table named after the
/// subcommand adds keys for that subcommand only. Keys use the flag
/// spelling, with `_` accepted for `-`.
pub fn merge_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args
            .get(pos + 1)
            .cloned()
            .ok_or_else(|| CliError::Input("--config needs a file path".into()))?,
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::Input(format!("{path}: {e}")))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Input(format!("{path}: {e}")))?;

    let subcommand = subcommand_name(&args);
    let mut entries: Vec<(String, toml::Value)> = Vec::new();
    for (k, v) in &table {
        if !v.is_table() {
            entries.push((k.clone(), v.clone()));
        }
    }
    if let Some(toml::Value::Table(sub)) = subcommand.as_deref().and_then(|s| table.get(s)) {
        for (k, v) in sub {
            entries.retain(|(e, _)| e != k);
            entries.push((k.clone(), v.clone()));
        }
    }

    let mut out = args.clone();
    for (key, value) in entries {
        let flag = format!("--{}", key.replace('_', "-"));
        let present = args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if present || flag == "--config" {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => out.extend([flag, s]),
            toml::Value::Integer(i) => out.extend([flag, i.to_string()]),
            toml::Value::Float(f) => out.extend([flag, f.to_string()]),
            other => {
                return Err(CliError::Input(format!(
                    "{path}: unsupported value for '{key}': {other}"
                )))
            }
        }
    }
    Ok(out)
}

fn subcommand_name(args: &[String]) -> Option<String> {
    let mut skip = false;
    for a in args.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--config" {
            skip = true;
            continue;
        }
        if !a.starts_with('-') {
            return Some(a.clone());
        }
    }
    None
}
