use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

/// Expands `--config FILE` into `--key value` flags placed right after the
/// subcommand, so flags given explicitly on the command line win.
///
/// The file holds one `key = value` per line; `#` starts a comment. A value
/// of `true` becomes a bare switch and `false` drops the key.
pub fn expand_config_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config=")) else {
        return Ok(args);
    };
    let mut args = args;
    let flag = args.remove(pos).to_string_lossy().into_owned();
    let path = match flag.strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => {
            if pos >= args.len() {
                bail!("--config needs a file argument");
            }
            args.remove(pos).to_string_lossy().into_owned()
        }
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config file {path}"))?;
    let injected = parse_key_values(&text).with_context(|| format!("in config file {path}"))?;
    // args[0] is the program, args[1] the subcommand
    let at = 2.min(args.len());
    args.splice(at..at, injected.into_iter().map(OsString::from));
    Ok(args)
}

pub fn parse_key_values(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got {raw:?}", i + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_become_flags() {
        let flags = parse_key_values("# training\nlr = 0.001\nbatch_size=32\nforce = true\nquiet=false\n").unwrap();
        assert_eq!(flags, vec!["--lr", "0.001", "--batch-size", "32", "--force"]);
        assert!(parse_key_values("nonsense").is_err());
    }

    #[test]
    fn injected_after_subcommand() {
        let dir = std::env::temp_dir().join(format!("weakloc-config-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let file = dir.join("run.cfg");
        fs::write(&file, "epochs=2\n").unwrap();
        let args: Vec<OsString> = ["weakloc", "train", "--config", file.to_str().unwrap(), "--epochs", "3"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand_config_args(args).unwrap();
        let out: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(out, vec!["weakloc", "train", "--epochs", "2", "--epochs", "3"]);
        fs::remove_dir_all(dir).unwrap();
    }
}
