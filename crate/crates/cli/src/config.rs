//! Flat `key = value` config files, spliced into the argument list so that
//! command-line flags (which come later) override them.

use std::fs;
use std::path::Path;

pub const SUBCOMMANDS: [&str; 4] = ["synth", "partition", "metrics", "project"];

/// Flags from `text` that apply to `subcommand`: keys before any section
/// header, plus keys under `[subcommand]`. `key = true` becomes a bare flag,
/// `key = false` is dropped.
pub fn config_args(text: &str, subcommand: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut section: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!(
                "config line {}: expected `key = value`, got `{line}`",
                lineno + 1
            ));
        };
        if section.as_deref().is_some_and(|s| s != subcommand) {
            continue;
        }
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() || key == "config" {
            return Err(format!("config line {}: invalid key", lineno + 1));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => {
                out.push(format!("--{key}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Rewrites `argv` with config-file flags inserted right after the
/// subcommand name. Returns `argv` unchanged when no `--config` is given.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--config" {
            config = argv.get(i + 1).cloned();
            i += 1;
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else if sub.is_none() && SUBCOMMANDS.contains(&a.as_str()) {
            sub = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(pos)) = (config, sub) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {path}: {e}"))?;
    let extra = config_args(&text, &argv[pos])?;
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_booleans() {
        let text = "# shared\nseed = 3\n\n[partition]\nnum_subsets = 10\nallow-destructive = true\nnormalize_embeddings = false\n[metrics]\nsamples = 5\n";
        assert_eq!(
            config_args(text, "partition").unwrap(),
            ["--seed", "3", "--num-subsets", "10", "--allow-destructive"]
        );
        assert_eq!(
            config_args(text, "metrics").unwrap(),
            ["--seed", "3", "--samples", "5"]
        );
        assert!(config_args("oops", "synth").is_err());
    }

    #[test]
    fn flags_follow_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        fs::write(&path, "seed = 1\n").unwrap();
        let argv: Vec<String> = [
            "fedsplit",
            "--config",
            path.to_str().unwrap(),
            "synth",
            "--seed",
            "2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let out = expand(argv).unwrap();
        let tail: Vec<&str> = out[3..].iter().map(String::as_str).collect();
        assert_eq!(tail, ["synth", "--seed", "1", "--seed", "2"]);
    }
}
