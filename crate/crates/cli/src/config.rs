//! Flat `key = value` run configuration.

use std::path::Path;

use speechvec::{Error, Result};

/// One setting with the place it came from, for error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Parse `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_settings(text: &str, origin: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::parse(i + 1, format!("{origin}: expected `key = value`")));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::parse(i + 1, format!("{origin}: empty key or value")));
        }
        out.push(Setting {
            key: key.to_string(),
            value: value.to_string(),
            origin: format!("{origin}:{}", i + 1),
        });
    }
    Ok(out)
}

/// Settings from an optional config file followed by `--set KEY=VALUE`
/// overrides, in application order.
pub fn gather(config: Option<&Path>, overrides: &[String]) -> Result<Vec<Setting>> {
    let mut settings = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            parse_settings(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };
    for o in overrides {
        let Some((key, value)) = o.split_once('=') else {
            return Err(Error::Config(format!("--set expects KEY=VALUE, got `{o}`")));
        };
        settings.push(Setting {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            origin: "--set".into(),
        });
    }
    Ok(settings)
}

/// Feed every setting to `apply`; the first rejection names its origin.
pub fn apply_all<F>(settings: &[Setting], mut apply: F) -> Result<()>
where
    F: FnMut(&str, &str) -> Result<()>,
{
    for s in settings {
        apply(&s.key, &s.value).map_err(|e| Error::Config(format!("{}: {e}", s.origin)))?;
    }
    Ok(())
}

/// Render resolved settings in the config-file syntax so a logged run can be
/// replayed with `--config`.
pub fn render(pairs: &[(&str, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}
