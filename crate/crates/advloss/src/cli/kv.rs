//! Flat `key=value` run-configuration files.
//!
//! Each command resolves its parameters with the precedence
//! CLI flag > config file > built-in default. Keys a command does not
//! know are errors, not warnings.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

/// Parsed config file: ordered `key=value` pairs.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Load and parse. Blank lines and `#` comments are ignored.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !seen.insert(key.clone()) {
                return Err(CliError::Config(format!(
                    "{}:{}: duplicate key `{key}`",
                    path.display(),
                    lineno + 1
                )));
            }
            entries.push((key, value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    /// Reject keys outside the command's vocabulary.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        for (key, _) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown config key `{key}` (allowed: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Typed lookup; a present-but-unparsable value is an error.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(text) => text.parse::<T>().map(Some).map_err(|e| {
                CliError::Config(format!("config key `{key}`: cannot parse `{text}`: {e}"))
            }),
        }
    }
}

/// Three-layer precedence: CLI flag, then config file, then default.
pub fn resolve<T: FromStr>(
    flag: Option<T>,
    file: &KvFile,
    key: &str,
    default: T,
) -> Result<T, CliError>
where
    T::Err: Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(file.get::<T>(key)?.unwrap_or(default))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn file_with(content: &str) -> (NamedTempFile, KvFile) {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        let kv = KvFile::load(f.path()).unwrap();
        (f, kv)
    }

    #[test]
    fn parses_comments_and_whitespace() {
        let (_f, kv) = file_with("# comment\n\n eps = 0.1 \nsteps=7\n");
        assert_eq!(kv.raw("eps"), Some("0.1"));
        assert_eq!(kv.get::<usize>("steps").unwrap(), Some(7));
        assert_eq!(kv.get::<usize>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(b"novalue\n").unwrap();
        assert!(KvFile::load(f.path()).is_err());
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(b"a=1\na=2\n").unwrap();
        assert!(KvFile::load(f.path()).is_err());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let (_f, kv) = file_with("eps=0.1\nbogus=3\n");
        assert!(kv.check_keys(&["eps", "steps"]).is_err());
        assert!(kv.check_keys(&["eps", "bogus"]).is_ok());
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let (_f, kv) = file_with("eps=0.25\n");
        // flag wins
        assert_eq!(resolve(Some(0.5), &kv, "eps", 0.1).unwrap(), 0.5);
        // file wins over default
        assert_eq!(resolve::<f64>(None, &kv, "eps", 0.1).unwrap(), 0.25);
        // default when absent everywhere
        assert_eq!(resolve::<f64>(None, &kv, "other", 0.1).unwrap(), 0.1);
        // unparsable file value is an error
        let (_f2, kv2) = file_with("eps=abc\n");
        assert!(resolve::<f64>(None, &kv2, "eps", 0.1).is_err());
    }
}
