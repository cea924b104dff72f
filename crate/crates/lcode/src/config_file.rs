//! `key = value` config files consulted when a flag is omitted.
//!
//! One assignment per line, `#` starts a comment, blank lines ignored.
//! Keys are the long flag names; `-` and `_` are interchangeable.  Flags
//! always win over the file, the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct ConfigFile {
    map: BTreeMap<String, String>,
    source: String,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn empty() -> ConfigFile {
        ConfigFile::default()
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                );
            };
            let key = normalize(key);
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("{}:{}: duplicate key `{key}`", path.display(), lineno + 1);
            }
        }
        Ok(ConfigFile { map, source: path.display().to_string() })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(&normalize(key)).map(String::as_str)
    }

    fn parse<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(text) => text.parse().map(Some).map_err(|e| {
                anyhow::anyhow!("{}: key `{key}` = `{text}`: {e}", self.source)
            }),
        }
    }

    /// Flag value if given, else the file's, else none.
    pub fn want<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.parse(key),
        }
    }

    /// Flag value if given, else the file's, else the default.
    pub fn or_default<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.want(flag, key)?.unwrap_or(default))
    }

    /// Flag value if given, else the file's, else an error naming the key.
    pub fn need<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.want(flag, key)?
            .ok_or_else(|| anyhow::anyhow!("missing required option --{key} (or `{key}` in a config file)"))
    }

    /// A flag that can only be switched on: true wins, otherwise the file
    /// decides, otherwise false.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.parse::<bool>(key)?.unwrap_or(false))
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> ConfigFile {
        let dir = std::env::temp_dir().join("lcode-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("{}-{:p}.conf", std::process::id(), text));
        std::fs::write(&path, text).unwrap();
        let cfg = ConfigFile::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        cfg
    }

    #[test]
    fn parses_assignments_comments_and_blanks() {
        let cfg = file("# a comment\n\ntrials = 12\ncond-len=3  # trailing\n");
        assert_eq!(cfg.parse::<usize>("trials").unwrap(), Some(12));
        // Dash and underscore spellings are the same key.
        assert_eq!(cfg.parse::<usize>("cond_len").unwrap(), Some(3));
        assert_eq!(cfg.parse::<usize>("missing").unwrap(), None);
    }

    #[test]
    fn precedence_is_flag_file_default() {
        let cfg = file("epochs = 7\n");
        assert_eq!(cfg.or_default(Some(9usize), "epochs", 1).unwrap(), 9);
        assert_eq!(cfg.or_default(None::<usize>, "epochs", 1).unwrap(), 7);
        assert_eq!(cfg.or_default(None::<usize>, "other", 1).unwrap(), 1);
    }

    #[test]
    fn need_names_the_missing_key() {
        let cfg = ConfigFile::empty();
        let err = cfg.need::<String>(None, "out").unwrap_err().to_string();
        assert!(err.contains("--out"), "{err}");
    }

    #[test]
    fn switch_only_turns_on() {
        let cfg = file("ablate_graph = true\n");
        assert!(cfg.switch(false, "ablate_graph").unwrap());
        assert!(cfg.switch(true, "other").unwrap());
        assert!(!ConfigFile::empty().switch(false, "ablate_graph").unwrap());
    }

    #[test]
    fn bad_lines_and_values_are_rejected() {
        let dir = std::env::temp_dir().join("lcode-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("{}-bad.conf", std::process::id()));

        std::fs::write(&path, "no equals sign\n").unwrap();
        assert!(ConfigFile::load(&path).is_err());

        std::fs::write(&path, "a = 1\na = 2\n").unwrap();
        assert!(ConfigFile::load(&path).is_err());

        std::fs::write(&path, "trials = soon\n").unwrap();
        let cfg = ConfigFile::load(&path).unwrap();
        let err = cfg.parse::<usize>("trials").unwrap_err().to_string();
        assert!(err.contains("trials"), "{err}");
        std::fs::remove_file(&path).ok();
    }
}
