//! Effective run configuration: defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pdi_core::io::{parse_config, render_config};

pub const CONFIG_ECHO: &str = "config.txt";

/// Keys every command accepts.
const COMMON: &[(&str, &str)] = &[("seed", "2024"), ("out", "."), ("jobs", "0")];

#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Unknown keys in the file or overrides are rejected.
    pub fn build(
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        overrides: Vec<(String, String)>,
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = COMMON
            .iter()
            .chain(defaults)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut layer = |k: String, v: String, origin: &str| -> Result<()> {
            if !values.contains_key(&k) {
                bail!("unknown {origin} key `{k}`");
            }
            values.insert(k, v);
            Ok(())
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_config(&text)? {
                layer(k, v, "config")?;
            }
        }
        for (k, v) in overrides {
            layer(k, v, "flag")?;
        }
        Ok(Self { values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key `{key}` has no default"))
    }

    pub fn parse<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse::<T>()
            .map_err(|e| anyhow!("config key `{key}`: cannot parse `{raw}`: {e}"))
    }

    /// `None` for the literal `auto`.
    pub fn auto<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if self.str(key) == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| anyhow!("config key `{key}`: cannot parse `{s}`: {e}"))
            })
            .collect()
    }

    pub fn auto_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if self.str(key) == "auto" {
            Ok(None)
        } else {
            self.list(key).map(Some)
        }
    }

    /// Empty or `none` means "not given".
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        match self.str(key) {
            "" | "none" => None,
            p => Some(PathBuf::from(p)),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn jobs(&self) -> Result<usize> {
        self.parse("jobs")
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = PathBuf::from(self.str("out"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// Writes the effective configuration, minus `jobs`, which never affects
    /// results.
    pub fn echo(&self) -> Result<PathBuf> {
        let mut shown = self.values.clone();
        shown.remove("jobs");
        let path = self.out_dir()?.join(CONFIG_ECHO);
        std::fs::write(&path, render_config(&shown))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "alpha = 0.3\nreps = 4 # note\n").unwrap();
        let defaults = [("alpha", "0.5"), ("reps", "20"), ("method", "lo-linear")];
        let c = RunConfig::build(
            &defaults,
            Some(&file),
            vec![("reps".into(), "7".into())],
        )
        .unwrap();
        assert_eq!(c.str("alpha"), "0.3");
        assert_eq!(c.parse::<usize>("reps").unwrap(), 7);
        assert_eq!(c.str("method"), "lo-linear");
        assert_eq!(c.seed().unwrap(), 2024);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r = RunConfig::build(&[("alpha", "0.5")], None, vec![("alhpa".into(), "1".into())]);
        assert!(r.is_err());
    }

    #[test]
    fn lists_and_auto() {
        let c = RunConfig::build(
            &[("grid", "0.1, 1,10"), ("eps", "auto")],
            None,
            vec![],
        )
        .unwrap();
        assert_eq!(c.list::<f64>("grid").unwrap(), vec![0.1, 1.0, 10.0]);
        assert_eq!(c.auto::<f64>("eps").unwrap(), None);
    }
}
