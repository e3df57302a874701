use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use crate::Common;

/// Resolved shared flags plus the optional key=value defaults file.
pub struct Settings {
    pub out: PathBuf,
    pub seed: u64,
    file: BTreeMap<String, String>,
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn load(common: &Common) -> Result<Settings> {
        let file = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_key_values(&text)?
            }
            None => BTreeMap::new(),
        };
        let mut s = Settings { out: common.out.clone(), seed: 0, file };
        s.seed = s.get(common.seed, "seed", 0)?;
        Ok(s)
    }

    /// Flag value, else config-file value, else `default`.
    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw.parse().map_err(|e| anyhow!("config key `{key}`: {e}")),
            None => Ok(default),
        }
    }

    pub fn get_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file.get(key).map(|raw| raw.parse().map_err(|e| anyhow!("config key `{key}`: {e}"))).transpose()
    }

    pub fn out_path(&self, name: impl AsRef<Path>) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }
}

pub fn parse_list<T: FromStr>(raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| anyhow!("`{s}`: {e}")))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        bail!("empty list `{raw}`");
    }
    Ok(items)
}
