//! Flag and config-file merging. A config file is flat `key = value` TOML;
//! keys are the long flag names, with `-` or `_`. Flags win.

use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    file: toml::Table,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            anyhow!("config {}: {}", path.display(), e.message())
        })?;
        for (k, v) in &file {
            if matches!(v, toml::Value::Table(_) | toml::Value::Array(_)) {
                bail!("config {}: `{k}` must be a plain value", path.display());
            }
        }
        Ok(Self { file })
    }

    fn raw(&self, key: &str) -> Option<String> {
        let alt = key.replace('-', "_");
        let v = self.file.get(key).or_else(|| self.file.get(&alt))?;
        Some(match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    /// The flag value if given, else the config value, else `None`.
    pub fn opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|s| s.parse::<T>().map_err(|e| anyhow!("config `{key}` = `{s}`: {e}")))
            .transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str, flag: bool) -> Result<bool> {
        Ok(flag || self.opt::<bool>(key, None)?.unwrap_or(false))
    }

    pub fn required<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key, flag)?.ok_or_else(|| anyhow!("missing --{key}"))
    }
}

/// Parses a grid: `5`, `0:100` (step 1), `0:100:10`, or `0,10,20`. The
/// result is sorted and deduplicated.
pub fn parse_grid(s: &str) -> Result<Vec<i64>> {
    let num = |t: &str| t.trim().parse::<i64>().map_err(|e| anyhow!("grid `{s}`: {e}"));
    let mut out = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let (lo, hi, step) = match parts.as_slice() {
            [lo, hi] => (num(lo)?, num(hi)?, 1),
            [lo, hi, step] => (num(lo)?, num(hi)?, num(step)?),
            _ => bail!("grid `{s}`: expected lo:hi or lo:hi:step"),
        };
        if step <= 0 || hi < lo {
            bail!("grid `{s}`: need lo <= hi and a positive step");
        }
        (lo..=hi).step_by(step as usize).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("5").unwrap(), vec![5]);
        assert_eq!(parse_grid("0:30:10").unwrap(), vec![0, 10, 20, 30]);
        assert_eq!(parse_grid("0:3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_grid("20,0,10,10").unwrap(), vec![0, 10, 20]);
        assert_eq!(parse_grid("-2:2:2").unwrap(), vec![-2, 0, 2]);
        assert!(parse_grid("3:1").is_err());
        assert!(parse_grid("0:4:0").is_err());
        assert!(parse_grid("a").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let s = Settings { file: "alpha = 7\nzeta = 2.5\nformula = \"psa\"\nsnr_db = 20".parse().unwrap() };
        assert_eq!(s.get("alpha", Some(3usize), 1).unwrap(), 3);
        assert_eq!(s.get("alpha", None::<usize>, 1).unwrap(), 7);
        assert_eq!(s.get("beta", None::<usize>, 1).unwrap(), 1);
        assert_eq!(s.opt::<f64>("zeta", None).unwrap(), Some(2.5));
        assert_eq!(s.opt::<String>("formula", None).unwrap().unwrap(), "psa");
        assert_eq!(s.opt::<f64>("snr-db", None).unwrap(), Some(20.0));
        assert!(s.opt::<usize>("zeta", None).is_err());
        assert!(s.required::<usize>("kappa", None).is_err());
    }
}
