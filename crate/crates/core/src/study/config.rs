//! Public study parameters shared by every role.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::relational::MAX_YEARS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Full,
    Multisite,
    AggregateOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Multisite => "multisite",
            Mode::AggregateOnly => "aggregate_only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "multisite" => Ok(Mode::Multisite),
            "aggregate_only" => Ok(Mode::AggregateOnly),
            _ => Err(Error::Config(format!("unknown mode {s:?}; expected full, multisite or aggregate_only"))),
        }
    }
}

pub const DEFAULT_BATCH_COUNT: u32 = 25;
pub const DEFAULT_THRESHOLD: u32 = 11;

const ENDPOINT_KEYS: [&str; 4] = ["alice", "bob", "dealer", "analyst"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudyConfig {
    /// Calendar years, in study order.
    pub years: Vec<u16>,
    pub batch_count: u32,
    pub suppression_threshold: u32,
    pub mode: Mode,
    /// Number of data partners the compute parties wait for.
    pub partners: u32,
    pub seed: Option<u64>,
    /// `host:port` per role name.
    pub endpoints: BTreeMap<String, String>,
}

impl StudyConfig {
    pub fn new(years: Vec<u16>, mode: Mode) -> Result<Self> {
        let c = StudyConfig {
            years,
            batch_count: DEFAULT_BATCH_COUNT,
            suppression_threshold: DEFAULT_THRESHOLD,
            mode,
            partners: 1,
            seed: None,
            endpoints: BTreeMap::new(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.is_empty() || self.years.len() > MAX_YEARS {
            return Err(Error::Config(format!("years must list 1 to {MAX_YEARS} calendar years")));
        }
        let mut sorted = self.years.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.years.len() {
            return Err(Error::Config("years must not repeat".into()));
        }
        if self.batch_count == 0 {
            return Err(Error::Config("batch_count must be at least 1".into()));
        }
        if self.partners == 0 {
            return Err(Error::Config("partners must be at least 1".into()));
        }
        if self.suppression_threshold == 0 {
            return Err(Error::Config("suppression_threshold must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses `key=value` lines. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut years = None;
        let mut c = StudyConfig {
            years: Vec::new(),
            batch_count: DEFAULT_BATCH_COUNT,
            suppression_threshold: DEFAULT_THRESHOLD,
            mode: Mode::Full,
            partners: 1,
            seed: None,
            endpoints: BTreeMap::new(),
        };
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: {k} given twice", n + 1)));
            }
            let bad = |what: &str| Error::Config(format!("line {}: {k} must be {what}", n + 1));
            match k {
                "years" => {
                    years = Some(
                        v.split(',')
                            .map(|y| y.trim().parse::<u16>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad("a comma-separated list of years"))?,
                    )
                }
                "batch_count" => c.batch_count = v.parse().map_err(|_| bad("a positive integer"))?,
                "suppression_threshold" => c.suppression_threshold = v.parse().map_err(|_| bad("a positive integer"))?,
                "partners" => c.partners = v.parse().map_err(|_| bad("a positive integer"))?,
                "mode" => c.mode = v.parse()?,
                "seed" => c.seed = Some(v.parse().map_err(|_| bad("an unsigned integer"))?),
                e if ENDPOINT_KEYS.contains(&e) => {
                    if !v.contains(':') {
                        return Err(bad("host:port"));
                    }
                    c.endpoints.insert(e.to_string(), v.to_string());
                }
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        c.years = years.ok_or_else(|| Error::Config("years is required".into()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        StudyConfig::parse(&text)
    }

    /// Every key with its effective value, sorted by key, one `key=value` per LF-terminated line.
    pub fn canonical(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("years", self.years.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(","));
        kv.insert("batch_count", self.batch_count.to_string());
        kv.insert("suppression_threshold", self.suppression_threshold.to_string());
        kv.insert("mode", self.mode.to_string());
        kv.insert("partners", self.partners.to_string());
        if let Some(s) = self.seed {
            kv.insert("seed", s.to_string());
        }
        for (k, v) in &self.endpoints {
            kv.insert(k, v.clone());
        }
        kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of [`StudyConfig::canonical`].
    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    pub fn endpoint(&self, role: &str) -> Option<&str> {
        self.endpoints.get(role).map(|s| s.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_canonicalizes() {
        let c = StudyConfig::parse("# study\nyears = 2018,2019\nmode=multisite\nbob=127.0.0.1:9002\n\nbatch_count=5\n").unwrap();
        assert_eq!(c.years, vec![2018, 2019]);
        assert_eq!(c.mode, Mode::Multisite);
        assert_eq!(c.batch_count, 5);
        assert_eq!(c.suppression_threshold, 11);
        assert_eq!(
            c.canonical(),
            "batch_count=5\nbob=127.0.0.1:9002\nmode=multisite\npartners=1\nsuppression_threshold=11\nyears=2018,2019\n"
        );
        assert_eq!(StudyConfig::parse(&c.canonical()).unwrap(), c);
    }

    #[test]
    fn defaults_hash_like_explicit_values() {
        let a = StudyConfig::parse("years=2018").unwrap();
        let b = StudyConfig::parse("suppression_threshold=11\nyears=2018\nbatch_count=25\nmode=full").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = StudyConfig::parse("years=2018\nbatch_count=24").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "",
            "years=",
            "years=2018\nbatch_count=0",
            "years=2018,2019,2020,2021",
            "years=2018,2018",
            "years=2018\nmode=fast",
            "years=2018\ncolour=blue",
            "years=2018\nyears=2019",
            "years=2018\nalice=nowhere",
            "just text",
        ] {
            assert!(matches!(StudyConfig::parse(text), Err(Error::Config(_))), "{text:?}");
        }
    }
}
