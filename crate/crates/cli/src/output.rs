//! Artifact files of a run and their hash check.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value as Json;

use crate::config::{config_hash, parse_table};
use crate::ExitError;

pub const RESULTS: &str = "results.csv";
pub const REPORT: &str = "report.json";
pub const META: &str = "meta.json";
pub const CONFIG_ECHO: &str = "config.toml";
pub const RESOLVED: &str = "resolved.toml";

const HASH_PREFIX: &str = "# config_hash=";

/// Floats with 17 significant digits, so values round-trip exactly.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Results table with the config hash on its first line.
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(hash: &str, header: &[String]) -> Self {
        let mut text = format!("{HASH_PREFIX}{hash}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text, width: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, ExitError> {
        fs::create_dir_all(dir).map_err(|e| ExitError::io(&format!("cannot create {}", dir.display()), e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn write(&self, name: &str, text: &str) -> Result<(), ExitError> {
        let p = self.dir.join(name);
        fs::write(&p, text).map_err(|e| ExitError::io(&format!("cannot write {}", p.display()), e))
    }

    /// Removes artifacts of an earlier run in the same directory.
    pub fn clear(&self) -> Result<(), ExitError> {
        for name in [RESULTS, REPORT, META] {
            let p = self.dir.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| ExitError::io(&format!("cannot remove {}", p.display()), e))?;
            }
        }
        Ok(())
    }

    pub fn exists(&self, name: &str) -> bool {
        self.dir.join(name).exists()
    }

    pub fn write_json(&self, name: &str, value: &Json) -> Result<(), ExitError> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialise");
        text.push('\n');
        self.write(name, &text)
    }
}

fn read(dir: &Path, name: &str) -> Result<String, ExitError> {
    let p = dir.join(name);
    fs::read_to_string(&p).map_err(|e| ExitError::validation(format!("cannot read {}: {e}", p.display())))
}

fn json_hash(dir: &Path, name: &str) -> Result<Option<String>, ExitError> {
    let v: Json = serde_json::from_str(&read(dir, name)?).map_err(|e| ExitError::validation(format!("{name}: {e}")))?;
    Ok(v.get("config_hash").and_then(Json::as_str).map(str::to_string))
}

/// Recomputes the hash of `resolved.toml` and compares it with the one
/// recorded in every artifact.
pub fn check_dir(dir: &Path) -> Result<(), ExitError> {
    let resolved = parse_table(&read(dir, RESOLVED)?, RESOLVED)?;
    let expected = config_hash(&resolved);
    let mut found: Vec<(&str, Option<String>)> = vec![(META, json_hash(dir, META)?)];
    if dir.join(REPORT).exists() {
        found.push((REPORT, json_hash(dir, REPORT)?));
    }
    if dir.join(RESULTS).exists() {
        let text = read(dir, RESULTS)?;
        let h = text.lines().next().and_then(|l| l.strip_prefix(HASH_PREFIX)).map(str::to_string);
        found.push((RESULTS, h));
    }
    let mut bad = String::new();
    for (name, h) in &found {
        match h {
            Some(h) if *h == expected => {}
            Some(h) => {
                let _ = write!(bad, " {name} ({h})");
            }
            None => {
                let _ = write!(bad, " {name} (no hash)");
            }
        }
    }
    if bad.is_empty() {
        println!("config hash {expected} matches {} artifacts", found.len());
        Ok(())
    } else {
        Err(ExitError::validation(format!("config hash {expected} does not match:{bad}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
        assert_eq!(num(f64::NAN), "NaN");
    }
}
