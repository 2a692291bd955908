use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAMS_VERSION: u32 = 1;

/// Similarity coefficients and the duplicate decision cutoff.
///
/// `m` controls how fast weight decays with distance from the top of the
/// stack, `n` how fast it decays with the edit distance of matched runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: f64,
    pub n: f64,
    pub threshold: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            m: 1.0,
            n: 1.0,
            threshold: 0.5,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("m", self.m), ("n", self.n)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// `#version 1` followed by `m=... n=... threshold=...`.
    pub fn to_file_text(&self) -> String {
        format!(
            "#version {PARAMS_VERSION}\nm={} n={} threshold={}\n",
            self.m, self.n, self.threshold
        )
    }

    pub fn from_file_text(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == format!("#version {PARAMS_VERSION}") => {}
            _ => return Err(Error::format(path, 1, format!("expected `#version {PARAMS_VERSION}`"))),
        }
        let (n, line) = lines
            .find(|(_, l)| !l.starts_with('#'))
            .ok_or_else(|| Error::format(path, 2, "missing parameter line"))?;
        let (mut m, mut coef_n, mut threshold) = (None, None, None);
        for field in line.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::format(path, n + 1, format!("expected key=value, got {field:?}")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::format(path, n + 1, format!("bad number in {field:?}")))?;
            match key {
                "m" => m = Some(value),
                "n" => coef_n = Some(value),
                "threshold" => threshold = Some(value),
                other => return Err(Error::format(path, n + 1, format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::format(path, n + 1, format!("missing `{k}`"));
        let params = ModelParams {
            m: m.ok_or_else(|| missing("m"))?,
            n: coef_n.ok_or_else(|| missing("n"))?,
            threshold: threshold.ok_or_else(|| missing("threshold"))?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_text(path, &text)
    }
}
