//! Text formats: pattern-count files and flat `key=value` reports.

use std::fmt;

use crate::em::{EmFit, PatternCounts};
use crate::error::{Error, Result};
use crate::linkage::{ComparisonPattern, LinkageParams};

/// Parses lines of the form `b1,...,bk,count`. Blank lines and lines starting
/// with `#` are skipped; repeated patterns accumulate.
pub fn parse_pattern_counts(text: &str, source_name: &str) -> Result<PatternCounts> {
    let mut counts = PatternCounts::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(source_name, i + 1, msg);
        let (bits, count) = line
            .rsplit_once(',')
            .ok_or_else(|| err(format!("expected `b1,...,bk,count`, got {line:?}")))?;
        let pattern: ComparisonPattern = bits.parse().map_err(|e: Error| err(e.to_string()))?;
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| err(format!("count {:?} is not a nonnegative integer", count.trim())))?;
        counts.add(pattern, count).map_err(|e| err(e.to_string()))?;
    }
    Ok(counts)
}

pub fn write_pattern_counts(counts: &PatternCounts) -> String {
    counts.iter().map(|(g, c)| format!("{g},{c}\n")).collect()
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, i + 1, format!("expected key=value, got {line:?}")))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    fn number(&self, key: &str) -> Result<f64> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("report has no `{key}` entry")))?;
        v.parse()
            .map_err(|_| Error::InvalidConfig(format!("report entry {key}={v} is not a number")))
    }

    /// Reads `p_hat`, `m_1..m_k` and `u_1..u_k`.
    pub fn linkage_params(&self) -> Result<LinkageParams> {
        let mut m = Vec::new();
        while self.get(&format!("m_{}", m.len() + 1)).is_some() {
            m.push(self.number(&format!("m_{}", m.len() + 1))?);
        }
        let u = (1..=m.len())
            .map(|v| self.number(&format!("u_{v}")))
            .collect::<Result<Vec<_>>>()?;
        if self.get(&format!("u_{}", m.len() + 1)).is_some() {
            return Err(Error::Shape("report has more u entries than m entries".into()));
        }
        LinkageParams::new(m, u, self.number("p_hat")?)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Fitted parameters and convergence diagnostics of an EM fit.
pub fn fit_report(fit: &EmFit) -> Report {
    let mut r = Report::new();
    r.push("p_hat", fit.params.p);
    for (v, m) in fit.params.m.iter().enumerate() {
        r.push(format!("m_{}", v + 1), m);
    }
    for (v, u) in fit.params.u.iter().enumerate() {
        r.push(format!("u_{}", v + 1), u);
    }
    r.push("iterations", fit.iterations)
        .push("converged", fit.converged)
        .push("final_loglik", fit.final_loglik());
    r
}
