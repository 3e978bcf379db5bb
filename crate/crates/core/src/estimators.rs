//! Population-size estimators for two overlapping lists and the accuracy
//! metrics used to compare them.

use std::fmt;

use crate::error::{Error, Result};
use crate::linkage::{joint_prob, enumerate_patterns, ComparisonPattern};

/// Marginal and overlap counts of two lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualCounts {
    /// Records on the first list, `n1+`.
    pub n1p: u64,
    /// Records on the second list, `n+1`.
    pub np1: u64,
    /// Records on both lists, `n11`.
    pub n11: u64,
}

impl DualCounts {
    pub fn new(n1p: u64, np1: u64, n11: u64) -> Result<Self> {
        if n11 > n1p.min(np1) {
            return Err(Error::InconsistentInput(format!(
                "overlap {n11} exceeds a list size ({n1p}, {np1})"
            )));
        }
        Ok(Self { n1p, np1, n11 })
    }

    /// Number of cross-list record pairs, `|Ω| = n1+ · n+1`.
    pub fn omega(&self) -> u64 {
        self.n1p * self.np1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Dse,
    DseFloor,
    DseEps,
    Lfdse,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Dse => "DSE",
            EstimatorKind::DseFloor => "DSE_FLOOR",
            EstimatorKind::DseEps => "DSE_EPS",
            EstimatorKind::Lfdse => "LFDSE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationEstimate {
    pub value: f64,
    pub kind: EstimatorKind,
}

impl PopulationEstimate {
    fn checked(value: f64, kind: EstimatorKind) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self { value, kind })
        } else {
            Err(Error::UndefinedEstimate(format!("{kind} evaluates to {value}")))
        }
    }
}

/// Sign of the net linkage error added to the observed overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Net false links inflate the overlap.
    Plus,
    /// Net missed links deflate the overlap.
    Minus,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }
}

/// Dual system estimate `n1+ n+1 / n11`.
pub fn dse(counts: &DualCounts) -> Result<PopulationEstimate> {
    if counts.n11 == 0 {
        return Err(Error::UndefinedEstimate("no records are on both lists".into()));
    }
    PopulationEstimate::checked(
        counts.n1p as f64 * counts.np1 as f64 / counts.n11 as f64,
        EstimatorKind::Dse,
    )
}

/// Integer part of the dual system estimate.
pub fn dse_floor(counts: &DualCounts) -> Result<PopulationEstimate> {
    if counts.n11 == 0 {
        return Err(Error::UndefinedEstimate("no records are on both lists".into()));
    }
    // Exact integer division avoids float rounding at integral ratios.
    let value = (counts.n1p as u128 * counts.np1 as u128 / counts.n11 as u128) as f64;
    PopulationEstimate::checked(value, EstimatorKind::DseFloor)
}

/// Dual system estimate with the overlap perturbed by a net linkage error.
pub fn dse_with_error(counts: &DualCounts, eps: f64, direction: Direction) -> Result<PopulationEstimate> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("net error eps={eps} must be finite and nonnegative")));
    }
    let denominator = counts.n11 as f64 + direction.sign() * eps;
    if denominator <= 0.0 {
        return Err(Error::UndefinedEstimate(format!(
            "perturbed overlap {denominator} is not positive"
        )));
    }
    PopulationEstimate::checked(
        counts.n1p as f64 * counts.np1 as f64 / denominator,
        EstimatorKind::DseEps,
    )
}

/// Linkage-free estimate `1 / p̂` from the fitted match proportion.
pub fn lfdse(p_hat: f64) -> Result<PopulationEstimate> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::UndefinedEstimate(format!(
            "match proportion {p_hat} outside (0, 1)"
        )));
    }
    PopulationEstimate::checked(1.0 / p_hat, EstimatorKind::Lfdse)
}

/// Expected number of matched pairs among `omega` pairs, `p̂ |Ω|`.
pub fn estimated_matches(p_hat: f64, omega: u64) -> Result<f64> {
    if omega == 0 {
        return Err(Error::Bounds("number of record pairs must be at least 1".into()));
    }
    Ok(p_hat * omega as f64)
}

/// Expected matched pairs per comparison pattern, `p̂ m̂_γ |Ω|`, in
/// lexicographic pattern order. Sums to [`estimated_matches`].
pub fn estimated_matches_by_pattern(
    p_hat: f64,
    m_hat: &[f64],
    omega: u64,
) -> Result<Vec<(ComparisonPattern, f64)>> {
    let total = estimated_matches(p_hat, omega)?;
    enumerate_patterns(m_hat.len())?
        .into_iter()
        .map(|g| Ok((g, total * joint_prob(m_hat, &g)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetError {
    /// Net linkage error in matched records.
    pub eps: f64,
    /// `eps` as a percentage of the expected overlap `N p1 p2`.
    pub eps_pct: f64,
}

/// Net linkage error that would make the perturbed DSE as inaccurate (in
/// RRMSE) as the linkage-free estimator, assuming the perturbation leaves the
/// DSE variance unchanged and the lists are included independently.
///
/// `rrmse_lfdse` is a fraction (not a percentage); `var_dse` is in squared
/// population units.
pub fn net_error_epsilon(rrmse_lfdse: f64, var_dse: f64, n: u64, p1: f64, p2: f64) -> Result<NetError> {
    if n == 0 {
        return Err(Error::Bounds("population size must be positive".into()));
    }
    crate::linkage::check_probabilities("coverage", &[p1, p2])?;
    let n = n as f64;
    let excess = (rrmse_lfdse * n).powi(2) - var_dse;
    if !(excess >= 0.0) {
        return Err(Error::Domain(format!(
            "mean squared error of the linkage-free estimator is below the DSE variance \
             ({excess:.6} < 0); no net error matches it"
        )));
    }
    let expected_pairs = n * n * p1 * p2;
    let expected_matches = n * p1 * p2;
    let eps = (expected_pairs / (n + excess.sqrt()) - expected_matches).abs();
    Ok(NetError {
        eps,
        eps_pct: eps / expected_matches * 100.0,
    })
}

/// Relative bias, relative standard error and relative root mean square
/// error of replicate estimates around the true `n`, as fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rb: f64,
    pub rse: f64,
    pub rrmse: f64,
    pub mean: f64,
    /// Population variance (divisor `len`) of the estimates.
    pub var: f64,
}

pub fn metrics(estimates: &[f64], n: u64) -> Result<Metrics> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("no estimates to summarise".into()));
    }
    if let Some(bad) = estimates.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite estimate {bad}")));
    }
    if n == 0 {
        return Err(Error::Bounds("population size must be positive".into()));
    }
    let len = estimates.len() as f64;
    let n = n as f64;
    let mean = estimates.iter().sum::<f64>() / len;
    let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len;
    let rb = (mean - n) / n;
    let rse = var.sqrt() / n;
    Ok(Metrics {
        rb,
        rse,
        rrmse: (rse * rse + rb * rb).sqrt(),
        mean,
        var,
    })
}
