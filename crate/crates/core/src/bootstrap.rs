//! Parametric bootstrap for the linkage-free estimator and the coverage
//! experiment that checks its confidence intervals.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::em::{fit_em, EmConfig, EmFit, PatternCounts};
use crate::error::{Error, Result};
use crate::estimators::{self, DualCounts};
use crate::sampling::{mix_seed, multinomial, stream_rng, Purpose};
use crate::simulation::{generate_capture, generate_pattern_sets, generate_patterns, CaptureDraw, Scenario};

pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// How the confidence interval is built from the replicates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CiMethod {
    /// `N̂_L ± z·se` with the bootstrap standard error.
    #[default]
    Normal,
    /// Empirical quantiles of the replicate estimates.
    Percentile,
}

impl std::str::FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "percentile" => Ok(Self::Percentile),
            other => Err(Error::InvalidConfig(format!(
                "unknown interval method {other:?} (expected normal or percentile)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub ci_level: f64,
    pub ci_method: CiMethod,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, ci_level: f64, seed: u64) -> Result<Self> {
        let config = Self {
            replicates,
            ci_level,
            ci_method: CiMethod::default(),
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig(format!(
                "bootstrap needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence level {} must lie in (0, 1)",
                self.ci_level
            )));
        }
        Ok(())
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            ci_level: DEFAULT_CI_LEVEL,
            ci_method: CiMethod::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Point estimate `1 / p̂` of the original fit.
    pub estimate: f64,
    /// Standard deviation of the replicate estimates.
    pub se: f64,
    /// `se` relative to `estimate`, in percent.
    pub rse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Non-degenerate replicate estimates in replicate order.
    pub replicate_values: Vec<f64>,
    pub degenerate_count: usize,
}

/// Cell probabilities `(p11, p10, p01, p00)` of two independently included
/// lists with the given marginal inclusion probabilities.
pub fn cell_probabilities(p1: f64, p2: f64) -> [f64; 4] {
    [p1 * p2, p1 * (1.0 - p2), (1.0 - p1) * p2, (1.0 - p1) * (1.0 - p2)]
}

/// Linear-interpolation sample quantile (R type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval `(q_{α/2}, q_{1-α/2})` of `values`.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    (quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0))
}

/// Symmetric interval `estimate ± z·se` with `z` the `(1 + level) / 2`
/// standard normal quantile.
pub fn normal_interval(estimate: f64, se: f64, level: f64) -> (f64, f64) {
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    (estimate - z * se, estimate + z * se)
}

/// Sample standard deviation (divisor `len - 1`).
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// One bootstrap draw of the 2×2 capture table and its comparison patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSample {
    pub draw: CaptureDraw,
    pub matches: PatternCounts,
    pub non_matches: PatternCounts,
}

/// Resampling state shared by all replicates of one dataset.
#[derive(Debug, Clone)]
pub struct BootstrapModel {
    pub population: u64,
    pub cells: [f64; 4],
    pub fit: EmFit,
}

impl BootstrapModel {
    /// Re-estimates the list margins from the point estimate and derives the
    /// independent-inclusion cell probabilities.
    pub fn new(n1p: u64, np1: u64, fit: &EmFit) -> Result<Self> {
        let estimate = estimators::lfdse(fit.params.p)?.value;
        let p1 = n1p as f64 / estimate;
        let p2 = np1 as f64 / estimate;
        for (name, p) in [("first", p1), ("second", p2)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InconsistentInput(format!(
                    "{name} list inclusion probability {p} outside (0, 1] for estimate {estimate}"
                )));
            }
        }
        Ok(Self {
            population: estimate.round() as u64,
            cells: cell_probabilities(p1, p2),
            fit: fit.clone(),
        })
    }

    /// Draws the capture table, then match and non-match pattern counts
    /// from the fitted joint distributions.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<BootstrapSample> {
        let c = multinomial(rng, self.population, &self.cells);
        let draw = CaptureDraw::new(DualCounts::new(c[0] + c[1], c[0] + c[2], c[0])?);
        let (matches, non_matches) = generate_pattern_sets(&draw, &self.fit.params.m, &self.fit.params.u, rng)?;
        Ok(BootstrapSample {
            draw,
            matches,
            non_matches,
        })
    }

    /// One replicate estimate, or `None` when the replicate is degenerate
    /// (no overlap, no pairs, or EM did not converge).
    pub fn replicate<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<f64>> {
        let sample = self.sample(rng)?;
        if sample.draw.counts.n11 == 0 {
            return Ok(None);
        }
        let mut merged = sample.matches;
        merged.merge(&sample.non_matches)?;
        let config = EmConfig::default_for(merged.k(), merged.total())?.with_init(self.fit.params.clone());
        match fit_em(&merged, &config) {
            Ok(refit) if refit.converged => Ok(estimators::lfdse(refit.params.p).ok().map(|e| e.value)),
            _ => Ok(None),
        }
    }
}

/// Parametric bootstrap of `1 / p̂` for observed pattern counts `counts`
/// of `n1p × np1` record pairs, given the EM fit to those counts.
pub fn bootstrap_variance(
    counts: &PatternCounts,
    n1p: u64,
    np1: u64,
    fit: &EmFit,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    config.validate()?;
    if n1p * np1 != counts.total() {
        return Err(Error::InconsistentInput(format!(
            "{n1p} x {np1} record pairs but pattern counts total {}",
            counts.total()
        )));
    }
    let model = BootstrapModel::new(n1p, np1, fit)?;
    let outcomes = (0..config.replicates as u64)
        .into_par_iter()
        .map(|b| model.replicate(&mut stream_rng(config.seed, Purpose::BootstrapReplicate, 0, b)))
        .collect::<Result<Vec<_>>>()?;

    let replicate_values: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let degenerate_count = outcomes.len() - replicate_values.len();
    if replicate_values.len() < 2 {
        return Err(Error::BootstrapFailure(config.replicates));
    }
    let estimate = 1.0 / fit.params.p;
    let se = std_dev(&replicate_values);
    let (ci_low, ci_high) = match config.ci_method {
        CiMethod::Normal => normal_interval(estimate, se, config.ci_level),
        CiMethod::Percentile => percentile_interval(&replicate_values, config.ci_level),
    };
    Ok(BootstrapResult {
        estimate,
        se,
        rse: 100.0 * se / estimate,
        ci_low,
        ci_high,
        replicate_values,
        degenerate_count,
    })
}

/// Percentage of intervals containing `truth` (bounds inclusive).
pub fn coverage_pct(intervals: &[(f64, f64)], truth: f64) -> f64 {
    if intervals.is_empty() {
        return f64::NAN;
    }
    let hits = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count();
    100.0 * hits as f64 / intervals.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    /// Relative standard error of the point estimates across all datasets
    /// where EM could be fitted, in percent.
    pub rse_sim: f64,
    /// Mean bootstrap relative standard error, in percent.
    pub rse_boot: f64,
    /// Percentage of bootstrap intervals containing the true population size.
    pub coverage: f64,
    /// Datasets with a bootstrap interval.
    pub datasets_used: usize,
    /// Datasets without an interval because the fit or the bootstrap failed,
    /// for example when the estimate is smaller than one of the lists.
    pub failures: usize,
}

/// Simulates `outer` datasets from `scenario` and bootstraps each one.
pub fn coverage_experiment(scenario: &Scenario, outer: usize, config: &BootstrapConfig) -> Result<CoverageResult> {
    scenario.validate()?;
    config.validate()?;
    if outer == 0 {
        return Err(Error::InvalidConfig("coverage experiment needs at least one dataset".into()));
    }
    // Per dataset: the point estimate (if EM fitted) and the bootstrap
    // relative standard error and interval (if the bootstrap succeeded).
    let per_dataset = (0..outer as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(scenario.seed, Purpose::CoverageDataset, scenario.id as u64, i);
            let draw = generate_capture(scenario.n, scenario.p1, scenario.p2, &mut rng);
            let patterns = generate_patterns(&draw, &scenario.m, &scenario.u, &mut rng)?;
            if draw.omega == 0 {
                return Ok((None, None));
            }
            let fit = match fit_em(&patterns, &EmConfig::default_for(scenario.k(), patterns.total())?) {
                Ok(fit) => fit,
                Err(_) => return Ok((None, None)),
            };
            let inner = BootstrapConfig {
                seed: mix_seed(config.seed, i) ^ (Purpose::CoverageBootstrap as u64),
                ..*config
            };
            let boot = bootstrap_variance(&patterns, draw.counts.n1p, draw.counts.np1, &fit, &inner)
                .ok()
                .map(|b| (b.rse, (b.ci_low, b.ci_high)));
            Ok((estimators::lfdse(fit.params.p).ok().map(|e| e.value), boot))
        })
        .collect::<Result<Vec<_>>>()?;

    let estimates: Vec<f64> = per_dataset.iter().filter_map(|d| d.0).collect();
    let boots: Vec<(f64, (f64, f64))> = per_dataset.iter().filter_map(|d| d.1).collect();
    if boots.is_empty() {
        return Err(Error::ScenarioFailure {
            id: scenario.id,
            reps: outer,
        });
    }
    let sim = estimators::metrics(&estimates, scenario.n)?;
    let intervals: Vec<(f64, f64)> = boots.iter().map(|b| b.1).collect();
    Ok(CoverageResult {
        rse_sim: 100.0 * sim.rse,
        rse_boot: boots.iter().map(|b| b.0).sum::<f64>() / boots.len() as f64,
        coverage: coverage_pct(&intervals, scenario.n as f64),
        datasets_used: boots.len(),
        failures: outer - boots.len(),
    })
}

pub const COVERAGE_CSV_HEADER: [&str; 8] = ["N", "p1", "p2", "m", "u", "rse_sim", "rse_boot", "coverage"];

pub fn write_coverage_csv<W: std::io::Write>(out: W, rows: &[(Scenario, CoverageResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io("<csv output>", std::io::Error::other(e));
    w.write_record(COVERAGE_CSV_HEADER).map_err(io)?;
    for (s, r) in rows {
        w.write_record([
            s.n.to_string(),
            s.p1.to_string(),
            s.p2.to_string(),
            crate::simulation::format_vector(&s.m),
            crate::simulation::format_vector(&s.u),
            format!("{:.2}", r.rse_sim),
            format!("{:.2}", r.rse_boot),
            format!("{:.1}", r.coverage),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}
