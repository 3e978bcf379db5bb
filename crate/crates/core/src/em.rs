//! EM estimation of the two-component Fellegi–Sunter mixture on aggregated
//! comparison-pattern counts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linkage::{ComparisonPattern, LinkageParams};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_CLAMP: f64 = 1e-6;

/// Multiset of comparison patterns: the sufficient statistic of the mixture.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternCounts {
    k: usize,
    entries: BTreeMap<ComparisonPattern, u64>,
    total: u64,
}

impl PatternCounts {
    /// Empty counts for patterns of length `k`.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: BTreeMap::new(),
            total: 0,
        }
    }

    /// Builds counts from a dense table indexed by lexicographic pattern index.
    /// Zero cells are omitted.
    pub fn from_dense(k: usize, cells: &[u64]) -> Result<Self> {
        if cells.len() != 1usize << k {
            return Err(Error::Shape(format!(
                "{} cells for k={k}, expected {}",
                cells.len(),
                1usize << k
            )));
        }
        let mut counts = Self::new(k);
        for (index, &c) in cells.iter().enumerate() {
            if c > 0 {
                counts.add(ComparisonPattern::from_index(k, index)?, c)?;
            }
        }
        Ok(counts)
    }

    /// Adds `count` occurrences of `pattern`. The first pattern added to
    /// counts created with `k = 0` fixes `k`.
    pub fn add(&mut self, pattern: ComparisonPattern, count: u64) -> Result<()> {
        if self.k == 0 {
            self.k = pattern.k();
        } else if pattern.k() != self.k {
            return Err(Error::Shape(format!(
                "pattern {pattern} has length {}, expected {}",
                pattern.k(),
                self.k
            )));
        }
        if count > 0 {
            *self.entries.entry(pattern).or_insert(0) += count;
            self.total += count;
        }
        Ok(())
    }

    /// Adds every entry of `other`.
    pub fn merge(&mut self, other: &PatternCounts) -> Result<()> {
        for (&g, &c) in &other.entries {
            self.add(g, c)?;
        }
        Ok(())
    }

    /// Pattern length, or 0 when nothing has been added to `PatternCounts::default()`.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of record pairs, `|S|`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn get(&self, pattern: &ComparisonPattern) -> u64 {
        self.entries.get(pattern).copied().unwrap_or(0)
    }

    /// Distinct observed patterns and their counts, in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&ComparisonPattern, &u64)> {
        self.entries.iter()
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }
}

/// Collapses a per-pair sequence of patterns into counts.
pub fn aggregate_pairs(patterns: &[ComparisonPattern]) -> Result<PatternCounts> {
    let mut counts = PatternCounts::new(patterns.first().map_or(0, |g| g.k()));
    for &g in patterns {
        counts.add(g, 1)?;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub init: LinkageParams,
    /// Convergence threshold on the largest absolute parameter change.
    pub tol: f64,
    pub max_iter: usize,
    /// Every M-step result is clamped to `[clamp, 1 - clamp]`.
    pub clamp: f64,
}

impl EmConfig {
    /// `m_v = 0.9`, `u_v = 0.1`, `p = min(1/sqrt(|S|), 0.5)`.
    pub fn default_for(k: usize, total: u64) -> Result<Self> {
        let p = if total == 0 {
            0.5
        } else {
            (1.0 / (total as f64).sqrt()).min(0.5)
        };
        Ok(Self {
            init: LinkageParams::unclamped(vec![0.9; k], vec![0.1; k], p)?,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            clamp: DEFAULT_CLAMP,
        })
    }

    pub fn with_init(mut self, init: LinkageParams) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol={} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "clamp={} must lie in (0, 0.5)",
                self.clamp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: LinkageParams,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood at the start of every iteration, followed
    /// by its value at the returned parameters.
    pub loglik_trace: Vec<f64>,
    /// Posterior match probability of every observed pattern.
    pub posterior: BTreeMap<ComparisonPattern, f64>,
}

impl EmFit {
    pub fn final_loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Per-iteration log factors of one component.
struct LogFactors {
    agree: Vec<f64>,
    disagree: Vec<f64>,
}

impl LogFactors {
    fn new(probs: &[f64]) -> Self {
        Self {
            agree: probs.iter().map(|x| x.ln()).collect(),
            disagree: probs.iter().map(|x| (1.0 - x).ln()).collect(),
        }
    }

    fn log_joint(&self, g: &ComparisonPattern) -> f64 {
        (0..g.k())
            .map(|v| if g.agrees(v) { self.agree[v] } else { self.disagree[v] })
            .sum()
    }
}

/// Counts flattened for the inner loop.
struct Table {
    k: usize,
    patterns: Vec<ComparisonPattern>,
    counts: Vec<f64>,
    total: f64,
}

impl Table {
    fn new(counts: &PatternCounts) -> Self {
        let (patterns, counts_f): (Vec<_>, Vec<_>) = counts.iter().map(|(g, &c)| (*g, c as f64)).unzip();
        Self {
            k: counts.k(),
            patterns,
            counts: counts_f,
            total: counts.total() as f64,
        }
    }

    /// Log joint densities `(log p m_γ, log (1-p) u_γ)` of both components.
    fn component_logs(&self, params: &LinkageParams) -> Vec<(f64, f64)> {
        let params = params.clamped(crate::linkage::PROB_CLAMP);
        let (lm, lu) = (LogFactors::new(&params.m), LogFactors::new(&params.u));
        let (lp, lq) = (params.p.ln(), (1.0 - params.p).ln());
        self.patterns
            .iter()
            .map(|g| (lp + lm.log_joint(g), lq + lu.log_joint(g)))
            .collect()
    }

    /// `(g, 1 - g)` per pattern, each computed without cancellation.
    fn posterior(&self, params: &LinkageParams) -> Vec<(f64, f64)> {
        self.component_logs(params)
            .into_iter()
            .map(|(a, b)| {
                let d = b - a;
                (1.0 / (1.0 + d.exp()), 1.0 / (1.0 + (-d).exp()))
            })
            .collect()
    }

    fn log_likelihood(&self, params: &LinkageParams) -> f64 {
        self.component_logs(params)
            .into_iter()
            .zip(&self.counts)
            .map(|((a, b), c)| c * log_add_exp(a, b))
            .sum()
    }

    fn m_step(&self, posterior: &[(f64, f64)], clamp: f64) -> Result<LinkageParams> {
        let mut match_mass = 0.0;
        let mut non_match_mass = 0.0;
        let mut m_num = vec![0.0; self.k];
        let mut u_num = vec![0.0; self.k];
        for ((g, &c), &(gm, gu)) in self.patterns.iter().zip(&self.counts).zip(posterior) {
            let (wm, wu) = (c * gm, c * gu);
            match_mass += wm;
            non_match_mass += wu;
            for v in 0..self.k {
                if g.agrees(v) {
                    m_num[v] += wm;
                    u_num[v] += wu;
                }
            }
        }
        if !(match_mass > 0.0) {
            return Err(Error::DegenerateComponent("match component has zero posterior mass".into()));
        }
        if !(non_match_mass > 0.0) {
            return Err(Error::DegenerateComponent(
                "non-match component has zero posterior mass".into(),
            ));
        }
        let clamp_p = |x: f64| x.clamp(clamp, 1.0 - clamp);
        Ok(LinkageParams {
            m: m_num.iter().map(|x| clamp_p(x / match_mass)).collect(),
            u: u_num.iter().map(|x| clamp_p(x / non_match_mass)).collect(),
            p: clamp_p(match_mass / self.total),
        })
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn check_k(counts: &PatternCounts, params: &LinkageParams) -> Result<()> {
    if !counts.is_empty() && counts.k() != params.k() {
        return Err(Error::Shape(format!(
            "patterns have length {} but parameters have k={}",
            counts.k(),
            params.k()
        )));
    }
    Ok(())
}

/// Posterior probability that a pair with each observed pattern is a match.
pub fn e_step(counts: &PatternCounts, params: &LinkageParams) -> Result<BTreeMap<ComparisonPattern, f64>> {
    check_k(counts, params)?;
    let table = Table::new(counts);
    Ok(table
        .patterns
        .iter()
        .zip(table.posterior(params))
        .map(|(g, (gm, _))| (*g, gm))
        .collect())
}

/// Closed-form maximisation given posterior match probabilities, clamped to
/// `[clamp, 1 - clamp]`.
pub fn m_step(
    counts: &PatternCounts,
    posterior: &BTreeMap<ComparisonPattern, f64>,
    clamp: f64,
) -> Result<LinkageParams> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("no pattern counts".into()));
    }
    let table = Table::new(counts);
    let post = table
        .patterns
        .iter()
        .map(|g| {
            posterior
                .get(g)
                .map(|&gm| (gm, 1.0 - gm))
                .ok_or_else(|| Error::Shape(format!("no posterior for observed pattern {g}")))
        })
        .collect::<Result<Vec<_>>>()?;
    table.m_step(&post, clamp)
}

/// Observed-data log-likelihood `Σ_γ c_γ log(p m_γ + (1 - p) u_γ)`.
pub fn log_likelihood(counts: &PatternCounts, params: &LinkageParams) -> Result<f64> {
    check_k(counts, params)?;
    Ok(Table::new(counts).log_likelihood(params))
}

/// Alternates E- and M-steps until the largest parameter change drops below
/// `config.tol` or `config.max_iter` is reached.
///
/// The returned match component is always the one with the larger total
/// agreement probability `Σ_v m_v`.
pub fn fit_em(counts: &PatternCounts, config: &EmConfig) -> Result<EmFit> {
    config.validate()?;
    if counts.is_empty() {
        return Err(Error::EmptyInput("cannot fit EM to zero record pairs".into()));
    }
    check_k(counts, &config.init)?;
    let table = Table::new(counts);

    let mut params = config.init.clamped(config.clamp);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        trace.push(table.log_likelihood(&params));
        let next = table.m_step(&table.posterior(&params), config.clamp)?;
        let delta = next.max_abs_diff(&params);
        params = next;
        iterations += 1;
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    trace.push(table.log_likelihood(&params));

    let agree_m: f64 = params.m.iter().sum();
    let agree_u: f64 = params.u.iter().sum();
    if agree_m < agree_u {
        params = params.swapped();
    }
    let posterior = table
        .patterns
        .iter()
        .zip(table.posterior(&params))
        .map(|(g, (gm, _))| (*g, gm))
        .collect();

    Ok(EmFit {
        params,
        iterations,
        converged,
        loglik_trace: trace,
        posterior,
    })
}
