//! Monte Carlo comparison of the perfect-linkage DSE and the linkage-free
//! estimator on synthetic two-list captures.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{fit_em, EmConfig, PatternCounts};
use crate::error::{Error, Result};
use crate::estimators::{self, metrics, net_error_epsilon, DualCounts};
use crate::linkage::{check_probabilities, pattern_distribution, MAX_VARIABLES};
use crate::sampling::{multinomial, stream_rng, Purpose};

pub const DEFAULT_REPS: usize = 10_000;

/// One cell of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u32,
    /// Population size.
    #[serde(rename = "N")]
    pub n: u64,
    /// Inclusion probability of the first list.
    pub p1: f64,
    /// Inclusion probability of the second list.
    pub p2: f64,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn k(&self) -> usize {
        self.m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(format!("scenario {}: {msg}", self.id)));
        if self.n == 0 {
            return fail("population size must be positive".into());
        }
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("{name}={p} must lie in (0, 1]"));
            }
        }
        if self.m.len() != self.u.len() {
            return fail(format!("m has {} entries, u has {}", self.m.len(), self.u.len()));
        }
        if !(1..=MAX_VARIABLES).contains(&self.m.len()) {
            return fail(format!("k={} outside 1..={MAX_VARIABLES}", self.m.len()));
        }
        check_probabilities("m", &self.m).or_else(|e| fail(e.to_string()))?;
        check_probabilities("u", &self.u).or_else(|e| fail(e.to_string()))?;
        if self.reps == 0 {
            return fail("reps must be at least 1".into());
        }
        Ok(())
    }
}

/// Agreement-probability vectors of the published 60-scenario study.
pub mod presets {
    pub const M6_1: [f64; 6] = [0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
    pub const M6_2: [f64; 6] = [0.9; 6];
    pub const U6_1: [f64; 6] = [0.001, 0.01, 0.05, 0.1, 0.15, 0.2];
    pub const U6_1_R: [f64; 6] = [0.2, 0.15, 0.1, 0.05, 0.01, 0.001];
    pub const U6_2: [f64; 6] = [0.05, 0.1, 0.15, 0.2, 0.2, 0.25];
    pub const U6_2_R: [f64; 6] = [0.25, 0.2, 0.2, 0.15, 0.1, 0.05];
    pub const U6_4: [f64; 6] = [0.005; 6];

    pub const M4_1: [f64; 4] = [0.7, 0.8, 0.9, 0.95];
    pub const M4_2: [f64; 4] = [0.9; 4];
    pub const U4_1: [f64; 4] = [0.001, 0.01, 0.1, 0.2];
    pub const U4_1_R: [f64; 4] = [0.2, 0.1, 0.01, 0.001];
    pub const U4_2: [f64; 4] = [0.01, 0.05, 0.1, 0.2];
    pub const U4_2_R: [f64; 4] = [0.2, 0.1, 0.05, 0.01];
    pub const U4_3: [f64; 4] = [0.005, 0.01, 0.01, 0.03];
    pub const U4_3_R: [f64; 4] = [0.03, 0.01, 0.01, 0.005];
    pub const U4_4: [f64; 4] = [0.005; 4];
}

/// The 60 published scenarios, ids 1 to 60 in table order.
pub fn paper60(reps: usize, seed: u64) -> Vec<Scenario> {
    use presets::*;
    let mut out = Vec::with_capacity(60);
    let mut push = |n: u64, p1: f64, p2: f64, m: &[f64], u: &[f64]| {
        out.push(Scenario {
            id: out.len() as u32 + 1,
            n,
            p1,
            p2,
            m: m.to_vec(),
            u: u.to_vec(),
            reps,
            seed,
        })
    };
    let pairs = [(0.5, 0.5), (0.5, 0.7), (0.5, 0.9), (0.7, 0.7), (0.7, 0.9), (0.9, 0.9)];
    for n in [1000, 150] {
        for (p1, p2) in pairs {
            for u in [&U6_1, &U6_1_R] {
                push(n, p1, p2, &M6_1, u);
            }
        }
    }
    for n in [1000, 150] {
        for p in [0.5, 0.7, 0.9] {
            for u in [&U4_1, &U4_1_R, &U4_2, &U4_2_R] {
                push(n, p, p, &M4_1, u);
            }
        }
    }
    for n in [1000, 150] {
        for u in [&U6_2, &U6_2_R] {
            push(n, 0.7, 0.7, &M6_1, u);
        }
    }
    for n in [1000, 150] {
        for u in [&U4_3, &U4_3_R] {
            push(n, 0.7, 0.7, &M4_1, u);
        }
    }
    push(1000, 0.7, 0.7, &M6_2, &U6_4);
    push(150, 0.7, 0.7, &M6_2, &U6_4);
    push(1000, 0.7, 0.7, &M4_2, &U4_4);
    push(150, 0.7, 0.7, &M4_2, &U4_4);
    out
}

/// The 12 configurations of the published bootstrap coverage study, ids 1 to 12.
pub fn table2(reps: usize, seed: u64) -> Vec<Scenario> {
    use presets::*;
    let designs: [(&[f64], &[f64], &[f64]); 2] = [(&M6_1, &U6_1, &U6_1), (&M4_1, &U4_1, &U4_2)];
    let mut out = Vec::with_capacity(12);
    for (m, u_equal, u_mixed) in designs {
        for n in [1000, 150] {
            for (p1, p2) in [(0.5, 0.5), (0.7, 0.9), (0.9, 0.9)] {
                // The 0.7/0.9 rows of the four-variable design use the second u-vector.
                let u = if p1 != p2 { u_mixed } else { u_equal };
                out.push(Scenario {
                    id: out.len() as u32 + 1,
                    n,
                    p1,
                    p2,
                    m: m.to_vec(),
                    u: u.to_vec(),
                    reps,
                    seed,
                });
            }
        }
    }
    out
}

/// Counts of one simulated pair of lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureDraw {
    pub counts: DualCounts,
    /// Number of cross-list record pairs, `n1+ · n+1`.
    pub omega: u64,
}

impl CaptureDraw {
    pub fn new(counts: DualCounts) -> Self {
        Self {
            omega: counts.omega(),
            counts,
        }
    }
}

/// Places each of `n` elements on list 1 with probability `p1` and,
/// independently, on list 2 with probability `p2`.
pub fn generate_capture<R: Rng + ?Sized>(n: u64, p1: f64, p2: f64, rng: &mut R) -> CaptureDraw {
    let cells = multinomial(
        rng,
        n,
        &[p1 * p2, p1 * (1.0 - p2), (1.0 - p1) * p2, (1.0 - p1) * (1.0 - p2)],
    );
    let counts = DualCounts {
        n1p: cells[0] + cells[1],
        np1: cells[0] + cells[2],
        n11: cells[0],
    };
    CaptureDraw::new(counts)
}

/// Comparison patterns of all cross-list pairs: `n11` match pairs drawn from
/// the joint m-distribution and `omega - n11` non-match pairs from the joint
/// u-distribution. Returns the match and non-match counts separately.
pub fn generate_pattern_sets<R: Rng + ?Sized>(
    draw: &CaptureDraw,
    m: &[f64],
    u: &[f64],
    rng: &mut R,
) -> Result<(PatternCounts, PatternCounts)> {
    if m.len() != u.len() {
        return Err(Error::Shape(format!("m has {} entries, u has {}", m.len(), u.len())));
    }
    let k = m.len();
    let matches = multinomial(rng, draw.counts.n11, &pattern_distribution(m)?);
    let non_matches = multinomial(rng, draw.omega - draw.counts.n11, &pattern_distribution(u)?);
    Ok((
        PatternCounts::from_dense(k, &matches)?,
        PatternCounts::from_dense(k, &non_matches)?,
    ))
}

/// Merged comparison patterns of all cross-list pairs.
pub fn generate_patterns<R: Rng + ?Sized>(
    draw: &CaptureDraw,
    m: &[f64],
    u: &[f64],
    rng: &mut R,
) -> Result<PatternCounts> {
    let (mut all, non_matches) = generate_pattern_sets(draw, m, u, rng)?;
    all.merge(&non_matches)?;
    Ok(all)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateFailure {
    /// No element is on both lists.
    NoOverlap,
    /// One of the lists is empty, so there are no record pairs.
    EmptyList,
    /// EM could not be fitted.
    Em(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub draw: CaptureDraw,
    pub dse: std::result::Result<f64, ReplicateFailure>,
    pub lfdse: std::result::Result<f64, ReplicateFailure>,
    pub em_converged: bool,
}

impl ReplicateOutcome {
    /// Both arms produced an estimate.
    pub fn paired(&self) -> Option<(f64, f64)> {
        match (&self.dse, &self.lfdse) {
            (Ok(a), Ok(b)) => Some((*a, *b)),
            _ => None,
        }
    }
}

/// Random stream of replicate `index` of `scenario`.
pub fn replicate_rng(scenario: &Scenario, index: u64) -> ChaCha8Rng {
    stream_rng(scenario.seed, Purpose::SimulationReplicate, scenario.id as u64, index)
}

/// Simulates one capture, computes the DSE from the true overlap and the
/// linkage-free estimate from an EM fit to the comparison patterns.
pub fn run_replicate<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<ReplicateOutcome> {
    let draw = generate_capture(scenario.n, scenario.p1, scenario.p2, rng);
    let patterns = generate_patterns(&draw, &scenario.m, &scenario.u, rng)?;

    let dse = estimators::dse(&draw.counts)
        .map(|e| e.value)
        .map_err(|_| ReplicateFailure::NoOverlap);

    let mut em_converged = false;
    let lfdse = if draw.omega == 0 {
        Err(ReplicateFailure::EmptyList)
    } else {
        EmConfig::default_for(scenario.k(), patterns.total())
            .and_then(|config| fit_em(&patterns, &config))
            .and_then(|fit| {
                em_converged = fit.converged;
                estimators::lfdse(fit.params.p)
            })
            .map(|e| e.value)
            .map_err(|e| ReplicateFailure::Em(e.to_string()))
    };
    Ok(ReplicateOutcome {
        draw,
        dse,
        lfdse,
        em_converged,
    })
}

/// Per-scenario accuracy of both estimators. Relative quantities are
/// percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub id: u32,
    pub rb_dse: f64,
    pub rb_lfdse: f64,
    pub rse_dse: f64,
    pub rse_lfdse: f64,
    pub rrmse_dse: f64,
    pub rrmse_lfdse: f64,
    /// `rse_lfdse / rse_dse`.
    pub se_ratio: f64,
    /// Net linkage error; `None` when the linkage-free estimator is more
    /// accurate than the perfect-linkage DSE variance allows.
    pub eps: Option<f64>,
    pub eps_pct: Option<f64>,
    pub mean_dse: f64,
    pub mean_lfdse: f64,
    /// Population variance of the DSE replicates.
    pub var_dse: f64,
    pub reps_used: usize,
    /// Replicates excluded because either arm failed.
    pub failures: usize,
    /// Included replicates whose EM fit stopped at the iteration cap.
    pub em_nonconverged: usize,
}

/// Runs every replicate of `scenario` (in parallel on the current rayon pool)
/// and summarises them. A replicate where either estimator fails is excluded
/// from both arms and counted in `failures`.
pub fn run_scenario(scenario: &Scenario) -> Result<MetricsRow> {
    scenario.validate()?;
    let outcomes = (0..scenario.reps as u64)
        .into_par_iter()
        .map(|i| run_replicate(scenario, &mut replicate_rng(scenario, i)))
        .collect::<Result<Vec<_>>>()?;
    summarize(scenario, &outcomes)
}

/// Aggregates replicate outcomes in index order.
pub fn summarize(scenario: &Scenario, outcomes: &[ReplicateOutcome]) -> Result<MetricsRow> {
    let mut dse_values = Vec::with_capacity(outcomes.len());
    let mut lfdse_values = Vec::with_capacity(outcomes.len());
    let mut em_nonconverged = 0;
    for outcome in outcomes {
        if let Some((a, b)) = outcome.paired() {
            dse_values.push(a);
            lfdse_values.push(b);
            if !outcome.em_converged {
                em_nonconverged += 1;
            }
        }
    }
    if dse_values.is_empty() {
        return Err(Error::ScenarioFailure {
            id: scenario.id,
            reps: outcomes.len(),
        });
    }
    let dse = metrics(&dse_values, scenario.n)?;
    let lf = metrics(&lfdse_values, scenario.n)?;
    let net = net_error_epsilon(lf.rrmse, dse.var, scenario.n, scenario.p1, scenario.p2).ok();
    Ok(MetricsRow {
        id: scenario.id,
        rb_dse: 100.0 * dse.rb,
        rb_lfdse: 100.0 * lf.rb,
        rse_dse: 100.0 * dse.rse,
        rse_lfdse: 100.0 * lf.rse,
        rrmse_dse: 100.0 * dse.rrmse,
        rrmse_lfdse: 100.0 * lf.rrmse,
        se_ratio: lf.rse / dse.rse,
        eps: net.map(|e| e.eps),
        eps_pct: net.map(|e| e.eps_pct),
        mean_dse: dse.mean,
        mean_lfdse: lf.mean,
        var_dse: dse.var,
        reps_used: dse_values.len(),
        failures: outcomes.len() - dse_values.len(),
        em_nonconverged,
    })
}

/// Runs each scenario on a pool of `threads` workers. Rows come back in input
/// order; a failing scenario yields an `Err` in its slot.
pub fn run_suite(scenarios: &[Scenario], threads: usize) -> Result<Vec<Result<MetricsRow>>> {
    if scenarios.is_empty() {
        return Err(Error::EmptyInput("no scenarios to run".into()));
    }
    if threads == 0 {
        return Err(Error::InvalidConfig("thread count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| scenarios.iter().map(run_scenario).collect()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<ScenarioRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRecord {
    id: u32,
    #[serde(rename = "N")]
    n: u64,
    p1: f64,
    p2: f64,
    m: Vec<f64>,
    u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Parses a TOML scenario file made of `[[scenario]]` tables. Missing `reps`
/// and `seed` fall back to the given defaults.
pub fn parse_scenarios(text: &str, source_name: &str, default_reps: usize, default_seed: u64) -> Result<Vec<Scenario>> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::parse(source_name, line, e.message().to_string())
    })?;
    let scenarios: Vec<Scenario> = file
        .scenario
        .into_iter()
        .map(|r| Scenario {
            id: r.id,
            n: r.n,
            p1: r.p1,
            p2: r.p2,
            m: r.m,
            u: r.u,
            reps: r.reps.unwrap_or(default_reps),
            seed: r.seed.unwrap_or(default_seed),
        })
        .collect();
    for s in &scenarios {
        s.validate()?;
    }
    Ok(scenarios)
}

/// Writes scenarios in the format read by [`parse_scenarios`]. Seeds must fit
/// in a TOML integer (`< 2^63`).
pub fn write_scenarios(scenarios: &[Scenario]) -> Result<String> {
    let file = ScenarioFile {
        scenario: scenarios
            .iter()
            .map(|s| ScenarioRecord {
                id: s.id,
                n: s.n,
                p1: s.p1,
                p2: s.p2,
                m: s.m.clone(),
                u: s.u.clone(),
                reps: Some(s.reps),
                seed: Some(s.seed),
            })
            .collect(),
    };
    toml::to_string(&file).map_err(|e| Error::InvalidConfig(format!("cannot serialise scenarios: {e}")))
}

pub const CSV_HEADER: [&str; 16] = [
    "id", "N", "p1", "p2", "m", "u", "rb_dse", "rb_lfdse", "rse_dse", "rse_lfdse", "rrmse_dse",
    "rrmse_lfdse", "ratio", "eps", "eps_pct", "failures",
];

pub(crate) fn format_vector(values: &[f64]) -> String {
    values.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn fixed2(x: Option<f64>) -> String {
    match x {
        Some(x) if x.is_finite() => format!("{x:.2}"),
        _ => "NA".into(),
    }
}

/// Writes one CSV row per scenario. Failed scenarios keep their identifying
/// columns and report `NA` metrics with every replicate counted as failed.
pub fn write_metrics_csv<W: Write>(out: W, scenarios: &[Scenario], rows: &[Result<MetricsRow>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io("<csv output>", std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for (s, row) in scenarios.iter().zip(rows) {
        let mut record = vec![
            s.id.to_string(),
            s.n.to_string(),
            s.p1.to_string(),
            s.p2.to_string(),
            format_vector(&s.m),
            format_vector(&s.u),
        ];
        match row {
            Ok(r) => {
                record.extend(
                    [
                        r.rb_dse,
                        r.rb_lfdse,
                        r.rse_dse,
                        r.rse_lfdse,
                        r.rrmse_dse,
                        r.rrmse_lfdse,
                        r.se_ratio,
                    ]
                    .map(|x| fixed2(Some(x))),
                );
                record.push(fixed2(r.eps));
                record.push(fixed2(r.eps_pct));
                record.push(r.failures.to_string());
            }
            Err(_) => {
                record.extend(std::iter::repeat_n("NA".to_string(), 9));
                record.push(s.reps.to_string());
            }
        }
        w.write_record(&record).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}
