//! Fellegi–Sunter comparison model: agreement patterns, joint pattern
//! probabilities under conditional independence, match weights and the
//! three-way link / possible-link / non-link rule.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest supported number of comparison variables. `2^k` patterns are
/// materialised in several places.
pub const MAX_VARIABLES: usize = 20;

/// Probabilities entering a joint pattern probability are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` so that weights never divide by zero.
pub const PROB_CLAMP: f64 = 1e-9;

/// Log-weights closer than this (relative) are treated as one tie group.
const TIE_TOLERANCE: f64 = 1e-12;

/// Slack used when comparing cumulative error probabilities to `mu`/`lambda`.
const ERROR_LEVEL_SLACK: f64 = 1e-12;

/// A binary agreement vector of length `k`.
///
/// Bits are packed with the first comparison variable in the most significant
/// position, so integer order on [`ComparisonPattern::index`] is the
/// lexicographic order of the bit sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComparisonPattern {
    k: u8,
    bits: u32,
}

impl ComparisonPattern {
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        check_k(bits.len())?;
        let mut packed = 0u32;
        for (v, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => packed |= 1 << (bits.len() - 1 - v),
                other => {
                    return Err(Error::Bounds(format!(
                        "comparison outcome {other} at position {} is not 0 or 1",
                        v + 1
                    )))
                }
            }
        }
        Ok(Self {
            k: bits.len() as u8,
            bits: packed,
        })
    }

    /// The pattern at position `index` of the lexicographic enumeration.
    pub fn from_index(k: usize, index: usize) -> Result<Self> {
        check_k(k)?;
        if index >= 1usize << k {
            return Err(Error::Bounds(format!(
                "pattern index {index} out of range for k={k}"
            )));
        }
        Ok(Self {
            k: k as u8,
            bits: index as u32,
        })
    }

    pub fn all_ones(k: usize) -> Result<Self> {
        Self::from_index(k, (1usize << k) - 1)
    }

    pub fn all_zeros(k: usize) -> Result<Self> {
        Self::from_index(k, 0)
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn index(&self) -> usize {
        self.bits as usize
    }

    /// Outcome of comparison variable `v` (zero-based).
    pub fn agrees(&self, v: usize) -> bool {
        debug_assert!(v < self.k());
        (self.bits >> (self.k() - 1 - v)) & 1 == 1
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.k()).map(|v| self.agrees(v) as u8).collect()
    }

    pub fn agreement_count(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Returns the pattern with variable `v` set to `value`.
    pub fn with(&self, v: usize, value: bool) -> Self {
        let mask = 1 << (self.k() - 1 - v);
        let bits = if value { self.bits | mask } else { self.bits & !mask };
        Self { k: self.k, bits }
    }
}

impl fmt::Display for ComparisonPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in 0..self.k() {
            if v > 0 {
                f.write_str(",")?;
            }
            f.write_str(if self.agrees(v) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for ComparisonPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .split(',')
            .map(|field| match field.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Bounds(format!(
                    "comparison outcome {other:?} is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

fn check_k(k: usize) -> Result<()> {
    if (1..=MAX_VARIABLES).contains(&k) {
        Ok(())
    } else {
        Err(Error::Bounds(format!(
            "number of comparison variables k={k} outside 1..={MAX_VARIABLES}"
        )))
    }
}

/// All `2^k` patterns in lexicographic order.
pub fn enumerate_patterns(k: usize) -> Result<Vec<ComparisonPattern>> {
    check_k(k)?;
    Ok((0..1usize << k)
        .map(|index| ComparisonPattern {
            k: k as u8,
            bits: index as u32,
        })
        .collect())
}

/// Mixture parameters of the comparison model: per-variable agreement
/// probabilities among matches (`m`) and non-matches (`u`), and the match
/// proportion `p` among all record pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkageParams {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub p: f64,
}

impl LinkageParams {
    /// Validates and clamps every probability to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn new(m: Vec<f64>, u: Vec<f64>, p: f64) -> Result<Self> {
        Self::unclamped(m, u, p).map(|params| params.clamped(PROB_CLAMP))
    }

    /// Validates without clamping. Boundary values (0 or 1) are accepted.
    pub fn unclamped(m: Vec<f64>, u: Vec<f64>, p: f64) -> Result<Self> {
        if m.len() != u.len() {
            return Err(Error::Shape(format!(
                "m has {} components but u has {}",
                m.len(),
                u.len()
            )));
        }
        check_k(m.len())?;
        for (name, values) in [("m", &m), ("u", &u)] {
            check_probabilities(name, values)?;
        }
        check_probabilities("p", &[p])?;
        Ok(Self { m, u, p })
    }

    pub fn k(&self) -> usize {
        self.m.len()
    }

    pub fn clamped(&self, eps: f64) -> Self {
        let clamp = |x: f64| x.clamp(eps, 1.0 - eps);
        Self {
            m: self.m.iter().copied().map(clamp).collect(),
            u: self.u.iter().copied().map(clamp).collect(),
            p: clamp(self.p),
        }
    }

    /// Largest absolute difference over all `2k + 1` parameters.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.m
            .iter()
            .zip(&other.m)
            .chain(self.u.iter().zip(&other.u))
            .map(|(a, b)| (a - b).abs())
            .fold((self.p - other.p).abs(), f64::max)
    }

    /// Swaps the roles of the two mixture components.
    pub fn swapped(&self) -> Self {
        Self {
            m: self.u.clone(),
            u: self.m.clone(),
            p: 1.0 - self.p,
        }
    }
}

pub(crate) fn check_probabilities(name: &str, values: &[f64]) -> Result<()> {
    for (i, &x) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Bounds(format!(
                "{name}[{}] = {x} is not a probability",
                i + 1
            )));
        }
    }
    Ok(())
}

fn check_pattern_len(probs: &[f64], pattern: &ComparisonPattern) -> Result<()> {
    if probs.len() != pattern.k() {
        return Err(Error::Shape(format!(
            "{} probabilities for a pattern of length {}",
            probs.len(),
            pattern.k()
        )));
    }
    Ok(())
}

/// `log ∏_v probs_v^γ_v (1 - probs_v)^(1 - γ_v)`, with clamped factors.
pub fn log_joint_prob(probs: &[f64], pattern: &ComparisonPattern) -> Result<f64> {
    check_pattern_len(probs, pattern)?;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(v, &x)| {
            let x = x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if pattern.agrees(v) {
                x.ln()
            } else {
                (1.0 - x).ln()
            }
        })
        .sum())
}

/// Probability of `pattern` under independent per-variable agreement
/// probabilities `probs`.
pub fn joint_prob(probs: &[f64], pattern: &ComparisonPattern) -> Result<f64> {
    log_joint_prob(probs, pattern).map(f64::exp)
}

/// Unclamped joint probabilities of every pattern, in lexicographic order.
/// Used for sampling, where exact zeros and ones are meaningful.
pub fn pattern_distribution(probs: &[f64]) -> Result<Vec<f64>> {
    check_k(probs.len())?;
    check_probabilities("probs", probs)?;
    let mut dist = vec![1.0];
    for &x in probs {
        // Appending a variable in the least significant position.
        dist = dist.iter().flat_map(|&q| [q * (1.0 - x), q * x]).collect();
    }
    Ok(dist)
}

pub fn log_match_weight(params: &LinkageParams, pattern: &ComparisonPattern) -> Result<f64> {
    Ok(log_joint_prob(&params.m, pattern)? - log_joint_prob(&params.u, pattern)?)
}

/// Likelihood ratio `m(γ) / u(γ)`.
pub fn match_weight(params: &LinkageParams, pattern: &ComparisonPattern) -> Result<f64> {
    log_match_weight(params, pattern).map(f64::exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkDecision {
    Link,
    PossibleLink,
    NonLink,
}

impl fmt::Display for LinkDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkDecision::Link => "link",
            LinkDecision::PossibleLink => "possible_link",
            LinkDecision::NonLink => "non_link",
        })
    }
}

/// Upper and lower weight thresholds of the decision rule together with the
/// descending-weight ordering of all patterns they were derived from.
///
/// `t_mu` is `+inf` when no pattern can be linked within the false-positive
/// level, and `t_lambda` is `0` when no pattern can be rejected within the
/// false-negative level.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionThresholds {
    pub t_mu: f64,
    pub t_lambda: f64,
    pub log_t_mu: f64,
    pub log_t_lambda: f64,
    pub ordering: Vec<ComparisonPattern>,
}

fn log_weights_tied(a: f64, b: f64) -> bool {
    a == b
        || (a.is_finite() && b.is_finite() && (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0))
}

/// Derives `T_mu` and `T_lambda` for error levels `mu` (false links among
/// non-matches) and `lambda` (missed links among matches).
///
/// Patterns are ordered by descending weight, ties broken lexicographically.
/// Equal-weight patterns form groups that are linked (or rejected) as a whole,
/// and only when the whole group still fits under the error level.
pub fn derive_thresholds(params: &LinkageParams, mu: f64, lambda: f64) -> Result<DecisionThresholds> {
    for (name, level) in [("mu", mu), ("lambda", lambda)] {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Bounds(format!("{name}={level} must lie in (0, 1)")));
        }
    }
    let patterns = enumerate_patterns(params.k())?;
    let mut scored = patterns
        .iter()
        .map(|g| {
            Ok((
                *g,
                log_match_weight(params, g)?,
                joint_prob(&params.m, g)?,
                joint_prob(&params.u, g)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));

    // (log weight, total m, total u) per tie group, in descending weight order.
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for &(_, lw, m, u) in &scored {
        match groups.last_mut() {
            Some(last) if log_weights_tied(last.0, lw) => {
                last.1 += m;
                last.2 += u;
            }
            _ => groups.push((lw, m, u)),
        }
    }

    let mut linked = 0;
    let mut fp = 0.0;
    for g in &groups {
        if fp + g.2 <= mu + ERROR_LEVEL_SLACK {
            fp += g.2;
            linked += 1;
        } else {
            break;
        }
    }
    let mut rejected = 0;
    let mut fn_ = 0.0;
    for g in groups.iter().rev() {
        if fn_ + g.1 <= lambda + ERROR_LEVEL_SLACK {
            fn_ += g.1;
            rejected += 1;
        } else {
            break;
        }
    }
    if linked + rejected > groups.len() {
        return Err(Error::Admissibility { mu, lambda });
    }

    let log_t_mu = if linked == 0 {
        f64::INFINITY
    } else {
        groups[linked - 1].0
    };
    let log_t_lambda = if rejected == 0 {
        f64::NEG_INFINITY
    } else {
        groups[groups.len() - rejected].0
    };
    Ok(DecisionThresholds {
        t_mu: log_t_mu.exp(),
        t_lambda: log_t_lambda.exp(),
        log_t_mu,
        log_t_lambda,
        ordering: scored.into_iter().map(|s| s.0).collect(),
    })
}

/// Three-way decision for a weight `m(γ)/u(γ)`. Both boundaries are inclusive.
pub fn classify(weight: f64, thresholds: &DecisionThresholds) -> LinkDecision {
    if weight >= thresholds.t_mu {
        LinkDecision::Link
    } else if weight <= thresholds.t_lambda {
        LinkDecision::NonLink
    } else {
        LinkDecision::PossibleLink
    }
}

/// Like [`classify`] but compares log-weights, treating values within the
/// tie tolerance of a threshold as equal to it.
pub fn classify_log(log_weight: f64, thresholds: &DecisionThresholds) -> LinkDecision {
    if log_weight >= thresholds.log_t_mu || log_weights_tied(log_weight, thresholds.log_t_mu) {
        LinkDecision::Link
    } else if log_weight <= thresholds.log_t_lambda
        || log_weights_tied(log_weight, thresholds.log_t_lambda)
    {
        LinkDecision::NonLink
    } else {
        LinkDecision::PossibleLink
    }
}

pub fn classify_pattern(
    params: &LinkageParams,
    pattern: &ComparisonPattern,
    thresholds: &DecisionThresholds,
) -> Result<LinkDecision> {
    Ok(classify_log(log_match_weight(params, pattern)?, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn pat(s: &str) -> ComparisonPattern {
        s.parse().unwrap()
    }

    fn params(m: &[f64], u: &[f64]) -> LinkageParams {
        LinkageParams::new(m.to_vec(), u.to_vec(), 0.1).unwrap()
    }

    #[test]
    fn enumerates_small_spaces_in_lexicographic_order() {
        let one: Vec<_> = enumerate_patterns(1).unwrap().iter().map(|g| g.bits()).collect();
        assert_eq!(one, vec![vec![0], vec![1]]);
        let two: Vec<_> = enumerate_patterns(2).unwrap().iter().map(|g| g.bits()).collect();
        assert_eq!(two, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(enumerate_patterns(6).unwrap().len(), 64);
    }

    #[test]
    fn enumerate_rejects_out_of_range_k() {
        assert!(matches!(enumerate_patterns(0), Err(Error::Bounds(_))));
        assert!(matches!(enumerate_patterns(21), Err(Error::Bounds(_))));
        assert_eq!(enumerate_patterns(20).unwrap().len(), 1 << 20);
    }

    #[test]
    fn enumeration_is_unique_for_every_k() {
        for k in 1..=12 {
            let all = enumerate_patterns(k).unwrap();
            let set: HashSet<_> = all.iter().collect();
            assert_eq!(set.len(), 1 << k);
            assert!(all.windows(2).all(|w| w[0].bits() < w[1].bits()));
        }
    }

    #[test]
    fn pattern_text_form() {
        let g = pat("1,0,1,1");
        assert_eq!(g.k(), 4);
        assert_eq!(g.bits(), vec![1, 0, 1, 1]);
        assert_eq!(g.to_string(), "1,0,1,1");
        assert_eq!(pat(" 0 , 1 ").bits(), vec![0, 1]);
        assert!("1,2".parse::<ComparisonPattern>().is_err());
        assert!("".parse::<ComparisonPattern>().is_err());
        assert!(ComparisonPattern::from_bits(&[1, 0, 3]).is_err());
    }

    #[test]
    fn joint_prob_examples() {
        assert_relative_eq!(joint_prob(&[1.0, 1.0], &pat("1,1")).unwrap(), 1.0, epsilon = 1e-8);
        assert_relative_eq!(joint_prob(&[0.7], &pat("0")).unwrap(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(joint_prob(&[0.9, 0.8], &pat("1,0")).unwrap(), 0.18, epsilon = 1e-12);
        assert!(matches!(joint_prob(&[0.9], &pat("1,0")), Err(Error::Shape(_))));
    }

    #[test]
    fn joint_prob_is_positive_at_the_boundary() {
        assert!(joint_prob(&[0.0, 1.0], &pat("1,0")).unwrap() > 0.0);
    }

    #[test]
    fn match_weight_examples() {
        let equal = params(&[0.3, 0.6, 0.8], &[0.3, 0.6, 0.8]);
        for g in enumerate_patterns(3).unwrap() {
            assert_relative_eq!(match_weight(&equal, &g).unwrap(), 1.0, epsilon = 1e-12);
        }
        let p = params(&[0.9, 0.8], &[0.1, 0.2]);
        assert_relative_eq!(match_weight(&p, &pat("1,1")).unwrap(), 36.0, max_relative = 1e-12);
        assert_relative_eq!(match_weight(&p, &pat("0,0")).unwrap(), 0.02 / 0.72, max_relative = 1e-12);
    }

    #[test]
    fn weight_does_not_underflow_at_k20() {
        let p = params(&[0.999; 20], &[0.001; 20]);
        let lw = log_match_weight(&p, &ComparisonPattern::all_zeros(20).unwrap()).unwrap();
        assert!(lw.is_finite() && lw < -100.0);
    }

    #[test]
    fn pattern_distribution_matches_joint_prob() {
        let probs = [0.7, 0.75, 0.8, 0.85];
        let dist = pattern_distribution(&probs).unwrap();
        for g in enumerate_patterns(4).unwrap() {
            assert_relative_eq!(dist[g.index()], joint_prob(&probs, &g).unwrap(), max_relative = 1e-12);
        }
        let degenerate = pattern_distribution(&[1.0, 1.0]).unwrap();
        assert_eq!(degenerate, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn thresholds_single_variable() {
        let p = params(&[0.9], &[0.1]);
        let t = derive_thresholds(&p, 0.1, 0.1).unwrap();
        assert_relative_eq!(t.t_mu, 9.0, max_relative = 1e-12);
        assert_relative_eq!(t.t_lambda, 1.0 / 9.0, max_relative = 1e-12);
        assert_eq!(t.ordering, vec![pat("1"), pat("0")]);
    }

    #[test]
    fn thresholds_two_variables_link_only_top_pattern() {
        let p = params(&[0.9, 0.8], &[0.1, 0.2]);
        let t = derive_thresholds(&p, 0.02, 0.02).unwrap();
        assert_relative_eq!(t.t_mu, 36.0, max_relative = 1e-12);
        assert_relative_eq!(t.t_lambda, 1.0 / 36.0, max_relative = 1e-12);
        let decisions: Vec<_> = enumerate_patterns(2)
            .unwrap()
            .iter()
            .map(|g| classify_pattern(&p, g, &t).unwrap())
            .collect();
        assert_eq!(
            decisions,
            vec![
                LinkDecision::NonLink,
                LinkDecision::PossibleLink,
                LinkDecision::PossibleLink,
                LinkDecision::Link
            ]
        );
    }

    #[test]
    fn crossing_levels_are_inadmissible() {
        let p = params(&[0.9, 0.8], &[0.1, 0.2]);
        let eps = 1e-3;
        assert!(matches!(
            derive_thresholds(&p, 1.0 - eps, 1.0 - eps),
            Err(Error::Admissibility { .. })
        ));
        assert!(matches!(derive_thresholds(&p, 0.0, 0.1), Err(Error::Bounds(_))));
    }

    #[test]
    fn tiny_levels_link_and_reject_nothing() {
        let p = params(&[0.9, 0.8], &[0.1, 0.2]);
        let t = derive_thresholds(&p, 1e-6, 1e-6).unwrap();
        assert_eq!(t.t_mu, f64::INFINITY);
        assert_eq!(t.t_lambda, 0.0);
        for g in enumerate_patterns(2).unwrap() {
            assert_eq!(classify_pattern(&p, &g, &t).unwrap(), LinkDecision::PossibleLink);
        }
    }

    #[test]
    fn tied_group_is_split_off_when_it_does_not_fit() {
        // All single-agreement patterns share one weight; u of the group is 3 * 0.1 * 0.81.
        let p = params(&[0.9; 3], &[0.1; 3]);
        let t = derive_thresholds(&p, 0.1, 0.001).unwrap();
        for g in enumerate_patterns(3).unwrap() {
            let d = classify_pattern(&p, &g, &t).unwrap();
            match g.agreement_count() {
                3 | 2 => assert_eq!(d, LinkDecision::Link, "{g}"),
                _ => assert_ne!(d, LinkDecision::Link, "{g}"),
            }
        }
    }

    #[test]
    fn classify_boundaries_are_inclusive() {
        let t = DecisionThresholds {
            t_mu: 10.0,
            t_lambda: 0.5,
            log_t_mu: 10f64.ln(),
            log_t_lambda: 0.5f64.ln(),
            ordering: vec![],
        };
        assert_eq!(classify(10.0, &t), LinkDecision::Link);
        assert_eq!(classify(0.5, &t), LinkDecision::NonLink);
        assert_eq!(classify(2.0, &t), LinkDecision::PossibleLink);
        assert_eq!(classify(100.0, &t), LinkDecision::Link);
        assert_eq!(classify(0.1, &t), LinkDecision::NonLink);
    }

    fn interior_probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..0.999, k)
    }

    proptest! {
        #[test]
        fn joint_probabilities_sum_to_one((k, probs) in (1usize..=10).prop_flat_map(|k| (Just(k), interior_probs(k)))) {
            let total: f64 = enumerate_patterns(k).unwrap().iter().map(|g| joint_prob(&probs, g).unwrap()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "sum = {total}");
        }

        #[test]
        fn flipping_a_component_scales_weight_by_its_odds_ratio(
            (k, m, u, idx, v) in (1usize..=8).prop_flat_map(|k| (Just(k), interior_probs(k), interior_probs(k), 0usize..(1 << k), 0..k))
        ) {
            let p = LinkageParams::new(m.clone(), u.clone(), 0.5).unwrap();
            let g0 = ComparisonPattern::from_index(k, idx).unwrap().with(v, false);
            let g1 = g0.with(v, true);
            let ratio = match_weight(&p, &g1).unwrap() / match_weight(&p, &g0).unwrap();
            let expected = (m[v] / u[v]) * ((1.0 - u[v]) / (1.0 - m[v]));
            prop_assert!((ratio / expected - 1.0).abs() < 1e-10);
        }

        #[test]
        fn realized_error_rates_respect_levels(
            (k, m, u) in (1usize..=4).prop_flat_map(|k| (Just(k), interior_probs(k), interior_probs(k))),
            mu in 0.001f64..0.5,
            lambda in 0.001f64..0.5,
        ) {
            let p = LinkageParams::new(m, u, 0.5).unwrap();
            if let Ok(t) = derive_thresholds(&p, mu, lambda) {
                let (mut fp, mut fn_) = (0.0, 0.0);
                for g in enumerate_patterns(k).unwrap() {
                    match classify_pattern(&p, &g, &t).unwrap() {
                        LinkDecision::Link => fp += joint_prob(&p.u, &g).unwrap(),
                        LinkDecision::NonLink => fn_ += joint_prob(&p.m, &g).unwrap(),
                        LinkDecision::PossibleLink => {}
                    }
                }
                prop_assert!(fp <= mu + 1e-12, "fp {fp} > mu {mu}");
                prop_assert!(fn_ <= lambda + 1e-12, "fn {fn_} > lambda {lambda}");
                prop_assert!(t.t_lambda <= t.t_mu);
            }
        }
    }
}
