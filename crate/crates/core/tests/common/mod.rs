#![allow(dead_code)]

use lfdse::em::PatternCounts;
use lfdse::linkage::{enumerate_patterns, ComparisonPattern, LinkageParams};
use rand::Rng;

/// EM over the raw per-pair sequence with plain products, no aggregation
/// and no log-space arithmetic. Stops on the same parameter-change rule as
/// the library and applies the same component labelling.
pub fn per_pair_em(
    pairs: &[ComparisonPattern],
    init: &LinkageParams,
    tol: f64,
    max_iter: usize,
    clamp: f64,
) -> LinkageParams {
    let k = init.m.len();
    let clip = |x: f64| x.max(clamp).min(1.0 - clamp);
    let mut m: Vec<f64> = init.m.iter().map(|&x| clip(x)).collect();
    let mut u: Vec<f64> = init.u.iter().map(|&x| clip(x)).collect();
    let mut p = clip(init.p);
    for _ in 0..max_iter {
        let mut g = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let mut mg = 1.0;
            let mut ug = 1.0;
            for v in 0..k {
                if pair.agrees(v) {
                    mg *= m[v];
                    ug *= u[v];
                } else {
                    mg *= 1.0 - m[v];
                    ug *= 1.0 - u[v];
                }
            }
            g.push(p * mg / (p * mg + (1.0 - p) * ug));
        }
        let sum_g: f64 = g.iter().sum();
        let sum_h: f64 = g.iter().map(|x| 1.0 - x).sum();
        let mut new_m = vec![0.0; k];
        let mut new_u = vec![0.0; k];
        for (pair, gj) in pairs.iter().zip(&g) {
            for v in 0..k {
                if pair.agrees(v) {
                    new_m[v] += gj;
                    new_u[v] += 1.0 - gj;
                }
            }
        }
        let new_m: Vec<f64> = new_m.iter().map(|x| clip(x / sum_g)).collect();
        let new_u: Vec<f64> = new_u.iter().map(|x| clip(x / sum_h)).collect();
        let new_p = clip(sum_g / pairs.len() as f64);
        let delta = m
            .iter()
            .zip(&new_m)
            .chain(u.iter().zip(&new_u))
            .map(|(a, b)| (a - b).abs())
            .fold((p - new_p).abs(), f64::max);
        m = new_m;
        u = new_u;
        p = new_p;
        if delta < tol {
            break;
        }
    }
    if m.iter().sum::<f64>() < u.iter().sum::<f64>() {
        std::mem::swap(&mut m, &mut u);
        p = 1.0 - p;
    }
    LinkageParams { m, u, p }
}

/// Explodes counts into one pattern per pair.
pub fn explode(counts: &PatternCounts) -> Vec<ComparisonPattern> {
    counts
        .iter()
        .flat_map(|(g, &c)| std::iter::repeat_n(*g, c as usize))
        .collect()
}

/// Mixture probability of one pattern by direct multiplication.
pub fn mixture_prob(params: &LinkageParams, g: &ComparisonPattern) -> f64 {
    let prod = |probs: &[f64]| {
        probs
            .iter()
            .enumerate()
            .map(|(v, &x)| if g.agrees(v) { x } else { 1.0 - x })
            .product::<f64>()
    };
    params.p * prod(&params.m) + (1.0 - params.p) * prod(&params.u)
}

/// Deterministic counts `round(total * Φ(γ))` for every pattern.
pub fn expected_counts(truth: &LinkageParams, total: f64) -> PatternCounts {
    let cells: Vec<u64> = enumerate_patterns(truth.k())
        .unwrap()
        .iter()
        .map(|g| (total * mixture_prob(truth, g)).round() as u64)
        .collect();
    PatternCounts::from_dense(truth.k(), &cells).unwrap()
}

/// Random labelled pairs: each pair is a match with probability `truth.p`
/// and draws its pattern from the corresponding component.
pub fn labelled_pairs<R: Rng>(truth: &LinkageParams, n: usize, rng: &mut R) -> Vec<(bool, ComparisonPattern)> {
    (0..n)
        .map(|_| {
            let is_match = rng.gen::<f64>() < truth.p;
            let probs = if is_match { &truth.m } else { &truth.u };
            let bits: Vec<u8> = probs.iter().map(|&x| (rng.gen::<f64>() < x) as u8).collect();
            (is_match, ComparisonPattern::from_bits(&bits).unwrap())
        })
        .collect()
}
