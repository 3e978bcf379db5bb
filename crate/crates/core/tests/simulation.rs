use lfdse::simulation::{
    generate_capture, generate_pattern_sets, paper60, parse_scenarios, presets, replicate_rng, run_replicate,
    run_scenario, run_suite, table2, write_metrics_csv, write_scenarios, Scenario, CSV_HEADER,
};
use lfdse::sampling::{stream_rng, Purpose};
use lfdse::Error;
use proptest::prelude::*;

fn scenario(id: u32, n: u64, p: (f64, f64), m: &[f64], u: &[f64], reps: usize) -> Scenario {
    Scenario {
        id,
        n,
        p1: p.0,
        p2: p.1,
        m: m.to_vec(),
        u: u.to_vec(),
        reps,
        seed: 7,
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut suite: Vec<Scenario> = paper60(40, 99).into_iter().step_by(7).collect();
    suite.push(scenario(100, 150, (0.5, 0.5), &presets::M4_1, &presets::U4_1_R, 60));
    let one = run_suite(&suite, 1).unwrap();
    let eight = run_suite(&suite, 8).unwrap();
    assert_eq!(one.len(), suite.len());
    for (a, b) in one.iter().zip(&eight) {
        assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
    }
}

#[test]
fn replicates_are_reproducible() {
    let s = scenario(3, 1000, (0.5, 0.9), &presets::M6_1, &presets::U6_1, 1);
    for i in [0, 1, 17] {
        let a = run_replicate(&s, &mut replicate_rng(&s, i)).unwrap();
        let b = run_replicate(&s, &mut replicate_rng(&s, i)).unwrap();
        assert_eq!(a, b);
    }
    let a = run_replicate(&s, &mut replicate_rng(&s, 0)).unwrap();
    let b = run_replicate(&s, &mut replicate_rng(&s, 1)).unwrap();
    assert_ne!(a, b);
}

#[test]
fn overlap_count_has_the_binomial_mean() {
    let draws = 10_000;
    let mut rng = stream_rng(1, Purpose::SimulationReplicate, 0, 0);
    let total: u64 = (0..draws)
        .map(|_| generate_capture(1000, 0.7, 0.7, &mut rng).counts.n11)
        .sum();
    let mean = total as f64 / draws as f64;
    let se = (1000.0 * 0.49 * 0.51f64).sqrt() / (draws as f64).sqrt();
    assert!((mean - 490.0).abs() < 3.0 * se, "mean n11 {mean}");
}

#[test]
fn single_variable_agreement_rate_matches_m() {
    let mut rng = stream_rng(2, Purpose::SimulationReplicate, 0, 0);
    let draw = generate_capture(100_000, 1.0, 1.0, &mut rng);
    assert_eq!(draw.counts.n11, 100_000);
    let (matches, non_matches) = generate_pattern_sets(&draw, &[0.9], &[0.1], &mut rng).unwrap();
    let agree = matches.iter().filter(|(g, _)| g.agrees(0)).map(|(_, &c)| c).sum::<u64>() as f64;
    let fraction = agree / matches.total() as f64;
    let se = (0.9 * 0.1 / matches.total() as f64).sqrt();
    assert!((fraction - 0.9).abs() < 4.0 * se, "{fraction}");
    assert_eq!(non_matches.total(), draw.omega - draw.counts.n11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pattern_sets_conserve_pairs(n in 1u64..400, p1 in 0.05f64..1.0, p2 in 0.05f64..1.0, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, Purpose::SimulationReplicate, 0, 0);
        let draw = generate_capture(n, p1, p2, &mut rng);
        prop_assert!(draw.counts.n11 <= draw.counts.n1p.min(draw.counts.np1));
        prop_assert!(draw.counts.n1p + draw.counts.np1 - draw.counts.n11 <= n);
        let (matches, non_matches) = generate_pattern_sets(&draw, &presets::M4_1, &presets::U4_2, &mut rng).unwrap();
        prop_assert_eq!(matches.total(), draw.counts.n11);
        prop_assert_eq!(matches.total() + non_matches.total(), draw.omega);
    }

    #[test]
    fn scenario_files_round_trip(
        id in 1u32..1000,
        n in 1u64..100_000,
        p1 in 0.01f64..1.0,
        p2 in 0.01f64..1.0,
        mu in prop::collection::vec((0.5f64..0.999, 0.001f64..0.5), 1..8),
        reps in 1usize..100_000,
        seed in 0u64..(1 << 63),
    ) {
        let s = Scenario { id, n, p1, p2, m: mu.iter().map(|x| x.0).collect(), u: mu.iter().map(|x| x.1).collect(), reps, seed };
        let text = write_scenarios(std::slice::from_ref(&s)).unwrap();
        let back = parse_scenarios(&text, "roundtrip", 1, 0).unwrap();
        prop_assert_eq!(back, vec![s]);
    }
}

#[test]
fn published_scenarios_round_trip() {
    let suite = paper60(10_000, 42);
    let text = write_scenarios(&suite).unwrap();
    assert_eq!(parse_scenarios(&text, "paper60", 1, 0).unwrap(), suite);
    assert_eq!(table2(300, 1).len(), 12);
}

#[test]
fn scenario_file_defaults_and_errors() {
    let text = "[[scenario]]\nid = 5\nN = 150\np1 = 0.7\np2 = 0.9\nm = [0.9, 0.9]\nu = [0.1, 0.1]\n";
    let parsed = parse_scenarios(text, "one.toml", 123, 9).unwrap();
    assert_eq!(parsed[0].reps, 123);
    assert_eq!(parsed[0].seed, 9);

    let broken = "[[scenario]]\nid = 5\nN = 150\np1 = oops\n";
    match parse_scenarios(broken, "broken.toml", 1, 0) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let invalid = text.replace("p1 = 0.7", "p1 = 1.5");
    assert!(matches!(parse_scenarios(&invalid, "bad.toml", 1, 0), Err(Error::InvalidConfig(_))));

    let ragged = text.replace("u = [0.1, 0.1]", "u = [0.1]");
    assert!(matches!(parse_scenarios(&ragged, "bad.toml", 1, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn metrics_satisfy_the_rrmse_identity() {
    let rows = run_suite(&paper60(200, 5)[..6], 4).unwrap();
    for row in rows {
        let r = row.unwrap();
        for (rb, rse, rrmse) in [(r.rb_dse, r.rse_dse, r.rrmse_dse), (r.rb_lfdse, r.rse_lfdse, r.rrmse_lfdse)] {
            assert!((rrmse * rrmse - (rse * rse + rb * rb)).abs() < 1e-9 * rrmse.max(1.0).powi(2));
        }
        assert!((r.se_ratio - r.rse_lfdse / r.rse_dse).abs() < 1e-12);
        assert_eq!(r.reps_used + r.failures, 200);
    }
}

#[test]
fn strong_identifiers_make_the_estimators_agree() {
    // m all 0.9, u all 0.005, N=1000, both coverages 0.7.
    let s = paper60(1000, 3).into_iter().nth(56).unwrap();
    assert_eq!((s.n, s.p1, s.p2), (1000, 0.7, 0.7));
    let row = run_scenario(&s).unwrap();
    assert!((row.mean_lfdse - 1000.0).abs() < 10.0, "{}", row.mean_lfdse);
    assert!((row.se_ratio - 1.0).abs() < 0.05, "{}", row.se_ratio);
}

#[test]
fn small_population_with_strong_identifiers() {
    let s = paper60(2000, 8).into_iter().nth(57).unwrap();
    assert_eq!(s.n, 150);
    let row = run_scenario(&s).unwrap();
    assert!((row.rse_dse - 3.56).abs() < 0.3, "{}", row.rse_dse);
    assert!((row.rse_lfdse - 3.59).abs() < 0.3, "{}", row.rse_lfdse);
    assert!((row.se_ratio - 1.01).abs() < 0.05, "{}", row.se_ratio);
    assert!(row.eps.unwrap_or(0.0) < 1.5, "{:?}", row.eps);
}

#[test]
fn scenario_without_any_overlap_fails() {
    let s = scenario(9, 1, (0.01, 0.01), &[0.9], &[0.1], 5);
    assert!(matches!(run_scenario(&s), Err(Error::ScenarioFailure { id: 9, reps: 5 })));
}

#[test]
fn failed_rows_print_as_na() {
    let ok = scenario(1, 1000, (0.7, 0.7), &presets::M6_2, &presets::U6_4, 20);
    let bad = scenario(2, 1, (0.01, 0.01), &[0.9], &[0.1], 3);
    let rows = run_suite(&[ok.clone(), bad.clone()], 2).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &[ok, bad], &rows).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(&records[0][4], "0.9 0.9 0.9 0.9 0.9 0.9");
    assert_ne!(&records[0][6], "NA");
    assert_eq!(&records[1][6], "NA");
    assert_eq!(&records[1][15], "3");
}
