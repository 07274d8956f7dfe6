mod common;

use proptest::prelude::*;

use common::{compile_sql, fig2, labels, synthetic, RandomSpn};
use mbaqp_core::spn::DiscreteLeaf;
use mbaqp_core::{
    bin_missing, exact_query, exec_probability, exec_sample, learn, online_sample_query_batched, probability,
    AggregateResult, ColumnMeta, Condition, ConditionSet, ExecError, LearnParams, Model, Node, SamplerKind, Spn,
    StopRule, Strategy,
};

fn last(run: mbaqp_core::SampleExecution) -> AggregateResult {
    run.last().unwrap().unwrap()
}

#[test]
fn hand_model_count() {
    let spn = fig2();
    let q = compile_sql("SELECT COUNT(*) FROM people WHERE gender='female' AND salary >= 500000", &spn.columns);
    let r = exec_probability(&spn, &q).unwrap();
    // 1000 · (0.3·0.8·0.7 + 0.7·0.3·0.3)
    assert!((r.scalar().unwrap() - 231.0).abs() < 1e-9, "{:?}", r.scalar());
    assert_eq!(r.meta.strategy, Strategy::Probability);
}

#[test]
fn count_scales_probability_by_row_count() {
    let spn = Spn::new(
        "t",
        vec![ColumnMeta::discrete("x", labels(2))],
        1_000_000,
        Node::Discrete(DiscreteLeaf {
            column: 0,
            probs: vec![0.01, 0.99],
        }),
    );
    let q = compile_sql("SELECT COUNT(*) FROM t WHERE x='1'", &spn.columns);
    assert!((exec_probability(&spn, &q).unwrap().scalar().unwrap() - 10_000.0).abs() < 1e-6);
}

#[test]
fn signed_terms_add_up() {
    let spn = fig2();
    let count = |filter: &str| {
        let q = compile_sql(&format!("SELECT COUNT(*) FROM people WHERE {filter}"), &spn.columns);
        exec_probability(&spn, &q).unwrap().scalar().unwrap()
    };
    let (a, b) = ("gender='female'", "salary < 300000");
    let union = count(&format!("{a} OR {b}"));
    let expected = count(a) + count(b) - count(&format!("{a} AND {b}"));
    assert!((union - expected).abs() < 1e-9, "{union} vs {expected}");
}

#[test]
fn relevance_matches_probability_for_every_batch_size() {
    let spn = fig2();
    for sql in [
        "SELECT COUNT(*) FROM people WHERE gender='female' OR salary > 700000",
        "SELECT COUNT(*) FROM people WHERE salary > 200000 AND salary < 800000",
        "SELECT gender, COUNT(*) FROM people WHERE salary < 400000 OR salary > 900000 GROUP BY gender",
    ] {
        let q = compile_sql(sql, &spn.columns);
        let want = exec_probability(&spn, &q).unwrap();
        for emit in 1..=50 {
            let run = exec_sample(&spn, &q, SamplerKind::Relevance, &StopRule::new(100, emit), emit as u64, None).unwrap();
            assert_eq!(run.strategy(), Strategy::Relevance);
            for r in run {
                let r = r.unwrap();
                let bits = |a: &AggregateResult| a.groups.iter().map(|g| (g.key.clone(), g.value.to_bits())).collect::<Vec<_>>();
                if sql.contains("GROUP BY") {
                    // grouped counts are estimates; the total is the identity
                    let total: f64 = r.groups.iter().map(|g| g.value).sum();
                    let expected: f64 = want.groups.iter().map(|g| g.value).sum();
                    assert!((total - expected).abs() <= 1e-9 * expected, "{sql} emit {emit}");
                } else {
                    assert_eq!(bits(&r), bits(&want), "{sql} emit {emit}");
                }
            }
        }
    }
}

#[test]
fn grouped_relevance_count_is_unbiased() {
    let spn = fig2();
    let q = compile_sql("SELECT gender, COUNT(*) FROM people WHERE salary > 500000 GROUP BY gender", &spn.columns);
    let n = 500;
    let runs = 200;
    let p_filter = probability(&spn, &ConditionSet::single(1, Condition::interval(mbaqp_core::Interval::new(500_000.0, false, f64::INFINITY, false)))).unwrap();
    let total = p_filter * 1000.0;
    for (label, code) in [("female", 0), ("male", 1)] {
        let cs = ConditionSet::single(0, Condition::codes([code]))
            .with(1, Condition::interval(mbaqp_core::Interval::new(500_000.0, false, f64::INFINITY, false)));
        let q_g = probability(&spn, &cs).unwrap() / p_filter;
        let mean = (0..runs)
            .map(|seed| {
                let run = exec_sample(&spn, &q, SamplerKind::Relevance, &StopRule::new(n, n), seed, None).unwrap();
                last(run).get(&[label]).unwrap_or(0.0)
            })
            .sum::<f64>()
            / runs as f64;
        let se = total * (q_g * (1.0 - q_g) / (n * runs as usize) as f64).sqrt();
        assert!((mean - total * q_g).abs() < 3.0 * se, "{label}: {mean} vs {}", total * q_g);
    }
}

#[test]
fn stratified_covers_rare_groups_immediately() {
    let t = synthetic(100_000, 21);
    let spn = learn(&t, &LearnParams::default()).unwrap();
    for f in 1..=4 {
        let q = compile_sql(&format!("SELECT A, AVG(B) FROM syn WHERE filter='{f}' GROUP BY A"), t.schema());
        let truth = exact_query(&t, &q).unwrap();
        let mut run = exec_sample(&spn, &q, SamplerKind::Stratified, &StopRule::new(1_000, 200), f, None).unwrap();
        assert_eq!(run.strategy(), Strategy::Stratified);
        let first = run.next().unwrap().unwrap();
        assert_eq!(first.groups.len(), 5, "filter {f}");
        assert_eq!(bin_missing(&truth, &first).unwrap(), 0.0, "filter {f}");
        // per-stratum quotas round up: at most one extra row per stratum
        let strata = run.allocation().unwrap();
        assert!((200..=200 + strata.len() as u64).contains(&first.meta.samples_used), "{}", first.meta.samples_used);
        let total: usize = strata.iter().map(|(_, n)| n).sum();
        assert!(total <= 1_000);
        assert_eq!(last(run).meta.samples_used, total as u64);
    }
}

#[test]
fn relevance_beats_online_on_a_rare_average() {
    let t = synthetic(100_000, 22);
    let spn = learn(&t, &LearnParams::default()).unwrap();
    let q = compile_sql("SELECT AVG(B) FROM syn WHERE filter='4' AND A='4'", t.schema());
    let truth = exact_query(&t, &q).unwrap();
    let budget = 10_000;
    let mut relevance = 0.0;
    let mut online = 0.0;
    for seed in 0..5 {
        let r = last(exec_sample(&spn, &q, SamplerKind::Relevance, &StopRule::new(budget, budget), seed, None).unwrap());
        relevance += mbaqp_core::avg_rel_error(&truth, &r).unwrap() / 5.0;
        let o = online_sample_query_batched(&t, &q, budget, budget, seed).unwrap().last().unwrap().unwrap();
        // an empty online answer counts as a full miss
        online += if o.groups.is_empty() { 1.0 } else { mbaqp_core::avg_rel_error(&truth, &o).unwrap() } / 5.0;
    }
    assert!(relevance < 0.1, "relevance error {relevance}");
    assert!(online > 2.0 * relevance, "online {online} vs relevance {relevance}");
}

#[test]
fn executions_are_deterministic() {
    let spn = fig2();
    for (sql, kind) in [
        ("SELECT AVG(salary) FROM people WHERE gender='male'", SamplerKind::Relevance),
        ("SELECT gender, SUM(salary) FROM people WHERE salary > 100000 GROUP BY gender", SamplerKind::Stratified),
        ("SELECT COUNT(*) FROM people WHERE gender='female'", SamplerKind::Random),
    ] {
        let q = compile_sql(sql, &spn.columns);
        let run = |seed| {
            exec_sample(&spn, &q, kind, &StopRule::new(2_000, 300), seed, None)
                .unwrap()
                .map(|r| r.unwrap().groups)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7), "{sql}");
        assert_eq!(run(7).len(), 7, "{sql}");
    }
}

#[test]
fn stop_rule_validation() {
    let spn = fig2();
    let q = compile_sql("SELECT COUNT(*) FROM people", &spn.columns);
    let bad = [
        StopRule::new(0, 1),
        StopRule::new(10, 0),
        StopRule::new(10, 11),
        StopRule {
            target_avg_rel_error: Some(f64::NAN),
            ..StopRule::new(10, 5)
        },
        StopRule {
            target_avg_rel_error: Some(-0.1),
            ..StopRule::new(10, 5)
        },
    ];
    for stop in bad {
        assert!(matches!(stop.validate(), Err(ExecError::StopRule(_))), "{stop:?}");
        assert!(matches!(exec_sample(&spn, &q, SamplerKind::Random, &stop, 0, None), Err(ExecError::StopRule(_))));
    }
    assert!(StopRule::new(10, 10).validate().is_ok());
}

#[test]
fn accuracy_target_stops_early() {
    let spn = fig2();
    let q = compile_sql("SELECT COUNT(*) FROM people WHERE gender='female'", &spn.columns);
    let truth = exec_probability(&spn, &q).unwrap();
    let stop = StopRule {
        target_avg_rel_error: Some(0.5),
        ..StopRule::new(10_000, 100)
    };
    let emissions = exec_sample(&spn, &q, SamplerKind::Relevance, &stop, 1, Some(truth)).unwrap().count();
    assert_eq!(emissions, 1);
}

#[test]
fn model_handle_tags_results() {
    let model = Model::new(fig2());
    assert_eq!(model.id(), fig2().model_id());
    let spec = mbaqp_core::parse("SELECT COUNT(*) FROM people WHERE gender='male'").unwrap();
    let q = model.compile(&spec, &mbaqp_core::UdfRegistry::new()).unwrap();
    let r = model.probability(&q).unwrap();
    assert_eq!(r.meta.model_id.as_deref(), Some(model.id()));
    let s = last(model.sample(&q, SamplerKind::Relevance, &StopRule::new(100, 100), 3, None).unwrap());
    assert_eq!(s.meta.model_id.as_deref(), Some(model.id()));
    assert_eq!(s.meta.seed, Some(3));
}

#[test]
fn unsupported_probability_queries_are_rejected() {
    let spn = fig2();
    let q = compile_sql("SELECT AVG(salary * salary) FROM people", &spn.columns);
    assert!(matches!(exec_probability(&spn, &q), Err(ExecError::ProbabilityUnsupported(_))));
    // the sample-based path still answers it
    assert!(last(exec_sample(&spn, &q, SamplerKind::Relevance, &StopRule::new(100, 100), 0, None).unwrap()).scalar().is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn relevance_count_equals_probability_on_random_models(seed in any::<u64>(), mixed in any::<bool>(), emit in 1usize..60) {
        let mut g = RandomSpn::new(seed);
        let spn = g.spn(mixed, 25);
        let q = compile_sql("SELECT COUNT(*) FROM r WHERE d0 = 'a' OR d1 <> '2'", &spn.columns);
        let want = exec_probability(&spn, &q).unwrap();
        let run = exec_sample(&spn, &q, SamplerKind::Relevance, &StopRule::new(120, emit.min(120)), seed, None).unwrap();
        for r in run {
            let r = r.unwrap();
            prop_assert_eq!(r.scalar().map(f64::to_bits), want.scalar().map(f64::to_bits));
        }
    }
}
