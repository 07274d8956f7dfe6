use std::path::{Path, PathBuf};

use mbaqp_bench::{
    builtin_query, derive_seed, flights_queries, gen_synthetic, run_workload, synthetic_queries, BenchError, Engine,
    SyntheticParams, Workload, WorkloadQuery,
};
use mbaqp_core::{learn, parse, LearnParams, Model};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

#[test]
fn builtin_queries_parse_and_round_trip() {
    let all: Vec<WorkloadQuery> = synthetic_queries().into_iter().chain(flights_queries()).collect();
    assert_eq!(all.len(), 26);
    for q in &all {
        let spec = parse(&q.sql).unwrap_or_else(|e| panic!("{}: {e}", q.id));
        assert_eq!(parse(&spec.render()).unwrap(), spec, "{}", q.id);
    }
    assert_eq!(builtin_query("s3.1").unwrap().sql, "SELECT COUNT(*) FROM syn WHERE filter='1' AND A='4'");
    assert!(builtin_query("F9.9").is_none());
}

#[test]
fn workload_file_defaults_and_validation() {
    let w = Workload::from_json(r#"{"queries": [{"id": "q", "sql": "SELECT COUNT(*) FROM syn"}]}"#).unwrap();
    assert_eq!(w.engines, Engine::ALL.to_vec());
    assert_eq!(w.stop.max_samples, 100_000);
    assert_eq!(w.repetitions, 10);

    let bad = [
        r#"{"queries": []}"#,
        r#"{"queries": [{"id": "q", "sql": "x"}, {"id": "q", "sql": "y"}]}"#,
        r#"{"queries": [{"id": "q", "sql": "x"}], "repetitions": 0}"#,
        r#"{"queries": [{"id": "q", "sql": "x"}], "engines": []}"#,
        r#"{"queries": [{"id": "q", "sql": "x"}], "engines": ["fast"]}"#,
    ];
    for text in bad {
        assert!(Workload::from_json(text).is_err(), "{text}");
    }
    let stop = r#"{"queries": [{"id": "q", "sql": "x"}], "stop": {"max_samples": 10, "emit_every": 20}}"#;
    assert!(Workload::from_json(stop).is_err());
}

#[test]
fn seeds_differ_across_cells() {
    let mut seen = std::collections::HashSet::new();
    for q in 0..10 {
        for c in 0..10 {
            for r in 0..10 {
                assert!(seen.insert(derive_seed(42, q, c, r)));
            }
        }
    }
    assert_eq!(derive_seed(1, 2, 3, 4), derive_seed(1, 2, 3, 4));
}

#[test]
fn bad_query_is_reported_by_id() {
    let table = gen_synthetic(&SyntheticParams::with_n(100, 0)).unwrap();
    let w = Workload {
        engines: vec![Engine::Online],
        ..Workload::new(vec![WorkloadQuery::new("broken", "SELECT MIN(B) FROM syn")])
    };
    assert!(matches!(run_workload(&table, &[], &w), Err(BenchError::Query { ref id, .. }) if id == "broken"));

    let w = Workload::new(vec![WorkloadQuery::new("q", "SELECT COUNT(*) FROM syn")]);
    assert!(matches!(run_workload(&table, &[], &w), Err(BenchError::Workload(_))));
}

fn tiny_report() -> mbaqp_bench::MetricsReport {
    let table = gen_synthetic(&SyntheticParams::with_n(5_000, 1)).unwrap();
    let model = Model::new(learn(&table, &LearnParams::default()).unwrap());
    let workload = Workload::load(&fixture("fixtures/tiny_workload.json")).unwrap();
    run_workload(&table, &[("spn".to_string(), model)], &workload).unwrap()
}

/// Compares against the checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn assert_golden(name: &str, actual: &str) {
    let path = fixture(&format!("golden/{name}"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from the golden file");
}

#[test]
fn tiny_workload_matches_golden_files() {
    let report = tiny_report().without_timing();
    assert_golden("tiny_runs.csv", &report.runs_csv(false));
    assert_golden("tiny_summary.csv", &report.summary_csv(false));

    // 4 queries · 5 engines · 2 repetitions, one model
    assert_eq!(report.runs.len(), 40);
    assert_eq!(report.summary.len(), 20);
    assert!(report.runs.iter().all(|r| r.elapsed_ms == 0.0));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(tiny_report).without_timing();
    let b = four.install(tiny_report).without_timing();
    assert_eq!(a, b);
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let report = tiny_report();
    report.write(dir.path(), false).unwrap();
    for f in ["runs.csv", "summary.csv", "report.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let trajectories = std::fs::read_dir(dir.path().join("trajectories")).unwrap().count();
    assert_eq!(trajectories, 20);
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert!(!runs.lines().next().unwrap().contains("elapsed_ms"));
}
