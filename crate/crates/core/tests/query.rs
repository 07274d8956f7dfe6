mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{compile_sql, labels};
use mbaqp_core::query::{
    choose_strategy, compile_filter, compile_predicate, Aggregate, BoolExpr, CmpOp, Expr, Literal, StrategyClass,
};
use mbaqp_core::{parse, Column, ColumnMeta, Condition, Interval, IntervalUnion, QueryError, QuerySpec, Table};

#[test]
fn parses_grouped_count() {
    let spec = parse("SELECT A, COUNT(*) FROM syn WHERE filter='1' GROUP BY A").unwrap();
    assert_eq!(
        spec,
        QuerySpec {
            aggregate: Aggregate::Count,
            target: None,
            table: "syn".into(),
            filter: Some(BoolExpr::pred("filter", CmpOp::Eq, Literal::Str("1".into()))),
            group_by: vec!["A".into()],
        }
    );
}

#[test]
fn parses_ungrouped_avg() {
    let spec = parse("SELECT AVG(distance) FROM flights WHERE unique_carrier='TW'").unwrap();
    assert_eq!(spec.aggregate, Aggregate::Avg);
    assert_eq!(spec.target, Some(Expr::column("distance")));
    assert_eq!(spec.filter, Some(BoolExpr::pred("unique_carrier", CmpOp::Eq, Literal::Str("TW".into()))));
    assert!(spec.group_by.is_empty());
}

#[test]
fn min_is_unsupported() {
    let err = parse("SELECT MIN(x) FROM t").unwrap_err();
    assert!(matches!(err, QueryError::UnsupportedAggregate { ref name, pos: 7 } if name == "MIN"), "{err:?}");
}

fn schema() -> Vec<ColumnMeta> {
    vec![
        ColumnMeta::discrete("d", labels(4)),
        ColumnMeta::discrete("e", vec!["x".into(), "y".into(), "z".into()]),
        ColumnMeta::continuous("c", 0.0, 5.0),
        ColumnMeta::continuous("salary", 0.0, 1e6),
    ]
}

fn predicate(sql_filter: &str) -> Condition {
    let spec = parse(&format!("SELECT COUNT(*) FROM t WHERE {sql_filter}")).unwrap();
    let BoolExpr::Pred(p) = spec.filter.unwrap() else { panic!() };
    let s = schema();
    let idx = s.iter().position(|m| m.name == p.column).unwrap();
    compile_predicate(&p, &s[idx]).unwrap()
}

#[test]
fn predicate_compilation() {
    assert_eq!(
        predicate("salary >= 500000"),
        Condition::interval(Interval::new(500_000.0, true, f64::INFINITY, false))
    );
    assert_eq!(predicate("d <> '2'"), Condition::codes([0, 2, 3]));
    assert_eq!(
        predicate("c > 2.5"),
        Condition::interval(Interval::new(2.5, false, f64::INFINITY, false))
    );
}

fn single_term(filter: &str) -> Vec<(i8, Vec<(usize, Condition)>)> {
    let spec = parse(&format!("SELECT COUNT(*) FROM t WHERE {filter}")).unwrap();
    compile_filter(spec.filter.as_ref().unwrap(), &schema())
        .unwrap()
        .terms
        .into_iter()
        .map(|t| (t.sign, t.conditions.iter().map(|(c, k)| (c, k.clone())).collect()))
        .collect()
}

#[test]
fn filter_expansion() {
    assert_eq!(
        single_term("c > 1 AND c <= 4"),
        vec![(1, vec![(2, Condition::interval(Interval::new(1.0, false, 4.0, true)))])]
    );
    assert_eq!(single_term("d = '1' OR d = '2'"), vec![(1, vec![(0, Condition::codes([0, 1]))])]);
    assert_eq!(
        single_term("d = '1' OR e = 'y'"),
        vec![
            (1, vec![(0, Condition::codes([0]))]),
            (1, vec![(1, Condition::codes([1]))]),
            (-1, vec![(0, Condition::codes([0])), (1, Condition::codes([1]))]),
        ]
    );
}

#[test]
fn strategy_classes() {
    let s = vec![
        ColumnMeta::continuous("a", 0.0, 1.0),
        ColumnMeta::continuous("b", 0.0, 1.0),
        ColumnMeta::discrete("c", labels(2)),
    ];
    let class = |sql: &str| choose_strategy(&compile_sql(sql, &s));
    assert_eq!(class("SELECT SUM(a - b) FROM t WHERE c = '1'"), StrategyClass::ProbabilityBased);
    assert_eq!(class("SELECT AVG(a * b) FROM t WHERE c = '1'"), StrategyClass::SampleBased);
    assert_eq!(class("SELECT COUNT(*) FROM t WHERE a > 0.5 OR c = '2'"), StrategyClass::ProbabilityBased);
    assert_eq!(class("SELECT COUNT(*) FROM t WHERE a = 0.5"), StrategyClass::SampleBased);
}

// --- randomized filters against a direct row-level evaluator -------------

#[derive(Debug, Clone)]
enum Tree {
    Pred(usize, &'static str, f64),
    And(Box<Tree>, Box<Tree>),
    Or(Box<Tree>, Box<Tree>),
}

const OPS: [&str; 6] = ["=", "<>", "<", "<=", ">", ">="];
const E_LABELS: [&str; 3] = ["x", "y", "z"];

fn random_tree(rng: &mut ChaCha8Rng, preds: usize) -> Tree {
    if preds == 1 {
        let col = rng.random_range(0..3);
        let op = match col {
            1 => OPS[rng.random_range(0..2)],
            _ => OPS[rng.random_range(0..6)],
        };
        let value = match col {
            0 => f64::from(rng.random_range(1..=4)),
            1 => f64::from(rng.random_range(0..3)),
            _ => f64::from(rng.random_range(0..=10)) / 2.0,
        };
        return Tree::Pred(col, op, value);
    }
    let left = rng.random_range(1..preds);
    let (a, b) = (Box::new(random_tree(rng, left)), Box::new(random_tree(rng, preds - left)));
    if rng.random_bool(0.5) {
        Tree::And(a, b)
    } else {
        Tree::Or(a, b)
    }
}

fn render(t: &Tree) -> String {
    match t {
        Tree::Pred(0, op, v) => format!("d {op} '{v}'"),
        Tree::Pred(1, op, v) => format!("e {op} '{}'", E_LABELS[*v as usize]),
        Tree::Pred(_, op, v) => format!("c {op} {v}"),
        Tree::And(a, b) => format!("({} AND {})", render(a), render(b)),
        Tree::Or(a, b) => format!("({} OR {})", render(a), render(b)),
    }
}

fn cmp(op: &str, x: f64, v: f64) -> bool {
    match op {
        "=" => x == v,
        "<>" => x != v,
        "<" => x < v,
        "<=" => x <= v,
        ">" => x > v,
        _ => x >= v,
    }
}

/// Row values: d as its numeric label, e as code, c as value.
fn eval(t: &Tree, d: f64, e: u32, c: f64) -> bool {
    match t {
        Tree::Pred(0, op, v) => cmp(op, d, *v),
        Tree::Pred(1, op, v) => cmp(op, f64::from(e), *v),
        Tree::Pred(_, op, v) => cmp(op, c, *v),
        Tree::And(a, b) => eval(a, d, e, c) && eval(b, d, e, c),
        Tree::Or(a, b) => eval(a, d, e, c) || eval(b, d, e, c),
    }
}

fn random_table(rng: &mut ChaCha8Rng, n: usize) -> Table {
    let d: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let e: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let c: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..=10)) / 2.0).collect();
    let sal: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1e6)).collect();
    Table::new(
        "t",
        schema(),
        vec![Column::Discrete(d), Column::Discrete(e), Column::Continuous(c), Column::Continuous(sal)],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn signed_terms_count_the_boolean_filter(seed in any::<u64>(), preds in 1usize..=4, n in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, n);
        let tree = random_tree(&mut rng, preds);
        let sql = format!("SELECT COUNT(*) FROM t WHERE {}", render(&tree));
        let q = compile_sql(&sql, table.schema());
        let terms = q.terms.as_ref().unwrap();

        let mut oracle = 0i64;
        let mut signed = 0i64;
        for i in 0..n {
            let row = table.row(i);
            let hit = eval(&tree, row[0] + 1.0, row[1] as u32, row[2]);
            oracle += i64::from(hit);
            prop_assert_eq!(q.matches(&row), hit, "{}", sql);
            signed += terms.terms.iter().filter(|t| t.conditions.matches_row(&row)).map(|t| i64::from(t.sign)).sum::<i64>();
        }
        prop_assert_eq!(signed, oracle, "{}", sql);
    }

    #[test]
    fn render_reparses_identically(seed in any::<u64>(), preds in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = ["*", "c", "c + salary", "c - (salary - 2)", "c * salary / 3", "abs(c - 1.5)", "-c", "max(c, 2) + log(salary)"]
            [rng.random_range(0..8)];
        let agg = if target == "*" { "COUNT" } else { ["SUM", "AVG", "COUNT"][rng.random_range(0..3)] };
        let target = if agg == "COUNT" { "*" } else { target };
        let group = ["", "d", "d, e"][rng.random_range(0..3)];
        let mut sql = format!("SELECT {}{agg}({target}) FROM t", if group.is_empty() { String::new() } else { format!("{group}, ") });
        if preds > 0 {
            sql += &format!(" WHERE {}", render(&random_tree(&mut rng, preds)));
        }
        if !group.is_empty() {
            sql += &format!(" GROUP BY {group}");
        }
        let spec = parse(&sql).unwrap();
        let rendered = spec.render();
        prop_assert_eq!(parse(&rendered).unwrap(), spec, "{} -> {}", sql, rendered);
    }

    #[test]
    fn interval_union_algebra(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random_union = |rng: &mut ChaCha8Rng| {
            let k = rng.random_range(0..4);
            IntervalUnion::from_intervals((0..k).map(|_| {
                let a = f64::from(rng.random_range(0..20)) / 2.0;
                let b = a + f64::from(rng.random_range(0..8)) / 2.0;
                Interval::new(a, rng.random_bool(0.5), b, rng.random_bool(0.5))
            }))
        };
        let (u, v) = (random_union(&mut rng), random_union(&mut rng));
        let (or, and) = (u.union(&v), u.intersect(&v));
        for set in [&u, &v, &or, &and] {
            // normalized: sorted, disjoint and non-touching
            for w in set.intervals().windows(2) {
                prop_assert!(w[0].hi < w[1].lo || (w[0].hi == w[1].lo && !w[0].hi_closed && !w[1].lo_closed));
            }
        }
        for i in -2..=50 {
            let x = f64::from(i) / 4.0;
            prop_assert_eq!(or.contains(x), u.contains(x) || v.contains(x), "x = {}", x);
            prop_assert_eq!(and.contains(x), u.contains(x) && v.contains(x), "x = {}", x);
        }
    }
}
