#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use mbaqp_core::spn::{ContinuousLeaf, DiscreteLeaf};
use mbaqp_core::{
    compile, parse, Column, ColumnMeta, CompiledQuery, Condition, ConditionSet, Interval, IntervalUnion, Node, Spn,
    Table, UdfRegistry,
};

pub fn compile_sql(sql: &str, schema: &[ColumnMeta]) -> CompiledQuery {
    let spec = parse(sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
    compile(&spec, schema, &UdfRegistry::new()).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

pub fn labels(k: usize) -> Vec<String> {
    (1..=k).map(|i| i.to_string()).collect()
}

/// Two sub-populations over (gender, salary): weights 0.3/0.7,
/// P(female) = 0.8/0.3, P(salary ∈ [500k, 1m]) = 0.7/0.3.
pub fn fig2() -> Spn {
    let columns = vec![
        ColumnMeta::discrete("gender", vec!["female".into(), "male".into()]),
        ColumnMeta::continuous("salary", 0.0, 1_000_000.0),
    ];
    let salary = |lower: f64, upper: f64| {
        let mid = 1e-6;
        Node::Continuous(ContinuousLeaf::from_parts(
            1,
            vec![0.0, 500_000.0, 1_000_000.0],
            vec![2.0 * lower / 500_000.0 - mid, mid, 2.0 * upper / 500_000.0 - mid],
            vec![100_000.0, 300_000.0, 600_000.0, 900_000.0],
        ))
    };
    let gender = |female: f64| {
        Node::Discrete(DiscreteLeaf {
            column: 0,
            probs: vec![female, 1.0 - female],
        })
    };
    Spn::new(
        "people",
        columns,
        1000,
        Node::sum(
            vec![0.3, 0.7],
            vec![
                Node::product(vec![gender(0.8), salary(0.3, 0.7)]),
                Node::product(vec![gender(0.3), salary(0.7, 0.3)]),
            ],
        ),
    )
}

pub const A_GIVEN_FILTER: [[f64; 5]; 4] = [
    [0.2, 0.2, 0.2, 0.2, 0.2],
    [0.70, 0.20, 0.06, 0.03, 0.01],
    [0.90, 0.06, 0.03, 0.009, 0.001],
    [0.99, 0.006, 0.003, 0.0009, 0.0001],
];

/// `filter` uniform on 1..4, `A | filter` from [`A_GIVEN_FILTER`],
/// `B | A = a` ~ N(90 + 10a, 20).
pub fn synthetic(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut f, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let fi = rng.random_range(0..4usize);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut ai = 4;
        for (k, p) in A_GIVEN_FILTER[fi].iter().enumerate() {
            acc += p;
            if u < acc {
                ai = k;
                break;
            }
        }
        let mean = 100.0 + 10.0 * ai as f64;
        f.push(fi as u32);
        a.push(ai as u32);
        b.push(Normal::new(mean, 20.0).unwrap().sample(&mut rng));
    }
    Table::new(
        "syn",
        vec![
            ColumnMeta::discrete("filter", labels(4)),
            ColumnMeta::discrete("A", labels(5)),
            ColumnMeta::continuous("B", 0.0, 0.0),
        ],
        vec![Column::Discrete(f), Column::Discrete(a), Column::Continuous(b)],
    )
    .unwrap()
}

pub const CONT_LO: f64 = 0.0;
pub const CONT_HI: f64 = 10.0;

/// Random valid networks over up to three discrete columns and optionally
/// one continuous column.
pub struct RandomSpn {
    pub rng: ChaCha8Rng,
    pub columns: Vec<ColumnMeta>,
}

impl RandomSpn {
    pub fn new(seed: u64) -> Self {
        RandomSpn {
            rng: ChaCha8Rng::seed_from_u64(seed),
            columns: Vec::new(),
        }
    }

    fn leaf(&mut self, col: usize) -> Node {
        if self.columns[col].is_discrete() {
            let k = self.columns[col].domain_len();
            let mut probs: Vec<f64> = (0..k).map(|_| self.rng.random_range(0.05..1.0)).collect();
            if self.rng.random_bool(0.2) {
                let z = self.rng.random_range(0..k);
                probs[z] = 0.0;
            }
            let s: f64 = probs.iter().sum();
            Node::Discrete(DiscreteLeaf {
                column: col,
                probs: probs.into_iter().map(|p| p / s).collect(),
            })
        } else {
            let k = self.rng.random_range(2..=5);
            let mut breaks: Vec<f64> = (0..k).map(|_| self.rng.random_range(CONT_LO..CONT_HI)).collect();
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            if breaks.len() < 2 {
                breaks = vec![CONT_LO, CONT_HI];
            }
            let dens: Vec<f64> = breaks.iter().map(|_| self.rng.random_range(0.01..1.0)).collect();
            let mass = segment_mass(&breaks, &dens, f64::NEG_INFINITY, f64::INFINITY);
            let (lo, hi) = (breaks[0], breaks[breaks.len() - 1]);
            let sample = (0..8).map(|_| self.rng.random_range(lo..=hi)).collect();
            Node::Continuous(ContinuousLeaf::from_parts(
                col,
                breaks,
                dens.into_iter().map(|d| d / mass).collect(),
                sample,
            ))
        }
    }

    fn weights(&mut self, n: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| self.rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    fn node(&mut self, scope: &[usize], depth: usize) -> Node {
        if scope.len() == 1 {
            if depth < 3 && self.rng.random_bool(0.3) {
                let n = self.rng.random_range(2..=3);
                let w = self.weights(n);
                return Node::sum(w, (0..n).map(|_| self.leaf(scope[0])).collect());
            }
            return self.leaf(scope[0]);
        }
        if depth < 3 && self.rng.random_bool(0.5) {
            let w = self.weights(2);
            return Node::sum(w, vec![self.node(scope, depth + 1), self.node(scope, depth + 1)]);
        }
        let mut cols = scope.to_vec();
        cols.shuffle(&mut self.rng);
        let parts = self.rng.random_range(2..=cols.len());
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); parts];
        for (i, c) in cols.into_iter().enumerate() {
            let g = if i < parts { i } else { self.rng.random_range(0..parts) };
            groups[g].push(c);
        }
        Node::product(groups.iter().map(|g| self.node(g, depth + 1)).collect())
    }

    /// A network with at most `max_nodes` nodes.
    pub fn spn(&mut self, mixed: bool, max_nodes: usize) -> Spn {
        let mut columns = vec![
            ColumnMeta::discrete("d0", vec!["a".into(), "b".into()]),
            ColumnMeta::discrete("d1", labels(3)),
            ColumnMeta::discrete("d2", vec!["w".into(), "x".into(), "y".into(), "z".into()]),
        ];
        if mixed {
            columns.push(ColumnMeta::continuous("x", CONT_LO, CONT_HI));
        }
        self.columns = columns;
        let scope: Vec<usize> = (0..self.columns.len()).collect();
        loop {
            let root = self.node(&scope, 0);
            if root.node_count() <= max_nodes {
                return Spn::new("fuzz", self.columns.clone(), 100, root);
            }
        }
    }

    pub fn condition(&mut self, col: usize) -> Condition {
        if self.columns[col].is_discrete() {
            let k = self.columns[col].domain_len() as u32;
            Condition::codes((0..k).filter(|_| self.rng.random_bool(0.6)))
        } else {
            let mut a = self.rng.random_range(CONT_LO - 1.0..CONT_HI + 1.0);
            let mut b = self.rng.random_range(CONT_LO - 1.0..CONT_HI + 1.0);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if self.rng.random_bool(0.3) {
                let m = (a + b) / 2.0;
                let gap = (b - a) / 4.0;
                Condition::IntervalUnion(IntervalUnion::from_intervals([
                    Interval::new(a, self.rng.random_bool(0.5), m - gap, self.rng.random_bool(0.5)),
                    Interval::new(m + gap, self.rng.random_bool(0.5), b, self.rng.random_bool(0.5)),
                ]))
            } else {
                Condition::interval(Interval::new(a, self.rng.random_bool(0.5), b, self.rng.random_bool(0.5)))
            }
        }
    }

    pub fn condition_set(&mut self) -> ConditionSet {
        let mut cs = ConditionSet::new();
        for c in 0..self.columns.len() {
            if self.rng.random_bool(0.5) {
                let cond = self.condition(c);
                cs.and_condition(c, cond);
            }
        }
        cs
    }
}

/// Integral of a piecewise-linear density over `[lo, hi]`.
pub fn segment_mass(breaks: &[f64], dens: &[f64], lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    for i in 1..breaks.len() {
        let (x0, x1) = (breaks[i - 1], breaks[i]);
        let (a, b) = (lo.max(x0), hi.min(x1));
        if a < b {
            let f = |x: f64| dens[i - 1] + (dens[i] - dens[i - 1]) * (x - x0) / (x1 - x0);
            total += 0.5 * (f(a) + f(b)) * (b - a);
        }
    }
    total
}

fn eval_at(node: &Node, x: &[u32], cs: &ConditionSet) -> f64 {
    match node {
        Node::Discrete(l) => l.probs[x[l.column] as usize],
        Node::Continuous(l) => match cs.get(l.column()) {
            None => 1.0,
            Some(Condition::IntervalUnion(u)) => u
                .intervals()
                .iter()
                .map(|iv| segment_mass(l.breaks(), l.densities(), iv.lo, iv.hi))
                .sum(),
            Some(Condition::DiscreteSet(_)) => panic!("value set on a continuous column"),
        },
        Node::Product { children } => children.iter().map(|c| eval_at(c, x, cs)).product(),
        Node::Sum { weights, children } => weights.iter().zip(children).map(|(w, c)| w * eval_at(c, x, cs)).sum(),
    }
}

/// `P(cs)` by enumerating every assignment of the discrete columns.
pub fn brute_force(spn: &Spn, cs: &ConditionSet) -> f64 {
    let discrete: Vec<usize> = (0..spn.columns.len()).filter(|&c| spn.columns[c].is_discrete()).collect();
    let mut x = vec![0u32; spn.columns.len()];
    let mut total = 0.0;
    loop {
        let admitted = discrete.iter().all(|&c| match cs.get(c) {
            Some(Condition::DiscreteSet(set)) => set.contains(x[c]),
            _ => true,
        });
        if admitted {
            total += eval_at(&spn.root, &x, cs);
        }
        let mut i = 0;
        loop {
            if i == discrete.len() {
                return total;
            }
            let c = discrete[i];
            x[c] += 1;
            if (x[c] as usize) < spn.columns[c].domain_len() {
                break;
            }
            x[c] = 0;
            i += 1;
        }
    }
}
