//! Drawing synthetic rows from a model: unconditioned, conditioned on a
//! filter, and per-group stratified allocation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::{Condition, ConditionSet};
use crate::infer::node_probability;
use crate::spn::{pick_weighted, ModelError, Node, Spn};

/// A batch of generated rows. Rows span the full schema width; discrete
/// cells hold codes and unmodeled columns hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub rows: Vec<Vec<f64>>,
    pub satisfied: ConditionSet,
    pub seed: u64,
}

/// A model whose sum weights have been re-weighted towards a condition set
/// and whose zero-probability branches have been removed.
#[derive(Debug, Clone)]
pub struct ConditionedSpn {
    spn: Spn,
    conditions: ConditionSet,
    probability: f64,
}

impl ConditionedSpn {
    /// The re-weighted network.
    pub fn spn(&self) -> &Spn {
        &self.spn
    }

    pub fn conditions(&self) -> &ConditionSet {
        &self.conditions
    }

    /// `P(cs)` under the original model.
    pub fn probability(&self) -> f64 {
        self.probability
    }
}

/// Replaces every sum weight `w_i` by `w_i · P_i(cs)` and renormalizes.
pub fn condition_weights(spn: &Spn, cs: &ConditionSet) -> Result<ConditionedSpn, ModelError> {
    let scope = spn.scope();
    if let Some(c) = cs.columns().find(|c| !scope.contains(c)) {
        return Err(ModelError::OutOfScope(
            spn.columns.get(c).map_or_else(|| format!("#{c}"), |m| m.name.clone()),
        ));
    }
    let (root, p) = reweight(&spn.root, cs).ok_or(ModelError::ZeroProbability)?;
    Ok(ConditionedSpn {
        spn: Spn {
            root,
            ..spn.clone_header()
        },
        conditions: cs.clone(),
        probability: p.clamp(0.0, 1.0),
    })
}

/// Returns the re-weighted subtree and its probability, or `None` when the
/// probability is zero.
fn reweight(node: &Node, cs: &ConditionSet) -> Option<(Node, f64)> {
    match node {
        Node::Discrete(_) | Node::Continuous(_) => {
            let p = node_probability(node, cs);
            (p > 0.0).then(|| (node.clone(), p))
        }
        Node::Product { children } => {
            let mut out = Vec::with_capacity(children.len());
            let mut p = 1.0;
            for c in children {
                let (n, cp) = reweight(c, cs)?;
                p *= cp;
                out.push(n);
            }
            (p > 0.0).then_some((Node::Product { children: out }, p))
        }
        Node::Sum { weights, children } => {
            let mut kept = Vec::with_capacity(children.len());
            let mut raw = Vec::with_capacity(children.len());
            for (w, c) in weights.iter().zip(children) {
                if let Some((n, cp)) = reweight(c, cs) {
                    let wp = w * cp;
                    if wp > 0.0 {
                        raw.push(wp);
                        kept.push(n);
                    }
                }
            }
            let total: f64 = raw.iter().sum();
            if total <= 0.0 {
                return None;
            }
            if kept.len() == 1 {
                return Some((kept.pop().expect("one child"), total));
            }
            let weights = raw.iter().map(|w| w / total).collect();
            Some((Node::Sum { weights, children: kept }, total))
        }
    }
}

/// Draws rows one at a time from a (possibly conditioned) model.
pub struct RowSampler<'a> {
    root: &'a Node,
    conditions: Option<&'a ConditionSet>,
    width: usize,
    rng: ChaCha8Rng,
}

impl<'a> RowSampler<'a> {
    /// Unconditioned sampler on stream `stream` of `seed`.
    pub fn random(spn: &'a Spn, seed: u64, stream: u64) -> Self {
        RowSampler {
            root: &spn.root,
            conditions: None,
            width: spn.columns.len(),
            rng: stream_rng(seed, stream),
        }
    }

    /// Sampler whose rows all satisfy the conditioning set.
    pub fn conditioned(c: &'a ConditionedSpn, seed: u64, stream: u64) -> Self {
        RowSampler {
            root: &c.spn.root,
            conditions: Some(&c.conditions),
            width: c.spn.columns.len(),
            rng: stream_rng(seed, stream),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Overwrites `row` with a fresh draw.
    pub fn fill(&mut self, row: &mut [f64]) {
        row.fill(f64::NAN);
        draw(self.root, self.conditions, &mut self.rng, row);
    }

    pub fn next_row(&mut self) -> Vec<f64> {
        let mut row = vec![f64::NAN; self.width];
        self.fill(&mut row);
        row
    }
}

/// Independent generator for stream `stream` of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn draw(node: &Node, cs: Option<&ConditionSet>, rng: &mut ChaCha8Rng, row: &mut [f64]) {
    match node {
        Node::Sum { weights, children } => {
            draw(&children[pick_weighted(weights, rng)], cs, rng, row)
        }
        Node::Product { children } => children.iter().for_each(|c| draw(c, cs, rng, row)),
        Node::Discrete(l) => {
            let set = match cs.and_then(|cs| cs.get(l.column)) {
                Some(Condition::DiscreteSet(s)) => Some(s),
                _ => None,
            };
            if let Some(code) = l.sample(set, rng) {
                row[l.column] = code as f64;
            }
        }
        Node::Continuous(l) => {
            let cond = match cs.and_then(|cs| cs.get(l.column())) {
                Some(Condition::IntervalUnion(u)) => Some(u),
                _ => None,
            };
            if let Some(x) = l.draw(cond, rng) {
                row[l.column()] = x;
            }
        }
    }
}

/// `n` unconditioned rows.
pub fn sample_random(spn: &Spn, n: usize, seed: u64) -> SampleBatch {
    let mut s = RowSampler::random(spn, seed, 0);
    SampleBatch {
        rows: (0..n).map(|_| s.next_row()).collect(),
        satisfied: ConditionSet::new(),
        seed,
    }
}

/// `n` rows drawn from the model conditioned on `cs`; no rejections.
pub fn sample_conditioned(spn: &Spn, cs: &ConditionSet, n: usize, seed: u64) -> Result<SampleBatch, ModelError> {
    let c = condition_weights(spn, cs)?;
    let mut s = RowSampler::conditioned(&c, seed, 0);
    Ok(SampleBatch {
        rows: (0..n).map(|_| s.next_row()).collect(),
        satisfied: cs.clone(),
        seed,
    })
}

/// Per-group sample counts for stratified sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratAllocation {
    pub per_group: Vec<(Vec<u32>, usize)>,
    pub budget: usize,
}

impl StratAllocation {
    pub fn total(&self) -> usize {
        self.per_group.iter().map(|(_, n)| n).sum()
    }
}

/// Even split of `budget` over the groups (remainder to the earliest
/// groups), capped per group, with cut-off samples redistributed evenly over
/// the groups still below their cap until nothing changes.
pub fn allocate_even_capped(caps: &[usize], budget: usize) -> Vec<usize> {
    let mut counts = vec![0usize; caps.len()];
    let mut remaining = budget;
    loop {
        let open: Vec<usize> = (0..caps.len()).filter(|&i| counts[i] < caps[i]).collect();
        if remaining == 0 || open.is_empty() {
            return counts;
        }
        let base = remaining / open.len();
        let extra = remaining % open.len();
        let mut cut = 0;
        for (rank, &i) in open.iter().enumerate() {
            let want = counts[i] + base + usize::from(rank < extra);
            counts[i] = want.min(caps[i]);
            cut += want - counts[i];
        }
        if cut == remaining {
            // every open group hit its cap without absorbing anything
            return counts;
        }
        remaining = cut;
    }
}

/// Allocates `budget` samples over `groups` (given as codes of
/// `group_cols`, in result order) capped at `round(P(E ∧ g) · |T|)`.
pub fn allocate_stratified(
    spn: &Spn,
    group_cols: &[usize],
    groups: &[Vec<u32>],
    filter: &ConditionSet,
    budget: usize,
) -> StratAllocation {
    let caps: Vec<usize> = groups
        .iter()
        .map(|codes| {
            let mut cs = filter.clone();
            for (&c, &code) in group_cols.iter().zip(codes) {
                cs.and_condition(c, Condition::codes([code]));
            }
            (node_probability(&spn.root, &cs) * spn.row_count as f64).round() as usize
        })
        .collect();
    let counts = allocate_even_capped(&caps, budget);
    StratAllocation {
        per_group: groups
            .iter()
            .cloned()
            .zip(counts)
            .filter(|(_, n)| *n > 0)
            .collect(),
        budget,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Random,
    Relevance,
    Stratified,
}

/// Scale-up factor for COUNT/SUM: `|T|/|S|`, `(|T|/|S|)·P(E)` or
/// `(|T|/|S(g)|)·P(E ∧ g)`. `probability` is ignored for random sampling.
pub fn multiplier(kind: SamplerKind, row_count: u64, samples: u64, probability: f64) -> Result<f64, ModelError> {
    if samples == 0 {
        return Err(ModelError::NoSamples);
    }
    let base = row_count as f64 / samples as f64;
    Ok(match kind {
        SamplerKind::Random => base,
        SamplerKind::Relevance | SamplerKind::Stratified => base * probability,
    })
}
