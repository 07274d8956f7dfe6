//! Model-based query execution: closed-form answers from probabilities and
//! progressive answers from generated rows.

use std::borrow::Cow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::condition::{Condition, ConditionSet};
use crate::exact::{labels, GroupAccumulator};
use crate::infer::{column_moment_with, group_probabilities, node_probability, numeric_values};
use crate::metrics::{avg_rel_error, bin_missing};
use crate::query::{compile, Aggregate, CompiledQuery, QueryError, QuerySpec, SignedConditionSets, UdfRegistry};
use crate::result::{AggregateResult, ExecError, GroupValue, ResultMeta, Strategy};
use crate::sample::{allocate_stratified, condition_weights, draw, stream_rng, ConditionedSpn, SamplerKind};
use crate::spn::{ModelError, Spn};

/// When a progressive sample-based execution stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Total number of generated rows.
    pub max_samples: usize,
    /// Rows generated between emissions.
    pub emit_every: usize,
    /// Stop early once every true group is present and the average relative
    /// error against the supplied ground truth is at most this.
    #[serde(default)]
    pub target_avg_rel_error: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_samples: 10_000,
            emit_every: 1_000,
            target_avg_rel_error: None,
        }
    }
}

impl StopRule {
    pub fn new(max_samples: usize, emit_every: usize) -> Self {
        StopRule {
            max_samples,
            emit_every,
            target_avg_rel_error: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.max_samples == 0 {
            return Err(ExecError::StopRule("max_samples must be at least 1".into()));
        }
        if self.emit_every == 0 {
            return Err(ExecError::StopRule("emit_every must be at least 1".into()));
        }
        if self.emit_every > self.max_samples {
            return Err(ExecError::StopRule(format!(
                "emit_every ({}) must not exceed max_samples ({})",
                self.emit_every, self.max_samples
            )));
        }
        if let Some(t) = self.target_avg_rel_error {
            if !(t.is_finite() && t >= 0.0) {
                return Err(ExecError::StopRule(format!(
                    "target_avg_rel_error must be a non-negative number, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// The model restricted to the columns a query touches.
fn working_model<'a>(spn: &'a Spn, query: &CompiledQuery) -> Result<Cow<'a, Spn>, ModelError> {
    if query.used_columns.is_empty() || query.used_columns == spn.scope() {
        return Ok(Cow::Borrowed(spn));
    }
    Ok(Cow::Owned(spn.marginalize(&query.used_columns)?))
}

fn with_group(cs: &ConditionSet, group_cols: &[usize], codes: &[u32]) -> ConditionSet {
    let mut out = cs.clone();
    for (&c, &code) in group_cols.iter().zip(codes) {
        out.and_condition(c, Condition::codes([code]));
    }
    out
}

/// Answers a query in closed form from the model's probabilities and
/// expectations: `COUNT = P·|T|`, `SUM = E·P·|T|`, `AVG = E`, summed over
/// the signed conjunctions of the filter.
pub fn exec_probability(spn: &Spn, query: &CompiledQuery) -> Result<AggregateResult, ExecError> {
    let start = Instant::now();
    if let Some(reason) = query.probability_blocker() {
        return Err(ExecError::ProbabilityUnsupported(reason));
    }
    let terms = query.terms.as_ref().map_err(|e| ExecError::Query(e.clone()))?;
    let model = working_model(spn, query)?;
    let m: &Spn = &model;
    let t = spn.row_count as f64;
    let values = numeric_values(m);

    let mut keys: Vec<Vec<u32>> = if query.group_cols.is_empty() {
        vec![Vec::new()]
    } else {
        let mut all = Vec::new();
        for term in terms.terms.iter().filter(|t| t.sign > 0) {
            all.extend(
                group_probabilities(m, &query.group_cols, &term.conditions)?
                    .into_iter()
                    .map(|(k, _)| k),
            );
        }
        all.sort();
        all.dedup();
        all
    };
    if terms.terms.is_empty() {
        keys.clear();
    }

    let linear = query.linear.as_ref();
    let mut groups = Vec::with_capacity(keys.len());
    for key in keys {
        let mut mass = 0.0;
        let mut value = 0.0;
        for term in &terms.terms {
            let cs = with_group(&term.conditions, &query.group_cols, &key);
            let sign = f64::from(term.sign);
            let p = node_probability(&m.root, &cs).clamp(0.0, 1.0);
            mass += sign * p;
            match query.aggregate() {
                Aggregate::Count => value += sign * p * t,
                Aggregate::Sum => {
                    let form = linear.expect("SUM target is linear");
                    let mut e = form.constant * p;
                    for (&col, &coef) in &form.coefficients {
                        e += coef * column_moment_with(m, col, &cs, &values)?.0;
                    }
                    value += sign * e * t;
                }
                Aggregate::Avg => {
                    if p <= 0.0 {
                        continue;
                    }
                    let form = linear.expect("AVG target is linear");
                    let mut e = form.constant;
                    for (&col, &coef) in &form.coefficients {
                        let (mom, pc) = column_moment_with(m, col, &cs, &values)?;
                        e += coef * (mom / pc);
                    }
                    value += e;
                }
            }
        }
        if mass > 0.0 {
            groups.push(GroupValue {
                key: labels(&m.columns, &query.group_cols, &key),
                value,
            });
        }
    }
    let mut meta = ResultMeta::new(Strategy::Probability);
    meta.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(AggregateResult::from_groups(groups, meta))
}

/// The sampler used when the caller does not pick one: stratified for
/// grouped queries, relevance otherwise.
pub fn default_sampler(query: &CompiledQuery) -> SamplerKind {
    if query.group_cols.is_empty() {
        SamplerKind::Relevance
    } else {
        SamplerKind::Stratified
    }
}

/// The sampler actually used for a requested kind. Relevance sampling needs
/// the filter as conjunctions without continuous equalities (and a single
/// conjunction for AVG); stratified sampling additionally needs a grouped
/// query over a single conjunction. Otherwise the next simpler sampler runs.
pub fn effective_sampler(query: &CompiledQuery, requested: SamplerKind) -> SamplerKind {
    let terms = match &query.terms {
        Ok(t) if !t.has_point() => t,
        _ => return SamplerKind::Random,
    };
    let relevance_ok = query.aggregate() != Aggregate::Avg || terms.single().is_some() || terms.terms.is_empty();
    match requested {
        SamplerKind::Random => SamplerKind::Random,
        SamplerKind::Relevance if relevance_ok => SamplerKind::Relevance,
        SamplerKind::Relevance => SamplerKind::Random,
        SamplerKind::Stratified if !query.group_cols.is_empty() && terms.single().is_some() => {
            SamplerKind::Stratified
        }
        SamplerKind::Stratified => effective_sampler(query, SamplerKind::Relevance),
    }
}

struct TermSource {
    sign: f64,
    cond: ConditionedSpn,
    rng: rand_chacha::ChaCha8Rng,
    drawn: u64,
    acc: GroupAccumulator,
}

struct Stratum {
    key: Vec<u32>,
    cond: ConditionedSpn,
    rng: rand_chacha::ChaCha8Rng,
    alloc: usize,
    drawn: u64,
    acc: GroupAccumulator,
}

enum Source {
    Random {
        spn: Spn,
        rng: rand_chacha::ChaCha8Rng,
        drawn: u64,
        acc: GroupAccumulator,
    },
    Terms(Vec<TermSource>),
    Strata(Vec<Stratum>),
    /// The filter has zero probability: one empty emission.
    Empty,
}

/// Progressive sample-based execution. Each item is the estimate after one
/// more batch of generated rows; the iterator ends when the stop rule is met.
pub struct SampleExecution {
    query: CompiledQuery,
    columns: Vec<crate::schema::ColumnMeta>,
    row_count: f64,
    source: Source,
    stop: StopRule,
    truth: Option<AggregateResult>,
    strategy: Strategy,
    seed: u64,
    model_id: Option<String>,
    start: Instant,
    round: usize,
    row: Vec<f64>,
    done: bool,
}

/// Starts a sample-based execution. `truth`, when given, enables the
/// accuracy-based stop rule.
pub fn exec_sample(
    spn: &Spn,
    query: &CompiledQuery,
    kind: SamplerKind,
    stop: &StopRule,
    seed: u64,
    truth: Option<AggregateResult>,
) -> Result<SampleExecution, ExecError> {
    let start = Instant::now();
    stop.validate()?;
    let model = working_model(spn, query)?.into_owned();
    let kind = effective_sampler(query, kind);
    let (source, strategy) = match kind {
        SamplerKind::Random => (
            Source::Random {
                spn: model,
                rng: stream_rng(seed, 0),
                drawn: 0,
                acc: GroupAccumulator::new(),
            },
            Strategy::Random,
        ),
        SamplerKind::Relevance => {
            let terms = query.terms.as_ref().expect("checked by effective_sampler");
            (relevance_source(&model, terms, seed)?, Strategy::Relevance)
        }
        SamplerKind::Stratified => {
            let terms = query.terms.as_ref().expect("checked by effective_sampler");
            let cs = terms.single().expect("checked by effective_sampler");
            (stratified_source(&model, query, cs, stop.max_samples, seed)?, Strategy::Stratified)
        }
    };
    Ok(SampleExecution {
        query: query.clone(),
        columns: spn.columns.clone(),
        row_count: spn.row_count as f64,
        source,
        stop: stop.clone(),
        truth,
        strategy,
        seed,
        model_id: None,
        start,
        round: 0,
        row: vec![f64::NAN; spn.columns.len()],
        done: false,
    })
}

fn relevance_source(model: &Spn, terms: &SignedConditionSets, seed: u64) -> Result<Source, ExecError> {
    let mut sources = Vec::new();
    for (i, term) in terms.terms.iter().enumerate() {
        match condition_weights(model, &term.conditions) {
            Ok(cond) => sources.push(TermSource {
                sign: f64::from(term.sign),
                cond,
                rng: stream_rng(seed, i as u64),
                drawn: 0,
                acc: GroupAccumulator::new(),
            }),
            Err(ModelError::ZeroProbability) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if sources.iter().all(|s| s.sign < 0.0) {
        return Ok(Source::Empty);
    }
    Ok(Source::Terms(sources))
}

fn stratified_source(
    model: &Spn,
    query: &CompiledQuery,
    cs: &ConditionSet,
    budget: usize,
    seed: u64,
) -> Result<Source, ExecError> {
    let groups: Vec<Vec<u32>> = group_probabilities(model, &query.group_cols, cs)?
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let alloc = allocate_stratified(model, &query.group_cols, &groups, cs, budget);
    let mut strata = Vec::with_capacity(alloc.per_group.len());
    for (i, (key, n)) in alloc.per_group.into_iter().enumerate() {
        let gcs = with_group(cs, &query.group_cols, &key);
        match condition_weights(model, &gcs) {
            Ok(cond) => strata.push(Stratum {
                key,
                cond,
                rng: stream_rng(seed, i as u64),
                alloc: n,
                drawn: 0,
                acc: GroupAccumulator::new(),
            }),
            Err(ModelError::ZeroProbability) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if strata.is_empty() {
        return Ok(Source::Empty);
    }
    Ok(Source::Strata(strata))
}

impl SampleExecution {
    /// The strategy actually in use after any fallback.
    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn set_model_id(&mut self, id: String) {
        self.model_id = Some(id);
    }

    /// Planned per-group sample counts (stratified sampling only), as labels.
    pub fn allocation(&self) -> Option<Vec<(Vec<String>, usize)>> {
        match &self.source {
            Source::Strata(s) => Some(
                s.iter()
                    .map(|st| (labels(&self.columns, &self.query.group_cols, &st.key), st.alloc))
                    .collect(),
            ),
            _ => None,
        }
    }

    fn samples_used(&self) -> u64 {
        match &self.source {
            Source::Random { drawn, .. } => *drawn,
            Source::Terms(t) => t.iter().map(|s| s.drawn).sum(),
            Source::Strata(s) => s.iter().map(|s| s.drawn).sum(),
            Source::Empty => 0,
        }
    }

    fn exhausted(&self) -> bool {
        match &self.source {
            Source::Strata(s) => s.iter().all(|st| st.drawn as usize >= st.alloc),
            Source::Empty => true,
            _ => self.samples_used() as usize >= self.stop.max_samples,
        }
    }

    /// Generates one more batch.
    fn advance(&mut self) -> Result<(), ExecError> {
        self.round += 1;
        let q = &self.query;
        let row = &mut self.row;
        let max = self.stop.max_samples;
        match &mut self.source {
            Source::Random { spn, rng, drawn, acc } => {
                let n = self.stop.emit_every.min(max - *drawn as usize);
                for _ in 0..n {
                    row.fill(f64::NAN);
                    draw(&spn.root, None, rng, row);
                    *drawn += 1;
                    if q.matches(row) {
                        acc.add_row(q, row)?;
                    }
                }
            }
            Source::Terms(sources) => {
                let used: usize = sources.iter().map(|s| s.drawn as usize).sum();
                let batch = self.stop.emit_every.min(max - used);
                let k = sources.len();
                for (i, s) in sources.iter_mut().enumerate() {
                    // every term contributes to every emission
                    let n = (batch / k + usize::from(i < batch % k)).max(1);
                    let root = &s.cond.spn().root;
                    let cs = s.cond.conditions();
                    for _ in 0..n {
                        row.fill(f64::NAN);
                        draw(root, Some(cs), &mut s.rng, row);
                        s.drawn += 1;
                        debug_assert!(cs.matches_row(row));
                        s.acc.add_row(q, row)?;
                    }
                }
            }
            Source::Strata(strata) => {
                let cumulative = (self.round * self.stop.emit_every).min(max);
                for st in strata.iter_mut() {
                    let quota = (st.alloc * cumulative).div_ceil(max).min(st.alloc);
                    let root = &st.cond.spn().root;
                    let cs = st.cond.conditions();
                    while (st.drawn as usize) < quota {
                        row.fill(f64::NAN);
                        draw(root, Some(cs), &mut st.rng, row);
                        st.drawn += 1;
                        debug_assert!(cs.matches_row(row));
                        st.acc.add_row(q, row)?;
                    }
                }
            }
            Source::Empty => {}
        }
        Ok(())
    }

    fn snapshot(&self) -> AggregateResult {
        let agg = self.query.aggregate();
        let t = self.row_count;
        let mut meta = ResultMeta::new(self.strategy);
        meta.samples_used = self.samples_used();
        meta.seed = Some(self.seed);
        meta.model_id = self.model_id.clone();
        let gc = &self.query.group_cols;
        let mut result = match &self.source {
            Source::Random { drawn, acc, .. } => {
                let mut acc = acc.clone();
                if gc.is_empty() && agg == Aggregate::Count {
                    acc.touch(Vec::new());
                }
                let scale = if *drawn == 0 { 0.0 } else { t / *drawn as f64 };
                acc.finish(&self.columns, gc, meta, |_, s| match agg {
                    Aggregate::Count => Some(s.count as f64 * scale),
                    _ if s.count == 0 => None,
                    Aggregate::Sum => Some(s.sum.value() * scale),
                    Aggregate::Avg => Some(s.sum.value() / s.count as f64),
                })
            }
            Source::Terms(sources) => {
                let mut per_key: Vec<(Vec<u32>, f64)> = Vec::new();
                let mut index: std::collections::HashMap<Vec<u32>, usize> = Default::default();
                for s in sources {
                    if s.drawn == 0 {
                        continue;
                    }
                    let p = s.cond.probability();
                    for (key, st) in s.acc.iter() {
                        let v = match agg {
                            Aggregate::Count => s.sign * p * t * (st.count as f64 / s.drawn as f64),
                            Aggregate::Sum => s.sign * p * t * (st.sum.value() / s.drawn as f64),
                            Aggregate::Avg => st.sum.value() / st.count as f64,
                        };
                        let slot = *index.entry(key.clone()).or_insert_with(|| {
                            per_key.push((key.clone(), 0.0));
                            per_key.len() - 1
                        });
                        per_key[slot].1 += v;
                    }
                }
                let groups = per_key
                    .into_iter()
                    .map(|(k, v)| GroupValue {
                        key: labels(&self.columns, gc, &k),
                        value: v,
                    })
                    .collect();
                AggregateResult::from_groups(groups, meta)
            }
            Source::Strata(strata) => {
                let groups = strata
                    .iter()
                    .filter(|st| st.drawn > 0)
                    .filter_map(|st| {
                        let stats = st.acc.iter().next().map(|(_, s)| s)?;
                        let p = st.cond.probability();
                        let n = st.drawn as f64;
                        let v = match agg {
                            Aggregate::Count => p * t * (stats.count as f64 / n),
                            Aggregate::Sum => p * t * (stats.sum.value() / n),
                            Aggregate::Avg => stats.sum.value() / stats.count as f64,
                        };
                        Some(GroupValue {
                            key: labels(&self.columns, gc, &st.key),
                            value: v,
                        })
                    })
                    .collect();
                AggregateResult::from_groups(groups, meta)
            }
            Source::Empty => AggregateResult::from_groups(Vec::new(), meta),
        };
        result.meta.elapsed_ms = self.start.elapsed().as_secs_f64() * 1e3;
        result
    }

    fn accurate_enough(&self, r: &AggregateResult) -> bool {
        let (Some(truth), Some(target)) = (&self.truth, self.stop.target_avg_rel_error) else {
            return false;
        };
        matches!(bin_missing(truth, r), Ok(m) if m == 0.0)
            && matches!(avg_rel_error(truth, r), Ok(e) if e <= target)
    }
}

impl Iterator for SampleExecution {
    type Item = Result<AggregateResult, ExecError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if let Err(e) = self.advance() {
            self.done = true;
            return Some(Err(e));
        }
        let r = self.snapshot();
        if self.exhausted() || self.accurate_enough(&r) {
            self.done = true;
        }
        Some(Ok(r))
    }
}

/// A model together with its content identifier.
#[derive(Debug, Clone)]
pub struct Model {
    spn: Spn,
    id: String,
}

impl Model {
    pub fn new(spn: Spn) -> Self {
        let id = spn.model_id();
        Model { spn, id }
    }

    pub fn spn(&self) -> &Spn {
        &self.spn
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn into_spn(self) -> Spn {
        self.spn
    }

    /// Compiles a query against the model's schema.
    pub fn compile(&self, spec: &QuerySpec, udfs: &UdfRegistry) -> Result<CompiledQuery, QueryError> {
        compile(spec, &self.spn.columns, udfs)
    }

    pub fn probability(&self, query: &CompiledQuery) -> Result<AggregateResult, ExecError> {
        let mut r = exec_probability(&self.spn, query)?;
        r.meta.model_id = Some(self.id.clone());
        Ok(r)
    }

    pub fn sample(
        &self,
        query: &CompiledQuery,
        kind: SamplerKind,
        stop: &StopRule,
        seed: u64,
        truth: Option<AggregateResult>,
    ) -> Result<SampleExecution, ExecError> {
        let mut run = exec_sample(&self.spn, query, kind, stop, seed, truth)?;
        run.set_model_id(self.id.clone());
        Ok(run)
    }
}
