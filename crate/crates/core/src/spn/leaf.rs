//! Univariate leaf distributions.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::{Interval, IntervalUnion, ValueSet};

/// Leaf materialized samples are thinned to at most this many values.
pub const MAX_LEAF_SAMPLE: usize = 100_000;
/// Histogram bins per continuous leaf are capped at this count.
pub const MAX_BINS: usize = 64;
/// Pseudo-count added to every domain value of a discrete leaf.
pub const LAPLACE_PSEUDO_COUNT: f64 = 0.01;

/// Probability mass per dictionary code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLeaf {
    pub column: usize,
    pub probs: Vec<f64>,
}

impl DiscreteLeaf {
    /// Smoothed empirical frequencies over a domain of `domain_len` codes.
    pub fn fit(column: usize, codes: impl IntoIterator<Item = u32>, domain_len: usize) -> Self {
        let mut counts = vec![0.0f64; domain_len];
        let mut n = 0.0;
        for c in codes {
            counts[c as usize] += 1.0;
            n += 1.0;
        }
        let total = n + LAPLACE_PSEUDO_COUNT * domain_len as f64;
        DiscreteLeaf {
            column,
            probs: counts
                .into_iter()
                .map(|c| (c + LAPLACE_PSEUDO_COUNT) / total)
                .collect(),
        }
    }

    pub fn mass(&self, set: &ValueSet) -> f64 {
        set.codes()
            .iter()
            .filter_map(|&c| self.probs.get(c as usize))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// `(Σ value·p, Σ p)` over the allowed codes.
    pub fn moment(&self, set: Option<&ValueSet>, values: &[f64]) -> (f64, f64) {
        let mut m = 0.0;
        let mut p = 0.0;
        let mut visit = |c: usize| {
            if let (Some(&pc), Some(&v)) = (self.probs.get(c), values.get(c)) {
                m += pc * v;
                p += pc;
            }
        };
        match set {
            None => (0..self.probs.len()).for_each(&mut visit),
            Some(s) => s.codes().iter().for_each(|&c| visit(c as usize)),
        }
        (m, p)
    }

    /// Draws a code, restricted to `set` when given. Returns `None` if the
    /// restriction has no mass.
    pub fn sample(&self, set: Option<&ValueSet>, rng: &mut ChaCha8Rng) -> Option<u32> {
        match set {
            None => Some(pick_weighted(&self.probs, rng) as u32),
            Some(s) => {
                let weights: Vec<f64> = s
                    .codes()
                    .iter()
                    .map(|&c| self.probs.get(c as usize).copied().unwrap_or(0.0))
                    .collect();
                if weights.iter().sum::<f64>() <= 0.0 {
                    return None;
                }
                Some(s.codes()[pick_weighted(&weights, rng)])
            }
        }
    }
}

/// Index drawn proportionally to non-negative weights.
pub(crate) fn pick_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

/// Piecewise-linear density over `breaks` plus a sorted materialized sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContinuousLeafRepr", into = "ContinuousLeafRepr")]
pub struct ContinuousLeaf {
    column: usize,
    breaks: Vec<f64>,
    densities: Vec<f64>,
    sample: Vec<f64>,
    /// CDF at each break.
    cum: Vec<f64>,
    /// `prefix[i]` = sum of the first `i` sample values.
    prefix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ContinuousLeafRepr {
    column: usize,
    breaks: Vec<f64>,
    densities: Vec<f64>,
    sample: Vec<f64>,
}

impl TryFrom<ContinuousLeafRepr> for ContinuousLeaf {
    type Error = String;

    fn try_from(r: ContinuousLeafRepr) -> Result<Self, String> {
        if r.breaks.len() < 2 || r.densities.len() != r.breaks.len() {
            return Err(format!(
                "continuous leaf on column {} needs >= 2 breaks and one density per break",
                r.column
            ));
        }
        Ok(ContinuousLeaf::from_parts(r.column, r.breaks, r.densities, r.sample))
    }
}

impl From<ContinuousLeaf> for ContinuousLeafRepr {
    fn from(l: ContinuousLeaf) -> Self {
        ContinuousLeafRepr {
            column: l.column,
            breaks: l.breaks,
            densities: l.densities,
            sample: l.sample,
        }
    }
}

impl ContinuousLeaf {
    /// Assembles a leaf as given (no renormalization); `sample` is sorted.
    pub fn from_parts(column: usize, breaks: Vec<f64>, densities: Vec<f64>, mut sample: Vec<f64>) -> Self {
        sample.sort_by(f64::total_cmp);
        let mut cum = Vec::with_capacity(breaks.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for i in 1..breaks.len().min(densities.len()) {
            acc += 0.5 * (densities[i - 1] + densities[i]) * (breaks[i] - breaks[i - 1]);
            cum.push(acc);
        }
        let mut prefix = Vec::with_capacity(sample.len() + 1);
        let mut s = 0.0;
        prefix.push(0.0);
        for v in &sample {
            s += v;
            prefix.push(s);
        }
        ContinuousLeaf {
            column,
            breaks,
            densities,
            sample,
            cum,
            prefix,
        }
    }

    /// Equi-depth histogram turned into a normalized piecewise-linear density.
    pub fn fit(column: usize, mut values: Vec<f64>, rng: &mut ChaCha8Rng) -> Self {
        assert!(!values.is_empty(), "fit requires at least one value");
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let (lo, hi) = (values[0], values[n - 1]);
        if lo == hi {
            return ContinuousLeaf::degenerate(column, lo, values, rng);
        }
        let bins = ((n as f64).sqrt().floor() as usize).clamp(2, MAX_BINS);
        let mut edges: Vec<f64> = (0..bins).map(|j| values[j * n / bins]).collect();
        edges.push(hi);
        edges.dedup();
        let k = edges.len() - 1;
        let heights: Vec<f64> = (0..k)
            .map(|j| {
                let start = values.partition_point(|v| *v < edges[j]);
                let end = if j + 1 == k {
                    n
                } else {
                    values.partition_point(|v| *v < edges[j + 1])
                };
                (end - start) as f64 / (n as f64 * (edges[j + 1] - edges[j]))
            })
            .collect();
        let mut densities = Vec::with_capacity(k + 1);
        densities.push(heights[0]);
        for j in 1..k {
            densities.push(0.5 * (heights[j - 1] + heights[j]));
        }
        densities.push(heights[k - 1]);
        let area: f64 = (0..k)
            .map(|j| 0.5 * (densities[j] + densities[j + 1]) * (edges[j + 1] - edges[j]))
            .sum();
        for d in &mut densities {
            *d /= area;
        }
        ContinuousLeaf::from_parts(column, edges, densities, thin(values, rng))
    }

    /// Uniform density on a narrow window centered on a single value.
    fn degenerate(column: usize, v: f64, values: Vec<f64>, rng: &mut ChaCha8Rng) -> Self {
        let w = (1e-3 * v.abs()).max(1e-6);
        ContinuousLeaf::from_parts(
            column,
            vec![v - w / 2.0, v + w / 2.0],
            vec![1.0 / w, 1.0 / w],
            thin(values, rng),
        )
    }

    pub fn column(&self) -> usize {
        self.column
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    /// Trapezoid integral of the density over its support.
    pub fn total_mass(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    pub fn density(&self, x: f64) -> f64 {
        let b = &self.breaks;
        if x < b[0] || x > b[b.len() - 1] {
            return 0.0;
        }
        let i = segment(b, x);
        let t = (x - b[i]) / (b[i + 1] - b[i]);
        self.densities[i] + t * (self.densities[i + 1] - self.densities[i])
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let b = &self.breaks;
        if x <= b[0] {
            return 0.0;
        }
        if x >= b[b.len() - 1] {
            return self.total_mass();
        }
        let i = segment(b, x);
        let h = x - b[i];
        self.cum[i] + 0.5 * (self.densities[i] + self.density(x)) * h
    }

    /// Density mass of an interval union, clamped to [0, 1].
    pub fn mass(&self, u: &IntervalUnion) -> f64 {
        u.intervals()
            .iter()
            .map(|iv| self.interval_mass(iv))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    fn interval_mass(&self, iv: &Interval) -> f64 {
        if iv.is_empty() {
            return 0.0;
        }
        (self.cdf(iv.hi) - self.cdf(iv.lo)).max(0.0)
    }

    /// `∫ x f(x) dx` over `[lo, hi]` by exact integration of each linear piece.
    fn first_moment(&self, lo: f64, hi: f64) -> f64 {
        let b = &self.breaks;
        let lo = lo.max(b[0]);
        let hi = hi.min(b[b.len() - 1]);
        if lo >= hi {
            return 0.0;
        }
        let mut total = 0.0;
        for i in segment(b, lo)..b.len() - 1 {
            let u = lo.max(b[i]);
            let v = hi.min(b[i + 1]);
            if u >= v {
                if b[i] >= hi {
                    break;
                }
                continue;
            }
            let beta = (self.densities[i + 1] - self.densities[i]) / (b[i + 1] - b[i]);
            let fu = self.density(u);
            let h = v - u;
            total += u * fu * h + (u * beta + fu) * h * h / 2.0 + beta * h * h * h / 3.0;
        }
        total
    }

    /// Sample values inside the union, as index ranges into the sorted sample.
    fn sample_ranges(&self, u: &IntervalUnion) -> Vec<(usize, usize)> {
        u.intervals()
            .iter()
            .filter_map(|iv| {
                let start = if iv.lo_closed {
                    self.sample.partition_point(|x| *x < iv.lo)
                } else {
                    self.sample.partition_point(|x| *x <= iv.lo)
                };
                let end = if iv.hi_closed {
                    self.sample.partition_point(|x| *x <= iv.hi)
                } else {
                    self.sample.partition_point(|x| *x < iv.hi)
                };
                (end > start).then_some((start, end))
            })
            .collect()
    }

    /// `(restricted mean · mass, mass)`: the mean comes from the filtered
    /// materialized sample, falling back to the density when that is empty.
    pub fn moment(&self, cond: Option<&IntervalUnion>) -> (f64, f64) {
        let (mass, ranges) = match cond {
            None => (1.0, vec![(0, self.sample.len())]),
            Some(u) => (self.mass(u), self.sample_ranges(u)),
        };
        if mass < 1e-12 {
            return (0.0, 0.0);
        }
        let count: usize = ranges.iter().map(|(s, e)| e - s).sum();
        let mean = if count > 0 {
            ranges
                .iter()
                .map(|&(s, e)| self.prefix[e] - self.prefix[s])
                .sum::<f64>()
                / count as f64
        } else {
            let u = cond.expect("unconditioned leaf has a non-empty sample");
            let m: f64 = u
                .intervals()
                .iter()
                .map(|iv| self.first_moment(iv.lo, iv.hi))
                .sum();
            m / u.intervals().iter().map(|iv| self.interval_mass(iv)).sum::<f64>()
        };
        (mean * mass, mass)
    }

    /// Uniform draw from the materialized sample restricted to `cond`; when
    /// no sample value qualifies, inverse-transform sampling of the
    /// restricted density. `None` if the restriction has no mass at all.
    pub fn draw(&self, cond: Option<&IntervalUnion>, rng: &mut ChaCha8Rng) -> Option<f64> {
        let Some(u) = cond else {
            return Some(self.sample[rng.random_range(0..self.sample.len())]);
        };
        let ranges = self.sample_ranges(u);
        let count: usize = ranges.iter().map(|(s, e)| e - s).sum();
        if count > 0 {
            let mut k = rng.random_range(0..count);
            for (s, e) in ranges {
                if k < e - s {
                    return Some(self.sample[s + k]);
                }
                k -= e - s;
            }
            unreachable!("index within total count");
        }
        self.inverse_transform(u, rng)
    }

    /// Draw from the density restricted to `u` by bisection on the CDF.
    pub fn inverse_transform(&self, u: &IntervalUnion, rng: &mut ChaCha8Rng) -> Option<f64> {
        let b = &self.breaks;
        let pieces: Vec<(f64, f64)> = u
            .intervals()
            .iter()
            .map(|iv| (iv.lo.max(b[0]), iv.hi.min(b[b.len() - 1])))
            .filter(|(lo, hi)| lo < hi)
            .collect();
        let weights: Vec<f64> = pieces
            .iter()
            .map(|&(lo, hi)| (self.cdf(hi) - self.cdf(lo)).max(0.0))
            .collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            return None;
        }
        let (lo, hi) = pieces[pick_weighted(&weights, rng)];
        let (clo, chi) = (self.cdf(lo), self.cdf(hi));
        let target = clo + rng.random::<f64>() * (chi - clo);
        let (mut a, mut z) = (lo, hi);
        for _ in 0..100 {
            let mid = 0.5 * (a + z);
            if mid <= a || mid >= z {
                break;
            }
            if self.cdf(mid) < target {
                a = mid;
            } else {
                z = mid;
            }
        }
        Some(0.5 * (a + z))
    }
}

/// Index `i` of the segment `[b[i], b[i+1]]` holding `x` (clamped).
fn segment(b: &[f64], x: f64) -> usize {
    b.partition_point(|v| *v <= x).saturating_sub(1).min(b.len() - 2)
}

/// Seeded uniform thinning to [`MAX_LEAF_SAMPLE`] values; keeps order.
fn thin(sorted: Vec<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sorted.len() <= MAX_LEAF_SAMPLE {
        return sorted;
    }
    let mut keep = index::sample(rng, sorted.len(), MAX_LEAF_SAMPLE).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| sorted[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn discrete_smoothing() {
        let leaf = DiscreteLeaf::fit(0, [0, 0, 0, 0, 1], 2);
        assert!((leaf.probs[0] - 4.01 / 5.02).abs() < 1e-15);
        assert!((leaf.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(leaf.mass(&ValueSet::new([])), 0.0);
    }

    #[test]
    fn continuous_fit_normalized() {
        let leaf = ContinuousLeaf::fit(0, (1..=100).map(f64::from).collect(), &mut rng());
        assert!((leaf.total_mass() - 1.0).abs() < 1e-9);
        assert_eq!(leaf.breaks().len(), 11);
        assert_eq!(leaf.mass(&IntervalUnion::all()), 1.0);
        // unconditioned moment is the sample mean
        let (m, p) = leaf.moment(None);
        assert_eq!(p, 1.0);
        assert!((m - 50.5).abs() < 1e-12);
    }

    #[test]
    fn single_value_leaf_window() {
        let leaf = ContinuousLeaf::fit(0, vec![2000.0], &mut rng());
        assert_eq!(leaf.breaks(), &[1999.0, 2001.0]);
        let cover = IntervalUnion::from_intervals([Interval::closed(1990.0, 2010.0)]);
        assert!((leaf.mass(&cover) - 1.0).abs() < 1e-12);
        let tiny = ContinuousLeaf::fit(0, vec![0.0], &mut rng());
        assert_eq!(tiny.breaks(), &[-5e-7, 5e-7]);
    }

    #[test]
    fn cdf_matches_numeric_integration() {
        let values: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 + (i as f64) * 0.01).collect();
        let leaf = ContinuousLeaf::fit(0, values, &mut rng());
        let b = leaf.breaks();
        let (lo, hi) = (b[0], b[b.len() - 1]);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        let mut moment = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            acc += leaf.density(x) * h;
            moment += x * leaf.density(x) * h;
            if i == n / 3 {
                assert!((acc - leaf.cdf(lo + (i + 1) as f64 * h)).abs() < 1e-6);
            }
        }
        assert!((acc - 1.0).abs() < 1e-6);
        assert!((moment - leaf.first_moment(lo, hi)).abs() < 1e-4);
    }

    #[test]
    fn inverse_transform_stays_inside() {
        let leaf = ContinuousLeaf::fit(0, (0..100).map(f64::from).collect(), &mut rng());
        let u = IntervalUnion::from_intervals([Interval::closed(10.2, 10.8), Interval::closed(50.1, 50.3)]);
        let mut r = rng();
        for _ in 0..1000 {
            let x = leaf.draw(Some(&u), &mut r).unwrap();
            assert!(u.contains(x), "{x}");
        }
    }

    #[test]
    fn thinning_caps_sample() {
        let leaf = ContinuousLeaf::fit(0, (0..150_000).map(f64::from).collect(), &mut rng());
        assert_eq!(leaf.sample().len(), MAX_LEAF_SAMPLE);
        assert!(leaf.sample().windows(2).all(|w| w[0] <= w[1]));
    }
}
