//! Pairwise dependence scores in [0, 1] between columns of a row slice.

use std::collections::BTreeMap;

/// Column values over a row slice, tagged by statistical type.
pub(crate) enum Values<'a> {
    Discrete(&'a [u32]),
    Continuous(&'a [f64]),
}

/// Ranks with ties sharing their average rank.
pub(crate) fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j - 1) as f64 / 2.0 + 1.0;
        for &k in &idx[i..j] {
            r[k] = avg;
        }
        i = j;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// |Spearman ρ|.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    pearson(&ranks(x), &ranks(y)).abs()
}

/// Correlation ratio η of the ranks of `x` across the categories `y`, with
/// the small-sample bias adjustment `1 − (1 − η²)(N − 1)/(N − K)`.
pub fn correlation_ratio(x: &[f64], y: &[u32]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let r = ranks(x);
    let mean = r.iter().sum::<f64>() / n as f64;
    let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&ri, &yi) in r.iter().zip(y) {
        let e = groups.entry(yi).or_insert((0.0, 0));
        e.0 += ri;
        e.1 += 1;
    }
    let k = groups.len();
    let ss_total: f64 = r.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_total <= 0.0 || k < 2 || n <= k {
        return 0.0;
    }
    let ss_between: f64 = groups
        .values()
        .map(|(s, c)| *c as f64 * (s / *c as f64 - mean).powi(2))
        .sum();
    let eta2 = (ss_between / ss_total).clamp(0.0, 1.0);
    let adj = 1.0 - (1.0 - eta2) * (n as f64 - 1.0) / (n - k) as f64;
    adj.max(0.0).sqrt()
}

/// Maximal (Hirschfeld–Gebelein–Rényi) correlation of two categorical
/// variables: the largest non-trivial singular value of
/// `P(x, y) / sqrt(P(x) P(y))`, i.e. the best correlation any pair of
/// functions of `x` and `y` can reach. The squared value is reduced by the
/// Marchenko–Pastur noise edge `(sqrt(r − 1) + sqrt(c − 1))² / n` so that
/// high-cardinality pairs do not look dependent by chance.
pub fn maximal_correlation(x: &[u32], y: &[u32]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut joint: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut px: BTreeMap<u32, usize> = BTreeMap::new();
    let mut py: BTreeMap<u32, usize> = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_default() += 1;
        *px.entry(a).or_default() += 1;
        *py.entry(b).or_default() += 1;
    }
    let (r, c) = (px.len(), py.len());
    if r < 2 || c < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let xi: BTreeMap<u32, usize> = px.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let yi: BTreeMap<u32, usize> = py.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let a: Vec<f64> = px.values().map(|&k| (k as f64 / nf).sqrt()).collect();
    let b: Vec<f64> = py.values().map(|&k| (k as f64 / nf).sqrt()).collect();
    let entries: Vec<(usize, usize, f64)> = joint
        .iter()
        .map(|(&(u, v), &k)| {
            let (i, j) = (xi[&u], yi[&v]);
            (i, j, k as f64 / nf / (a[i] * b[j]))
        })
        .collect();

    // power iteration on M'ᵀM', where M' removes the trivial singular pair (a, b)
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).sum::<f64>();
    let mut v: Vec<f64> = (0..c).map(|j| 1.0 + (j as f64 * 0.618_033_988_7).fract()).collect();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let bv = dot(&b, &v);
        let mut u: Vec<f64> = a.iter().map(|ai| -ai * bv).collect();
        for &(i, j, m) in &entries {
            u[i] += m * v[j];
        }
        let au = dot(&a, &u);
        let mut w: Vec<f64> = b.iter().map(|bj| -bj * au).collect();
        for &(i, j, m) in &entries {
            w[j] += m * u[i];
        }
        let vv = dot(&v, &v);
        if vv <= 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w) / vv;
        let norm = dot(&w, &w).sqrt();
        if norm <= 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|t| t / norm).collect();
        let converged = (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300);
        lambda = next;
        if converged {
            break;
        }
    }
    let edge = ((r - 1) as f64).sqrt() + ((c - 1) as f64).sqrt();
    (lambda - edge * edge / nf).max(0.0).sqrt().min(1.0)
}

/// Dependence score for a pair of typed columns.
pub(crate) fn score(a: &Values, b: &Values) -> f64 {
    match (a, b) {
        (Values::Continuous(x), Values::Continuous(y)) => spearman(x, y),
        (Values::Continuous(x), Values::Discrete(y)) | (Values::Discrete(y), Values::Continuous(x)) => {
            correlation_ratio(x, y)
        }
        (Values::Discrete(x), Values::Discrete(y)) => maximal_correlation(x, y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_ranks_for_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn perfect_rank_correlation() {
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn functional_discrete_dependence_is_strong() {
        let x: Vec<u32> = (0..1000).map(|i| i % 4).collect();
        let y: Vec<u32> = x.iter().map(|v| v / 2).collect();
        // y is a function of x: maximal correlation 1 (minus the noise edge)
        assert!((maximal_correlation(&x, &y) - 1.0).abs() < 0.01);
        let c: Vec<f64> = x.iter().map(|&v| v as f64 * 10.0).collect();
        assert!(correlation_ratio(&c, &x) > 0.99);
    }

    #[test]
    fn maximal_correlation_matches_closed_form() {
        // 2x2 table with P = [[0.4, 0.1], [0.1, 0.4]]: the maximal correlation
        // of two binary variables is |phi| = (0.16 - 0.01) / 0.25 = 0.6
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (a, b, k) in [(0, 0, 4000), (0, 1, 1000), (1, 0, 1000), (1, 1, 4000)] {
            x.extend(std::iter::repeat_n(a, k));
            y.extend(std::iter::repeat_n(b, k));
        }
        let edge = 4.0 / 10_000.0;
        assert!((maximal_correlation(&x, &y) - (0.36f64 - edge).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn independent_categories_score_near_zero() {
        let x: Vec<u32> = (0..10_000u32).map(|i| i % 7).collect();
        let y: Vec<u32> = (0..10_000u32).map(|i| (i / 7) % 5).collect();
        assert!(maximal_correlation(&x, &y) < 0.05);
    }

    #[test]
    fn constant_columns_score_zero() {
        assert_eq!(spearman(&[1.0; 10], &[2.0; 10]), 0.0);
        assert_eq!(maximal_correlation(&[1; 10], &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]), 0.0);
    }
}
