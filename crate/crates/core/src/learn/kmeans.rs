//! Seeded k-means over z-scored continuous columns and one-hot discrete
//! columns.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::spn::pick_weighted;
use crate::table::{Column, Table};

const MAX_ITERATIONS: usize = 50;
const PAR_THRESHOLD: usize = 20_000;
/// Seeded restarts; the partition with the lowest inertia wins.
pub(crate) const RESTARTS: usize = 10;

struct Features {
    /// z-scores per continuous column, indexed by slice position.
    cont: Vec<Vec<f64>>,
    /// Codes and domain size per discrete column.
    disc: Vec<(Vec<u32>, usize)>,
}

#[derive(Clone)]
struct Centroid {
    cont: Vec<f64>,
    disc: Vec<Vec<f64>>,
    /// Σ c² per discrete column.
    disc_norm: Vec<f64>,
}

impl Features {
    fn build(table: &Table, rows: &[u32], cols: &[usize]) -> Features {
        let mut cont = Vec::new();
        let mut disc = Vec::new();
        for &c in cols {
            match table.column(c) {
                Column::Continuous(v) => {
                    let x: Vec<f64> = rows.iter().map(|&r| v[r as usize]).collect();
                    let n = x.len() as f64;
                    let mean = x.iter().sum::<f64>() / n;
                    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    if var > 0.0 {
                        let sd = var.sqrt();
                        cont.push(x.into_iter().map(|v| (v - mean) / sd).collect());
                    }
                }
                Column::Discrete(v) => {
                    let codes: Vec<u32> = rows.iter().map(|&r| v[r as usize]).collect();
                    if codes.iter().any(|c| *c != codes[0]) {
                        disc.push((codes, table.schema()[c].domain_len()));
                    }
                }
            }
        }
        Features { cont, disc }
    }

    fn centroid_of(&self, i: usize) -> Centroid {
        let cont = self.cont.iter().map(|col| col[i]).collect();
        let disc: Vec<Vec<f64>> = self
            .disc
            .iter()
            .map(|(codes, d)| {
                let mut v = vec![0.0; *d];
                v[codes[i] as usize] = 1.0;
                v
            })
            .collect();
        Centroid {
            cont,
            disc_norm: vec![1.0; disc.len()],
            disc,
        }
    }

    fn dist2(&self, i: usize, c: &Centroid) -> f64 {
        let mut d = 0.0;
        for (col, mu) in self.cont.iter().zip(&c.cont) {
            d += (col[i] - mu).powi(2);
        }
        for (((codes, _), cen), norm) in self.disc.iter().zip(&c.disc).zip(&c.disc_norm) {
            d += 1.0 - 2.0 * cen[codes[i] as usize] + norm;
        }
        d.max(0.0)
    }

    fn nearest(&self, i: usize, centers: &[Centroid]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in centers.iter().enumerate() {
            let d = self.dist2(i, c);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// Partitions slice positions `0..rows.len()` into at most `k` non-empty
/// clusters (returned as row ids). Deterministic for a given generator state.
pub(crate) fn kmeans(table: &Table, rows: &[u32], cols: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let n = rows.len();
    if k <= 1 || n < k {
        return vec![rows.to_vec()];
    }
    let f = Features::build(table, rows, cols);
    if f.cont.is_empty() && f.disc.is_empty() {
        return vec![rows.to_vec()];
    }

    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    for _ in 0..RESTARTS {
        let (assign, centers) = lloyd(&f, n, k, rng);
        let inertia: f64 = (0..n).map(|i| f.dist2(i, &centers[assign[i]])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, assign, centers.len()));
        }
    }
    let (_, assign, k) = best.expect("at least one restart");
    let mut clusters: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (i, &a) in assign.iter().enumerate() {
        clusters[a].push(rows[i]);
    }
    clusters.retain(|c| !c.is_empty());
    clusters
}

/// One k-means++ seeded Lloyd run: assignments and final centroids.
fn lloyd(f: &Features, n: usize, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Centroid>) {
    // k-means++ seeding
    let mut centers = vec![f.centroid_of(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| f.dist2(i, &centers[0])).collect();
    while centers.len() < k {
        if d2.iter().all(|d| *d <= 0.0) {
            break;
        }
        let next = pick_weighted(&d2, rng);
        let c = f.centroid_of(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(f.dist2(i, &c));
        }
        centers.push(c);
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let fresh: Vec<usize> = if n >= PAR_THRESHOLD {
            (0..n).into_par_iter().map(|i| f.nearest(i, &centers)).collect()
        } else {
            (0..n).map(|i| f.nearest(i, &centers)).collect()
        };
        if fresh == assign {
            break;
        }
        assign = fresh;
        centers = recompute(f, &assign, centers.len());
    }
    (assign, centers)
}

fn recompute(f: &Features, assign: &[usize], k: usize) -> Vec<Centroid> {
    let mut counts = vec![0usize; k];
    let mut cont = vec![vec![0.0; f.cont.len()]; k];
    let mut disc: Vec<Vec<Vec<f64>>> = vec![f.disc.iter().map(|(_, d)| vec![0.0; *d]).collect(); k];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (j, col) in f.cont.iter().enumerate() {
            cont[a][j] += col[i];
        }
        for (j, (codes, _)) in f.disc.iter().enumerate() {
            disc[a][j][codes[i] as usize] += 1.0;
        }
    }
    (0..k)
        .map(|a| {
            // an empty cluster keeps a far-away sentinel so it stays empty
            let m = counts[a].max(1) as f64;
            let cont: Vec<f64> = cont[a]
                .iter()
                .map(|s| if counts[a] == 0 { f64::INFINITY } else { s / m })
                .collect();
            let disc: Vec<Vec<f64>> = disc[a]
                .iter()
                .map(|v| v.iter().map(|s| s / m).collect())
                .collect();
            let mut disc_norm: Vec<f64> = disc.iter().map(|v: &Vec<f64>| v.iter().map(|x| x * x).sum()).collect();
            if counts[a] == 0 {
                disc_norm.iter_mut().for_each(|x| *x = f64::INFINITY);
            }
            Centroid { cont, disc, disc_norm }
        })
        .collect()
}
