//! k-means++ seeding and Lloyd iterations.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// K×D.
    pub centroids: DMatrix<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig {
            k,
            max_iters: 300,
            restarts: 1,
        }
    }
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..x.ncols() {
        let d = x[(i, j)] - c[(k, j)];
        s += d * d;
    }
    s
}

/// k-means++ initial centres: first uniformly, then proportional to D².
pub fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut centres = DMatrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    centres.row_mut(0).copy_from(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centres, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centres.row_mut(c).copy_from(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centres, c));
        }
    }
    centres
}

fn nearest(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..c.nrows() {
        let d = sq_dist(x, i, c, k);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd iterations from `init` until assignments stop changing.
/// An empty cluster is moved to the point farthest from its centre.
pub fn lloyd(x: &DMatrix<f64>, init: DMatrix<f64>, max_iters: usize) -> KMeans {
    let (n, d) = x.shape();
    let k = init.nrows();
    let mut c = init;
    let mut assign = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (a, dd) = nearest(x, i, &c);
            dist[i] = dd;
            if assign[i] != a {
                assign[i] = a;
                changed = true;
            }
        }
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            let mut r = sums.row_mut(assign[i]);
            r += x.row(i);
        }
        for (j, &count) in counts.iter().enumerate() {
            if count == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                c.row_mut(j).copy_from(&x.row(far));
                dist[far] = 0.0;
                changed = true;
            } else {
                let mean = sums.row(j) / counts[j] as f64;
                c.row_mut(j).copy_from(&mean);
            }
        }
        if !changed {
            break;
        }
    }
    for (i, a) in assign.iter_mut().enumerate() {
        *a = nearest(x, i, &c).0;
    }
    let inertia = (0..n).map(|i| sq_dist(x, i, &c, assign[i])).sum();
    KMeans {
        centroids: c,
        assignments: assign,
        inertia,
        iterations,
    }
}

/// Best of `cfg.restarts` seeded k-means++ runs by inertia.
pub fn kmeans(x: &DMatrix<f64>, cfg: KMeansConfig, seed: RngSeed) -> Result<KMeans> {
    if cfg.k == 0 || cfg.k > x.nrows() {
        return Err(Error::InsufficientData(format!(
            "k-means with k = {} on {} points",
            cfg.k,
            x.nrows()
        )));
    }
    let mut rng = seed.rng();
    let mut best: Option<KMeans> = None;
    for _ in 0..cfg.restarts.max(1) {
        let init = kmeans_pp(x, cfg.k, &mut rng);
        let run = lloyd(x, init, cfg.max_iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    assert_eq!(a.len(), b.len());
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ra: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sa: f64 = ra.values().map(|&v| choose2(v)).sum();
    let sb: f64 = rb.values().map(|&v| choose2(v)).sum();
    let expected = sa * sb / choose2(a.len());
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (DMatrix<f64>, Vec<usize>) {
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rng = RngSeed(2).rng();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..90 {
            let c = centres[i % 3];
            rows.push(c[0] + rng.random::<f64>() - 0.5);
            rows.push(c[1] + rng.random::<f64>() - 0.5);
            truth.push(i % 3);
        }
        (DMatrix::from_row_slice(90, 2, &rows), truth)
    }

    #[test]
    fn recovers_separated_blobs() {
        let (x, truth) = blobs();
        let km = kmeans(
            &x,
            KMeansConfig {
                restarts: 3,
                ..KMeansConfig::new(3)
            },
            RngSeed(1),
        )
        .unwrap();
        assert_eq!(adjusted_rand_index(&km.assignments, &truth), 1.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, _) = blobs();
        let a = kmeans(&x, KMeansConfig::new(3), RngSeed(7)).unwrap();
        let b = kmeans(&x, KMeansConfig::new(3), RngSeed(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
        // sklearn: adjusted_rand_score([0,0,1,1],[0,1,0,1]) = -0.5
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) + 0.5).abs() < 1e-12);
    }
}
