//! Entropic and exact optimal transport between two uniform point clouds.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Non-negative finite n×m cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
}

impl CostMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (n, m) = entries.shape();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput(format!("cost matrix is {n}×{m}")));
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        if let Some(c) = entries.iter().find(|&&c| c < 0.0) {
            return Err(Error::InvalidInput(format!(
                "cost matrix has negative entry {c}"
            )));
        }
        Ok(CostMatrix { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = crate::json::matrix_from_rows(rows)
            .ok_or_else(|| Error::InvalidInput("ragged cost matrix".into()))?;
        CostMatrix::new(m)
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.entries.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    }

    /// Σᵢ C[i][π(i)].
    pub fn assignment_cost(&self, perm: &[usize]) -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| self.entries[(i, j)])
            .sum()
    }
}

/// Pairwise squared Euclidean distances between the rows of `a` and `b`.
///
/// Row blocks are distributed over `threads` workers. Every entry is computed
/// by the same kernel whatever the split, so the result does not depend on
/// the thread count.
pub fn squared_euclidean(a: &DMatrix<f64>, b: &DMatrix<f64>, threads: usize) -> Result<CostMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            context: "squared_euclidean",
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    let (n, m) = (a.nrows(), b.nrows());
    let bt = b.transpose();
    let bn: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let block = |lo: usize, hi: usize| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(hi - lo, m);
        for i in lo..hi {
            let ai = a.row(i);
            let an = ai.norm_squared();
            let dots = ai * &bt;
            for j in 0..m {
                out[(i - lo, j)] = (an + bn[j] - 2.0 * dots[j]).max(0.0);
            }
        }
        out
    };
    let threads = threads.clamp(1, n.max(1));
    let entries = if threads == 1 {
        block(0, n)
    } else {
        let chunk = n.div_ceil(threads);
        let parts: Vec<DMatrix<f64>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|lo| {
                    let hi = (lo + chunk).min(n);
                    let block = &block;
                    s.spawn(move || block(lo, hi))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("cost worker panicked"))
                .collect()
        });
        let mut out = DMatrix::zeros(n, m);
        let mut row = 0;
        for p in parts {
            out.rows_mut(row, p.nrows()).copy_from(&p);
            row += p.nrows();
        }
        out
    };
    CostMatrix::new(entries)
}

/// Worker count for the opt-in parallel paths, from `EMBALIGN_THREADS`.
/// Unset or unparsable means 1.
pub fn configured_threads() -> usize {
    std::env::var("EMBALIGN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularisation. `None` means 0.05 × median(C).
    pub reg: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            reg: None,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn resolve_reg(&self, c: &CostMatrix) -> f64 {
        self.reg.unwrap_or_else(|| default_reg(c))
    }
}

pub fn default_reg(c: &CostMatrix) -> f64 {
    let med = c.median();
    if med > 0.0 {
        0.05 * med
    } else {
        let mean = c.entries().mean();
        if mean > 0.0 {
            0.05 * mean
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub entries: DMatrix<f64>,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
    /// ⟨C, P⟩.
    pub cost: f64,
    /// L1 violation of the row marginals (columns are exact after each sweep).
    pub marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reg: f64,
    /// Marginal error at every 10th iteration.
    pub error_trace: Vec<f64>,
}

impl Coupling {
    /// Column of the largest entry in each row, lowest index on ties.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.entries
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with uniform marginals 1/n and 1/m.
pub fn sinkhorn(c: &CostMatrix, cfg: &SinkhornConfig) -> Result<Coupling> {
    let reg = cfg.resolve_reg(c);
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "Sinkhorn reg must be positive, got {reg}"
        )));
    }
    if cfg.max_iters == 0 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidConfig(
            "Sinkhorn needs max_iters ≥ 1 and tol > 0".into(),
        ));
    }
    let (n, m) = (c.rows(), c.cols());
    let cm = c.entries();
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut trace = Vec::new();
    let mut err = f64::INFINITY;
    let mut iters = 0;
    let mut converged = false;

    while iters < cfg.max_iters {
        for i in 0..n {
            let lse = logsumexp((0..m).map(|j| (g[j] - cm[(i, j)]) / reg));
            f[i] = reg * (log_a - lse);
        }
        for j in 0..m {
            let lse = logsumexp((0..n).map(|i| (f[i] - cm[(i, j)]) / reg));
            g[j] = reg * (log_b - lse);
        }
        iters += 1;
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::SinkhornUnderflow { reg });
        }
        if iters % 10 == 0 || iters == cfg.max_iters {
            err = row_error(cm, &f, &g, reg, log_a);
            if iters % 10 == 0 {
                trace.push(err);
            }
            if err <= cfg.tol {
                converged = true;
                break;
            }
        }
    }

    let entries = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cm[(i, j)]) / reg).exp());
    if entries.row_iter().any(|r| r.sum() == 0.0) {
        return Err(Error::SinkhornUnderflow { reg });
    }
    let cost = entries.component_mul(cm).sum();
    Ok(Coupling {
        row_marginals: entries.row_iter().map(|r| r.sum()).collect(),
        col_marginals: entries.column_iter().map(|c| c.sum()).collect(),
        entries,
        cost,
        marginal_error: err,
        iterations: iters,
        converged,
        reg,
        error_trace: trace,
    })
}

fn row_error(cm: &DMatrix<f64>, f: &[f64], g: &[f64], reg: f64, log_a: f64) -> f64 {
    let a = log_a.exp();
    (0..f.len())
        .map(|i| {
            let s: f64 = (0..g.len())
                .map(|j| ((f[i] + g[j] - cm[(i, j)]) / reg).exp())
                .sum();
            (s - a).abs()
        })
        .sum()
}

pub const MAX_ASSIGNMENT: usize = 4096;

/// Minimum-cost perfect matching, returned as `π` with row i ↦ column π(i).
///
/// Shortest augmenting paths with dual potentials (Hungarian method), O(n³).
pub fn exact_assignment(c: &CostMatrix) -> Result<Vec<usize>> {
    let (n, m) = (c.rows(), c.cols());
    if n != m {
        return Err(Error::ShapeMismatch(format!(
            "exact assignment needs a square cost matrix, got {n}×{m}"
        )));
    }
    if n > MAX_ASSIGNMENT {
        return Err(Error::InvalidInput(format!(
            "exact assignment is limited to n ≤ {MAX_ASSIGNMENT}, got {n}"
        )));
    }
    let cm = c.entries();
    // 1-based with a virtual column 0, as in the classic formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cm[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn cm(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn single_cell() {
        let p = sinkhorn(&cm(&[&[2.5]]), &SinkhornConfig::default()).unwrap();
        assert_abs_diff_eq!(p.entries[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.cost, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_prefers_diagonal() {
        let cfg = SinkhornConfig {
            reg: Some(0.01),
            ..Default::default()
        };
        let p = sinkhorn(&cm(&[&[0.0, 1.0], &[1.0, 0.0]]), &cfg).unwrap();
        assert_abs_diff_eq!(p.entries[(0, 0)], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p.entries[(1, 1)], 0.5, epsilon = 1e-9);
        assert!(p.entries[(0, 1)] < 1e-30);
        assert!(p.cost < 1e-30);
    }

    #[test]
    fn constant_cost_gives_product_measure() {
        let c = CostMatrix::new(DMatrix::from_element(3, 4, 7.0)).unwrap();
        let p = sinkhorn(&c, &SinkhornConfig::default()).unwrap();
        for v in p.entries.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 12.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(p.cost, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_costs() {
        assert!(matches!(
            CostMatrix::new(DMatrix::from_element(2, 2, f64::NAN)),
            Err(Error::NonFinite(_))
        ));
        // every exponent overflows to −∞ once divided by this reg
        let c = cm(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let cfg = SinkhornConfig {
            reg: Some(1e-320),
            ..Default::default()
        };
        assert!(matches!(
            sinkhorn(&c, &cfg),
            Err(Error::SinkhornUnderflow { .. })
        ));
    }

    #[test]
    fn marginal_error_checkpoints_decrease() {
        let mut rng = RngSeed(4).rng();
        let c = CostMatrix::new(DMatrix::from_fn(40, 30, |_, _| rng.random::<f64>())).unwrap();
        let cfg = SinkhornConfig {
            reg: Some(0.02),
            max_iters: 400,
            tol: 1e-14,
        };
        let p = sinkhorn(&c, &cfg).unwrap();
        assert!(p.error_trace.len() >= 5);
        for w in p.error_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{:?}", p.error_trace);
        }
        assert!(p.entries.iter().all(|&v| v >= 0.0));
        for s in &p.col_marginals {
            assert_abs_diff_eq!(*s, 1.0 / 30.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn assignment_basics() {
        let c = cm(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0], &[1.0, 1.0, 0.0]]);
        assert_eq!(exact_assignment(&c).unwrap(), vec![0, 1, 2]);
        let shifted = CostMatrix::new(c.entries().add_scalar(5.0)).unwrap();
        assert_eq!(exact_assignment(&shifted).unwrap(), vec![0, 1, 2]);
        let rect = CostMatrix::new(DMatrix::zeros(2, 3)).unwrap();
        assert!(matches!(
            exact_assignment(&rect),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = RngSeed(99).rng();
        for trial in 0..100 {
            let n = 1 + trial % 8;
            let c = CostMatrix::new(DMatrix::from_fn(n, n, |_, _| {
                rng.random_range(0..20) as f64
            }))
            .unwrap();
            let best = permutations(n)
                .iter()
                .map(|p| c.assignment_cost(p))
                .fold(f64::INFINITY, f64::min);
            let perm = exact_assignment(&c).unwrap();
            let mut seen = perm.clone();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert_eq!(c.assignment_cost(&perm), best);
        }
    }

    #[test]
    fn parallel_cost_is_bitwise_equal() {
        let mut rng = RngSeed(8).rng();
        let a = DMatrix::from_fn(37, 9, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(23, 9, |_, _| rng.random::<f64>() - 0.5);
        let one = squared_euclidean(&a, &b, 1).unwrap();
        for t in [2, 3, 8, 64] {
            assert_eq!(squared_euclidean(&a, &b, t).unwrap(), one);
        }
        assert_abs_diff_eq!(
            one.get(3, 4),
            (a.row(3) - b.row(4)).norm_squared(),
            epsilon = 1e-12
        );
    }
}
