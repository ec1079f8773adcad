//! Smoothed-aggregation algebraic multigrid V-cycle with symmetric
//! Gauss-Seidel smoothing and Galerkin coarse operators.

use super::{probe_vector, LinearOperator, SparseFactor};
use crate::error::{Error, Result};
use crate::sparse::{dot, Csr, TripletBuilder};

#[derive(Clone, Debug)]
pub struct AmgConfig {
    /// Number of levels including the finest; 1 means the smoother alone.
    pub max_levels: usize,
    /// Levels at or below this size are solved directly.
    pub coarse_size: usize,
    /// Strength-of-connection threshold.
    pub strength: f64,
    /// Unknowns per node (2 for interleaved vector fields).
    pub block_size: usize,
}

impl Default for AmgConfig {
    fn default() -> Self {
        Self {
            max_levels: 10,
            coarse_size: 300,
            strength: 0.08,
            block_size: 1,
        }
    }
}

#[derive(Clone, Debug)]
struct Level {
    a: Csr,
    diag: Vec<f64>,
    /// Prolongation from the next coarser level.
    p: Option<Csr>,
    r: Option<Csr>,
}

#[derive(Clone, Debug)]
pub struct Amg {
    levels: Vec<Level>,
    coarse: Option<SparseFactor>,
}

fn check_diag(a: &Csr) -> Result<Vec<f64>> {
    let d = a.diag();
    if let Some(row) = d.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroDiagonal { row });
    }
    Ok(d)
}

/// Greedy aggregation of the node graph. Nodes without strong neighbours
/// stay unaggregated (their prolongation rows are zero).
fn aggregate(a: &Csr, block: usize, theta: f64) -> (Vec<Option<usize>>, usize) {
    let nn = a.nrows / block;
    let mut node_diag = vec![0.0; nn];
    let mut strong: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nn];
    for i in 0..a.nrows {
        for (j, v) in a.row(i) {
            if i / block == j / block {
                node_diag[i / block] += v * v;
            }
        }
    }
    let mut node_row: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); nn];
    for i in 0..a.nrows {
        for (j, v) in a.row(i) {
            if i / block != j / block {
                *node_row[i / block].entry(j / block).or_insert(0.0) += v * v;
            }
        }
    }
    for (ni, row) in node_row.iter().enumerate() {
        for (&nj, &s2) in row {
            let s = s2.sqrt();
            if s > theta * (node_diag[ni].sqrt() * node_diag[nj].sqrt()).sqrt() {
                strong[ni].push((nj, s));
            }
        }
    }
    let mut agg: Vec<Option<usize>> = vec![None; nn];
    let mut count = 0;
    for i in 0..nn {
        if agg[i].is_some() || strong[i].is_empty() {
            continue;
        }
        if strong[i].iter().all(|&(j, _)| agg[j].is_none()) {
            agg[i] = Some(count);
            for &(j, _) in &strong[i] {
                agg[j] = Some(count);
            }
            count += 1;
        }
    }
    let snapshot = agg.clone();
    for i in 0..nn {
        if agg[i].is_some() || strong[i].is_empty() {
            continue;
        }
        let best = strong[i]
            .iter()
            .filter(|&&(j, _)| snapshot[j].is_some())
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some(&(j, _)) = best {
            agg[i] = snapshot[j];
        }
    }
    for i in 0..nn {
        if agg[i].is_some() || strong[i].is_empty() {
            continue;
        }
        agg[i] = Some(count);
        for &(j, _) in &strong[i] {
            if agg[j].is_none() {
                agg[j] = Some(count);
            }
        }
        count += 1;
    }
    (agg, count)
}

fn spectral_radius_jacobi(a: &Csr, diag: &[f64]) -> f64 {
    let mut x = probe_vector(a.nrows, 7);
    let mut lambda = 1.0;
    for _ in 0..20 {
        let mut y = a.mul_vec(&x);
        for (yi, d) in y.iter_mut().zip(diag) {
            *yi /= d;
        }
        let ny = dot(&y, &y).sqrt();
        let nx = dot(&x, &x).sqrt();
        if ny == 0.0 {
            return 1.0;
        }
        lambda = ny / nx;
        x = y.iter().map(|v| v / ny).collect();
    }
    lambda
}

impl Amg {
    pub fn new(a: &Csr, config: &AmgConfig) -> Result<Self> {
        if !a.nrows.is_multiple_of(config.block_size) {
            return Err(Error::Factorization("matrix size is not a multiple of the block size".into()));
        }
        let mut levels = Vec::new();
        let mut current = a.clone();
        loop {
            let diag = check_diag(&current)?;
            let last = levels.len() + 1 >= config.max_levels.max(1) || current.nrows <= config.coarse_size;
            if last {
                levels.push(Level {
                    a: current,
                    diag,
                    p: None,
                    r: None,
                });
                break;
            }
            let block = config.block_size;
            let (agg, count) = aggregate(&current, block, config.strength);
            if count == 0 || count * block >= current.nrows {
                // Aggregation stalled: solve this level directly.
                levels.push(Level {
                    a: current,
                    diag,
                    p: None,
                    r: None,
                });
                break;
            }
            let mut sizes = vec![0usize; count];
            for g in agg.iter().flatten() {
                sizes[*g] += 1;
            }
            let mut tb = TripletBuilder::new(current.nrows, count * block);
            for (node, g) in agg.iter().enumerate() {
                if let Some(g) = g {
                    let w = 1.0 / (sizes[*g] as f64).sqrt();
                    for c in 0..block {
                        tb.push(node * block + c, g * block + c, w);
                    }
                }
            }
            let tentative = tb.build();
            let omega = (4.0 / 3.0) / spectral_radius_jacobi(&current, &diag);
            let mut da = current.clone();
            for i in 0..da.nrows {
                for p in da.indptr[i]..da.indptr[i + 1] {
                    da.data[p] *= omega / diag[i];
                }
            }
            let smoothed = tentative.add(1.0, &da.matmul(&tentative), -1.0);
            let r = smoothed.transpose();
            let coarse = r.matmul(&current).matmul(&smoothed);
            let coarse = coarse.add(0.5, &coarse.transpose(), 0.5);
            levels.push(Level {
                a: current,
                diag,
                p: Some(smoothed),
                r: Some(r),
            });
            current = coarse;
        }
        let coarse = if levels.len() > 1 || config.max_levels > 1 {
            let last = &levels.last().unwrap().a;
            Some(SparseFactor::cholesky(last)?)
        } else {
            None
        };
        Ok(Self { levels, coarse })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.a.nrows).collect()
    }

    fn forward_sweep(lvl: &Level, b: &[f64], x: &mut [f64]) {
        for i in 0..lvl.a.nrows {
            let mut s = b[i];
            for (j, v) in lvl.a.row(i) {
                if j != i {
                    s -= v * x[j];
                }
            }
            x[i] = s / lvl.diag[i];
        }
    }

    fn backward_sweep(lvl: &Level, b: &[f64], x: &mut [f64]) {
        for i in (0..lvl.a.nrows).rev() {
            let mut s = b[i];
            for (j, v) in lvl.a.row(i) {
                if j != i {
                    s -= v * x[j];
                }
            }
            x[i] = s / lvl.diag[i];
        }
    }

    fn cycle(&self, l: usize, b: &[f64]) -> Vec<f64> {
        let lvl = &self.levels[l];
        if l + 1 == self.levels.len() {
            if let Some(f) = &self.coarse {
                return f.solve(b);
            }
            let mut x = vec![0.0; b.len()];
            Self::forward_sweep(lvl, b, &mut x);
            Self::backward_sweep(lvl, b, &mut x);
            return x;
        }
        let mut x = vec![0.0; b.len()];
        Self::forward_sweep(lvl, b, &mut x);
        let ax = lvl.a.mul_vec(&x);
        let res: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let rc = lvl.r.as_ref().unwrap().mul_vec(&res);
        let xc = self.cycle(l + 1, &rc);
        let corr = lvl.p.as_ref().unwrap().mul_vec(&xc);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        Self::backward_sweep(lvl, b, &mut x);
        x
    }
}

impl LinearOperator for Amg {
    fn dim(&self) -> usize {
        self.levels[0].a.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.cycle(0, x));
    }
}
