//! Block-diagonal preconditioner for the condensed saddle-point system and
//! the solver front end used by the time stepper.

use super::{minres, symmetry_defect, Amg, AmgConfig, LinearOperator, SparseFactor};
use crate::error::{Error, Result};
use crate::forms::{auxiliary_cg_matrix, cg_constraint_mask, pressure_jump_matrix, skeleton_dofs, transfer_matrix, MaterialParams};
use crate::mesh::{Mesh, Region};
use crate::spaces::{BcTable, Constraint, SpaceSet};
use crate::sparse::Csr;
use crate::system::{Condensed, SystemBlocks};

/// Forward then backward point Gauss-Seidel sweep from a zero guess.
#[derive(Clone, Debug)]
pub struct SymmetricGaussSeidel {
    a: Csr,
    diag: Vec<f64>,
}

impl SymmetricGaussSeidel {
    pub fn new(a: &Csr) -> Result<Self> {
        let diag = a.diag();
        if let Some(row) = diag.iter().position(|&d| d == 0.0) {
            return Err(Error::ZeroDiagonal { row });
        }
        Ok(Self { a: a.clone(), diag })
    }
}

impl LinearOperator for SymmetricGaussSeidel {
    fn dim(&self) -> usize {
        self.a.nrows
    }

    fn apply(&self, b: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        let n = self.a.nrows;
        for i in (0..n).chain((0..n).rev()) {
            let mut s = b[i];
            for (j, v) in self.a.row(i) {
                if j != i {
                    s -= v * x[j];
                }
            }
            x[i] = s / self.diag[i];
        }
    }
}

/// Backend for the inverse of an SPD auxiliary operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseBackend {
    Direct,
    Amg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VelocityKind {
    /// Exact inverse of the condensed velocity block.
    Exact,
    /// Gauss-Seidel plus continuous piecewise-linear auxiliary-space correction.
    Auxiliary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    Minres,
    /// Sparse LU of the whole condensed system.
    Direct,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub tol: f64,
    pub maxit: usize,
    pub method: SolveMethod,
    pub velocity: VelocityKind,
    pub backend: InverseBackend,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            maxit: 2000,
            method: SolveMethod::Minres,
            velocity: VelocityKind::Auxiliary,
            backend: InverseBackend::Direct,
        }
    }
}

enum Inverse {
    Direct(SparseFactor),
    Amg(Amg),
}

impl Inverse {
    fn build(m: &Csr, backend: InverseBackend, block_size: usize) -> Result<Self> {
        Ok(match backend {
            InverseBackend::Direct => Self::Direct(SparseFactor::cholesky(m)?),
            InverseBackend::Amg => Self::Amg(Amg::new(
                m,
                &AmgConfig {
                    block_size,
                    ..Default::default()
                },
            )?),
        })
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Direct(f) => f.solve(x),
            Self::Amg(a) => a.apply_vec(x),
        }
    }
}

pub enum VelocityBlock {
    Exact(SparseFactor),
    Auxiliary {
        smoother: SymmetricGaussSeidel,
        transfer: Csr,
        transfer_t: Csr,
        coarse: Box<dyn LinearOperator + Send + Sync>,
    },
}

impl VelocityBlock {
    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Exact(f) => f.solve(x),
            Self::Auxiliary {
                smoother,
                transfer,
                transfer_t,
                coarse,
            } => {
                let mut y = smoother.apply_vec(x);
                let c = coarse.apply_vec(&transfer_t.mul_vec(x));
                for (yi, ci) in y.iter_mut().zip(transfer.mul_vec(&c)) {
                    *yi += ci;
                }
                y
            }
        }
    }
}

struct AuxInverse(Inverse, usize);

impl LinearOperator for AuxInverse {
    fn dim(&self) -> usize {
        self.1
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.0.apply_vec(x));
    }
}

/// `M^-1 + N^-1` on one pressure per element, where `M` is the
/// `(1/mu + gamma)` weighted mass and `N` the jump form. With `deflate`, the
/// `N` part acts on the complement of constants.
pub struct SchurBlock {
    pub mass_diag: Vec<f64>,
    n_inverse: Inverse,
    pub deflate: bool,
}

fn remove_mean(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

impl SchurBlock {
    pub fn new(mass_diag: Vec<f64>, n: &Csr, backend: InverseBackend, deflate: bool) -> Result<Self> {
        let n = if deflate {
            // Pin the first unknown; on mean-free data this yields the
            // pseudo-inverse up to a constant, removed after the solve.
            let mut keep = vec![false; n.nrows];
            keep[0] = true;
            let mut tb = crate::sparse::TripletBuilder::new(n.nrows, n.ncols);
            for i in 0..n.nrows {
                for (j, v) in n.row(i) {
                    if !keep[i] && !keep[j] {
                        tb.push(i, j, v);
                    }
                }
            }
            tb.push(0, 0, 1.0);
            tb.build()
        } else {
            n.clone()
        };
        Ok(Self {
            mass_diag,
            n_inverse: Inverse::build(&n, backend, 1)?,
            deflate,
        })
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let y = if self.deflate {
            let mut xm = x.to_vec();
            remove_mean(&mut xm);
            xm[0] = 0.0;
            let mut y = self.n_inverse.apply_vec(&xm);
            remove_mean(&mut y);
            y
        } else {
            self.n_inverse.apply_vec(x)
        };
        y.iter().zip(x).zip(&self.mass_diag).map(|((yi, xi), d)| yi + xi / d).collect()
    }
}

pub struct BlockPreconditioner {
    pub n_vel: usize,
    pub velocity: VelocityBlock,
    pub schur: SchurBlock,
}

impl LinearOperator for BlockPreconditioner {
    fn dim(&self) -> usize {
        self.n_vel + self.schur.mass_diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (xv, xp) = x.split_at(self.n_vel);
        let yv = self.velocity.apply_vec(xv);
        let yp = self.schur.apply_vec(xp);
        y[..self.n_vel].copy_from_slice(&yv);
        y[self.n_vel..].copy_from_slice(&yp);
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

enum Engine {
    Minres(Box<BlockPreconditioner>),
    Direct(SparseFactor),
}

/// Solver for one condensed system, set up once per time-step size.
pub struct SaddleSolver {
    matrix: Csr,
    n_vel: usize,
    engine: Engine,
    deflate: bool,
    config: SolverConfig,
}

/// Boundary tags whose normal velocity is natural; the pressure jump form
/// gets boundary terms there.
pub fn natural_normal_tags(mesh: &Mesh, bcs: &BcTable) -> Vec<String> {
    mesh.boundary_tags
        .iter()
        .filter(|t| bcs.get(t).map(|b| b.normal == Constraint::Natural).unwrap_or(false))
        .cloned()
        .collect()
}

impl SaddleSolver {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &Mesh,
        spaces: &SpaceSet,
        params: &MaterialParams,
        blocks: &SystemBlocks,
        condensed: &Condensed,
        bcs: &BcTable,
        config: &SolverConfig,
    ) -> Result<Self> {
        let matrix = condensed.matrix.clone();
        let scale = matrix.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if symmetry_defect(&matrix, 10) > 1e-12 * scale.max(1.0) {
            return Err(Error::Assembly("condensed system is not symmetric".into()));
        }
        let n_vel = condensed.n_vel;
        let tags = natural_normal_tags(mesh, bcs);
        let deflate = blocks.gamma.iter().all(|&g| g == 0.0) && tags.is_empty();
        let engine = match config.method {
            SolveMethod::Direct => Engine::Direct(SparseFactor::lu(&matrix)?),
            SolveMethod::Minres => Engine::Minres(Box::new(Self::preconditioner(
                mesh, spaces, params, blocks, condensed, bcs, config, &tags, deflate,
            )?)),
        };
        Ok(Self {
            matrix,
            n_vel,
            engine,
            deflate,
            config: config.clone(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn preconditioner(
        mesh: &Mesh,
        spaces: &SpaceSet,
        params: &MaterialParams,
        blocks: &SystemBlocks,
        condensed: &Condensed,
        bcs: &BcTable,
        config: &SolverConfig,
        tags: &[String],
        deflate: bool,
    ) -> Result<BlockPreconditioner> {
        let a_r = condensed.velocity_block();
        let coeffs = blocks.coeffs;
        let velocity = match config.velocity {
            VelocityKind::Exact => VelocityBlock::Exact(SparseFactor::cholesky(&a_r)?),
            VelocityKind::Auxiliary => {
                let skel = skeleton_dofs(spaces);
                let skel_constrained: Vec<bool> = skel.iter().map(|&i| blocks.constrained[i]).collect();
                let cg_constrained = cg_constraint_mask(mesh, bcs)?;
                let mass_w: Vec<f64> = mesh
                    .elements
                    .iter()
                    .map(|el| {
                        coeffs.mass * params.density(el.region)
                            + if el.region == Region::Solid { coeffs.solid * params.beta_s } else { 0.0 }
                    })
                    .collect();
                let aux = auxiliary_cg_matrix(mesh, &mass_w, &blocks.viscosity, &cg_constrained);
                let transfer = transfer_matrix(mesh, spaces, &skel_constrained, &cg_constrained);
                let n_aux = aux.nrows;
                VelocityBlock::Auxiliary {
                    smoother: SymmetricGaussSeidel::new(&a_r)?,
                    transfer_t: transfer.transpose(),
                    transfer,
                    coarse: Box::new(AuxInverse(Inverse::build(&aux, config.backend, 2)?, n_aux)),
                }
            }
        };
        let mass_diag: Vec<f64> = (0..mesh.num_elements())
            .map(|e| (1.0 / blocks.viscosity[e] + blocks.gamma[e]) * mesh.area(e))
            .collect();
        let tag_refs: Vec<&str> = tags.iter().map(|s| s.as_str()).collect();
        let n = pressure_jump_matrix(mesh, params, &blocks.gamma, 1.0 / coeffs.mass, &tag_refs);
        let schur = SchurBlock::new(mass_diag, &n, config.backend, deflate)?;
        Ok(BlockPreconditioner {
            n_vel: condensed.n_vel,
            velocity,
            schur,
        })
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn deflates(&self) -> bool {
        self.deflate
    }

    pub fn block_preconditioner(&self) -> Option<&BlockPreconditioner> {
        match &self.engine {
            Engine::Minres(p) => Some(p),
            Engine::Direct(_) => None,
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<SolveOutcome> {
        let mut b = rhs.to_vec();
        if self.deflate {
            remove_mean(&mut b[self.n_vel..]);
        }
        let (mut x, iterations, residual) = match &self.engine {
            Engine::Direct(f) => (f.solve(&b), 0, 0.0),
            Engine::Minres(p) => {
                let out = minres(&self.matrix, p.as_ref(), &b, self.config.tol, self.config.maxit)?;
                (out.x, out.iterations, out.residual)
            }
        };
        if self.deflate {
            remove_mean(&mut x[self.n_vel..]);
        }
        Ok(SolveOutcome {
            x,
            iterations,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::probe_vector;
    use super::*;
    use crate::sparse::dot;

    #[test]
    fn gauss_seidel_matches_hand_sweep() {
        let a = Csr::from_triplets(
            3,
            3,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (1, 2, 1.0), (2, 1, 1.0), (2, 2, 2.0)],
        );
        let gs = SymmetricGaussSeidel::new(&a).unwrap();
        // e_0: forward gives (1/4, -1/12, 1/24); backward then
        // x2 = (0 - x1)/2 = 1/24, x1 = (0 - 1/4 - 1/24)/3 = -7/72, x0 = (1 + 7/72)/4 = 79/288.
        let y = gs.apply_vec(&[1.0, 0.0, 0.0]);
        assert!((y[2] - 1.0 / 24.0).abs() < 1e-15);
        assert!((y[1] + 7.0 / 72.0).abs() < 1e-15);
        assert!((y[0] - 79.0 / 288.0).abs() < 1e-15);
        // symmetric operator
        let x = probe_vector(3, 0);
        let z = probe_vector(3, 1);
        assert!((dot(&x, &gs.apply_vec(&z)) - dot(&z, &gs.apply_vec(&x))).abs() < 1e-14);
    }

    #[test]
    fn gauss_seidel_is_exact_on_diagonal_matrices() {
        let a = Csr::diagonal(&[2.0, 4.0, 0.5]);
        let gs = SymmetricGaussSeidel::new(&a).unwrap();
        assert_eq!(gs.apply_vec(&[2.0, 4.0, 0.5]), vec![1.0, 1.0, 1.0]);
        assert!(matches!(
            SymmetricGaussSeidel::new(&Csr::diagonal(&[1.0, 0.0])),
            Err(Error::ZeroDiagonal { row: 1 })
        ));
    }

    #[test]
    fn single_element_schur_mass_part() {
        // mu = 2, gamma = 3, area 1, no facets: M = 3.5
        let n = Csr::from_triplets(1, 1, vec![(0, 0, 3.0)]);
        let s = SchurBlock::new(vec![(0.5 + 3.0) * 1.0], &n, InverseBackend::Direct, false).unwrap();
        let y = s.apply_vec(&[1.0]);
        assert!((y[0] - (1.0 / 3.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn deflated_schur_ignores_constants() {
        let n = Csr::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, -2.0), (1, 0, -2.0), (1, 1, 2.0)]);
        let s = SchurBlock::new(vec![1.0, 1.0], &n, InverseBackend::Direct, true).unwrap();
        let y = s.apply_vec(&[1.0, 1.0]);
        assert!((y[0] - 1.0).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);
        // on mean-free data the N part is the pseudo-inverse: N^+ (1,-1) = (1,-1)/4
        let y = s.apply_vec(&[1.0, -1.0]);
        assert!((y[0] - 1.25).abs() < 1e-14 && (y[1] + 1.25).abs() < 1e-14);
        let x = probe_vector(2, 0);
        let z = probe_vector(2, 1);
        assert!((dot(&x, &s.apply_vec(&z)) - dot(&z, &s.apply_vec(&x))).abs() < 1e-14);
    }
}
