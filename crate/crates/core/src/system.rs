//! Global saddle-point system `[[A, B^T], [B, -M_gamma]]`, essential
//! boundary conditions by symmetric elimination, and static condensation of
//! interior velocity and high-order pressure DOFs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forms::{MaterialParams, Operators};
use crate::mesh::{Mesh, Region};
use crate::spaces::SpaceSet;
use crate::sparse::{Csr, TripletBuilder};

/// Coefficients of one implicit stage: `mass * (rho u, v)` on the left and
/// `solid` times the structure stiffness, which enters through the
/// displacement update `eta = eta_base + solid * w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub mass: f64,
    pub solid: f64,
}

impl StepCoefficients {
    /// Crank-Nicolson midpoint stage.
    pub fn crank_nicolson(dt: f64) -> Self {
        Self {
            mass: 2.0 / dt,
            solid: 0.5 * dt,
        }
    }

    /// Third-order backward differentiation stage.
    pub fn bdf3(dt: f64) -> Self {
        Self {
            mass: 11.0 / (6.0 * dt),
            solid: 6.0 * dt / 11.0,
        }
    }
}

/// How the structure's volumetric stiffness enters the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolidCoupling {
    /// A pressure unknown on every element, with `-(gamma p, q)_s` on solid
    /// elements (the form the preconditioner is designed for).
    Pressure,
    /// Fluid-only pressure and `solid * lambda_s (div u, div v)_s` in the
    /// velocity block; solid pressure rows become decoupled identities.
    GradDiv,
}

/// Assembled blocks with boundary conditions applied.
#[derive(Clone, Debug)]
pub struct SystemBlocks {
    pub n_u: usize,
    pub n_p: usize,
    /// Velocity block.
    pub a: Csr,
    /// `-(q, div v)`, `n_p x n_u`.
    pub b: Csr,
    /// Positive pressure block `(gamma p, q)`; the system holds `-c`.
    pub c: Csr,
    /// Full symmetric matrix on `[u | p]`.
    pub full: Csr,
    pub constrained: Vec<bool>,
    pub coeffs: StepCoefficients,
    /// Per-element merged viscosity (fluid `mu_f`, solid `solid * mu_s`).
    pub viscosity: Vec<f64>,
    /// Per-element pressure mass weight (zero on fluid).
    pub gamma: Vec<f64>,
    pub coupling: SolidCoupling,
}

impl SystemBlocks {
    /// Zeroes constrained velocity entries of a right-hand side.
    pub fn apply_bc_rhs(&self, rhs: &mut [f64]) {
        for (i, &c) in self.constrained.iter().enumerate() {
            if c {
                rhs[i] = 0.0;
            }
        }
    }

    pub fn write_coordinate(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        self.full.write_coordinate(out)
    }
}

/// Velocity block `mass * M_rho + 2 mu_f A_f + solid * (2 mu_s A_s + beta M_s)`
/// without boundary conditions.
pub fn velocity_operator(ops: &Operators, params: &MaterialParams, coeffs: StepCoefficients) -> Csr {
    let a = ops.mass_rho.add(coeffs.mass, &ops.diffusion_fluid, 2.0 * params.mu_f);
    let a = a.add(1.0, &ops.diffusion_solid, coeffs.solid * 2.0 * params.mu_s);
    if params.beta_s > 0.0 {
        a.add(1.0, &ops.mass_solid, coeffs.solid * params.beta_s)
    } else {
        a
    }
}

/// Structure stiffness `2 mu_s A_s + lambda_s (div, div)_s + beta M_s`.
pub fn solid_stiffness(ops: &Operators, params: &MaterialParams) -> Csr {
    let k = ops.diffusion_solid.add(2.0 * params.mu_s, &ops.divdiv_solid, params.lambda_s);
    if params.beta_s > 0.0 {
        k.add(1.0, &ops.mass_solid, params.beta_s)
    } else {
        k
    }
}

fn eliminate(a: &Csr, row_mask: &[bool], col_mask: &[bool], unit_diag: bool) -> Csr {
    let mut tb = TripletBuilder::new(a.nrows, a.ncols);
    for i in 0..a.nrows {
        if row_mask[i] {
            continue;
        }
        for (j, v) in a.row(i) {
            if !col_mask[j] {
                tb.push(i, j, v);
            }
        }
    }
    if unit_diag {
        for (i, &c) in row_mask.iter().enumerate() {
            if c {
                tb.push(i, i, 1.0);
            }
        }
    }
    tb.build()
}

pub fn assemble_system(
    mesh: &Mesh,
    spaces: &SpaceSet,
    ops: &Operators,
    params: &MaterialParams,
    coeffs: StepCoefficients,
    constrained: &[bool],
    coupling: SolidCoupling,
) -> Result<SystemBlocks> {
    if !(coeffs.mass > 0.0 && coeffs.solid > 0.0) {
        return Err(Error::Assembly("time step must be positive".into()));
    }
    let n_u = spaces.n_u();
    let n_p = spaces.n_p();
    if constrained.len() != n_u {
        return Err(Error::Assembly("constraint mask has the wrong length".into()));
    }
    if constrained.iter().all(|&c| c) {
        return Err(Error::Assembly("every velocity DOF is constrained".into()));
    }
    let mut a = velocity_operator(ops, params, coeffs);
    let gamma: Vec<f64> = mesh
        .elements
        .iter()
        .map(|el| match el.region {
            Region::Fluid => 0.0,
            Region::Solid => 1.0 / (coeffs.solid * params.lambda_s),
        })
        .collect();
    let viscosity: Vec<f64> = mesh
        .elements
        .iter()
        .map(|el| match el.region {
            Region::Fluid => params.mu_f,
            Region::Solid => coeffs.solid * params.mu_s,
        })
        .collect();

    let solid_pressure: Vec<bool> = (0..n_p)
        .map(|i| mesh.elements[i / spaces.pressure_per_element()].region == Region::Solid)
        .collect();
    let (b, c) = match coupling {
        SolidCoupling::Pressure => {
            let c = ops.pressure_mass_solid.scaled(1.0 / (coeffs.solid * params.lambda_s));
            (ops.div.clone(), c)
        }
        SolidCoupling::GradDiv => {
            a = a.add(1.0, &ops.divdiv_solid, coeffs.solid * params.lambda_s);
            let none = vec![false; n_u];
            let b = eliminate(&ops.div, &solid_pressure, &none, false);
            let diag: Vec<f64> = solid_pressure.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
            (b, Csr::diagonal(&diag))
        }
    };
    // Element blocks are symmetric only up to round-off.
    let a = a.add(0.5, &a.transpose(), 0.5);
    let a = eliminate(&a, constrained, constrained, true);
    let no_rows = vec![false; n_p];
    let b = eliminate(&b, &no_rows, constrained, false);

    let mut tb = TripletBuilder::new(n_u + n_p, n_u + n_p);
    for i in 0..n_u {
        for (j, v) in a.row(i) {
            tb.push(i, j, v);
        }
    }
    for i in 0..n_p {
        for (j, v) in b.row(i) {
            tb.push(n_u + i, j, v);
            tb.push(j, n_u + i, v);
        }
        for (j, v) in c.row(i) {
            tb.push(n_u + i, n_u + j, -v);
        }
    }
    Ok(SystemBlocks {
        n_u,
        n_p,
        a,
        b,
        c,
        full: tb.build(),
        constrained: constrained.to_vec(),
        coeffs,
        viscosity,
        gamma,
        coupling,
    })
}

#[derive(Clone, Debug)]
struct LocalElimination {
    /// Full indices of eliminated DOFs.
    internal: Vec<usize>,
    /// Reduced indices of the coupled skeleton and mean-pressure DOFs.
    coupled_reduced: Vec<usize>,
    /// Full indices of the same coupled DOFs.
    coupled_full: Vec<usize>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// `K_ig` (internal rows, coupled columns).
    kig: DMatrix<f64>,
}

/// Reduced system over skeleton velocity DOFs and one pressure per element,
/// plus the data needed to reduce right-hand sides and recover full solutions.
#[derive(Clone, Debug)]
pub struct Condensed {
    pub matrix: Csr,
    /// Number of reduced velocity (skeleton) unknowns; pressures follow.
    pub n_vel: usize,
    pub n_pres: usize,
    /// Full index of each reduced unknown.
    pub reduced_to_full: Vec<usize>,
    n_full: usize,
    locals: Vec<LocalElimination>,
}

impl Condensed {
    pub fn dim(&self) -> usize {
        self.n_vel + self.n_pres
    }

    pub fn velocity_block(&self) -> Csr {
        let idx: Vec<usize> = (0..self.n_vel).collect();
        self.matrix.select(&idx, &idx)
    }

    pub fn is_identity(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn reduce_rhs(&self, full_rhs: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.reduced_to_full.iter().map(|&i| full_rhs[i]).collect();
        for loc in &self.locals {
            let bi = DVector::from_iterator(loc.internal.len(), loc.internal.iter().map(|&i| full_rhs[i]));
            let y = loc.lu.solve(&bi).expect("factorization checked at setup");
            let corr = loc.kig.transpose() * y;
            for (a, &ri) in loc.coupled_reduced.iter().enumerate() {
                r[ri] -= corr[a];
            }
        }
        r
    }

    pub fn recover(&self, reduced: &[f64], full_rhs: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_full];
        for (r, &i) in self.reduced_to_full.iter().enumerate() {
            x[i] = reduced[r];
        }
        for loc in &self.locals {
            let xg = DVector::from_iterator(loc.coupled_full.len(), loc.coupled_full.iter().map(|&i| x[i]));
            let bi = DVector::from_iterator(loc.internal.len(), loc.internal.iter().map(|&i| full_rhs[i]));
            let xi = loc.lu.solve(&(bi - &loc.kig * xg)).expect("factorization checked at setup");
            for (a, &i) in loc.internal.iter().enumerate() {
                x[i] = xi[a];
            }
        }
        x
    }
}

/// Eliminates interior velocity and high-order pressure DOFs element by
/// element. For `k = 1` there is nothing to eliminate and the reduced system
/// is the full one.
pub fn static_condense(blocks: &SystemBlocks, mesh: &Mesh, spaces: &SpaceSet) -> Result<Condensed> {
    let n_u = blocks.n_u;
    let n_full = n_u + blocks.n_p;
    let npk = spaces.pressure_per_element();
    let ni = spaces.interior_per_element();
    let mut reduced_to_full: Vec<usize> = (0..spaces.n_normal()).chain(spaces.n_v()..n_u).collect();
    let n_vel = reduced_to_full.len();
    reduced_to_full.extend((0..mesh.num_elements()).map(|e| n_u + spaces.pressure_dof(e, 0)));
    let n_pres = mesh.num_elements();
    if ni == 0 && npk == 1 {
        return Ok(Condensed {
            matrix: blocks.full.clone(),
            n_vel,
            n_pres,
            reduced_to_full,
            n_full,
            locals: Vec::new(),
        });
    }
    let mut full_to_reduced = vec![usize::MAX; n_full];
    for (r, &i) in reduced_to_full.iter().enumerate() {
        full_to_reduced[i] = r;
    }
    let k = &blocks.full;
    let mut tb = TripletBuilder::new(n_vel + n_pres, n_vel + n_pres);
    for (r, &i) in reduced_to_full.iter().enumerate() {
        for (j, v) in k.row(i) {
            let c = full_to_reduced[j];
            if c != usize::MAX {
                tb.push(r, c, v);
            }
        }
    }
    let mut locals = Vec::with_capacity(mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let mut internal: Vec<usize> = (0..ni).map(|i| spaces.interior_dof(e, i)).collect();
        internal.extend((1..npk).map(|i| n_u + spaces.pressure_dof(e, i)));
        let mut coupled_full: Vec<usize> = Vec::new();
        for &f in &mesh.element_facets[e] {
            coupled_full.extend((0..=spaces.k).map(|m| spaces.normal_dof(f, m)));
        }
        coupled_full.extend(spaces.element_hat_dofs(mesh, e));
        coupled_full.push(n_u + spaces.pressure_dof(e, 0));
        let coupled_reduced: Vec<usize> = coupled_full.iter().map(|&i| full_to_reduced[i]).collect();

        let ni_e = internal.len();
        let mut kii = DMatrix::<f64>::zeros(ni_e, ni_e);
        let mut kig = DMatrix::<f64>::zeros(ni_e, coupled_full.len());
        for (a, &i) in internal.iter().enumerate() {
            for (j, v) in k.row(i) {
                if let Some(b) = internal.iter().position(|&x| x == j) {
                    kii[(a, b)] += v;
                } else if let Some(b) = coupled_full.iter().position(|&x| x == j) {
                    kig[(a, b)] += v;
                } else {
                    return Err(Error::Condensation {
                        element: e,
                        reason: format!("internal DOF {i} couples to foreign DOF {j}"),
                    });
                }
            }
        }
        let scale = kii.amax().max(f64::MIN_POSITIVE);
        let lu = kii.lu();
        let det_ok = (0..ni_e).all(|d| lu.u()[(d, d)].abs() > 1e-13 * scale);
        if !det_ok {
            return Err(Error::Condensation {
                element: e,
                reason: "singular interior block".into(),
            });
        }
        let w = lu.solve(&kig).expect("nonsingular");
        let corr = kig.transpose() * w;
        for (a, &ra) in coupled_reduced.iter().enumerate() {
            for (b, &rb) in coupled_reduced.iter().enumerate() {
                tb.push(ra, rb, -corr[(a, b)]);
            }
        }
        locals.push(LocalElimination {
            internal,
            coupled_reduced,
            coupled_full,
            lu,
            kig,
        });
    }
    let mut matrix = tb.build();
    // The local corrections are symmetric up to round-off; enforce exact symmetry.
    let t = matrix.transpose();
    matrix = matrix.add(0.5, &t, 0.5);
    Ok(Condensed {
        matrix,
        n_vel,
        n_pres,
        reduced_to_full,
        n_full,
        locals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundarySpec, Geometry};
    use crate::spaces::BcTable;
    use rand::{Rng, SeedableRng};

    pub(crate) fn example1_setup(n: usize, k: usize) -> (Mesh, SpaceSet, Operators, MaterialParams, Vec<bool>) {
        let mut mesh = Mesh::structured(&Geometry::manufactured(), n).unwrap();
        mesh.classify_boundary(&BoundarySpec::by_region()).unwrap();
        let spaces = SpaceSet::build(&mesh, k).unwrap();
        let params = MaterialParams::from_ratios(1.0, 1.0, 1.0);
        let ops = Operators::assemble(&mesh, &spaces, &params).unwrap();
        let mask = spaces
            .constrained_mask(&mesh, &BcTable::walls(&["fluid_exterior", "solid_exterior"]))
            .unwrap();
        (mesh, spaces, ops, params, mask)
    }

    fn dense_solve(m: &Csr, b: &[f64]) -> Vec<f64> {
        let d = m.to_dense();
        d.lu().solve(&DVector::from_column_slice(b)).unwrap().iter().copied().collect()
    }

    #[test]
    fn velocity_block_is_spd_and_full_matrix_symmetric() {
        let (mesh, spaces, ops, params, mask) = example1_setup(10, 1);
        let sys = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::crank_nicolson(0.1), &mask, SolidCoupling::Pressure)
            .unwrap();
        assert_eq!(sys.full.symmetry_defect(), 0.0);
        // Cholesky succeeds only on a positive definite matrix.
        let llt = sys.a.to_faer().sp_cholesky(faer::Side::Lower);
        assert!(llt.is_ok());
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..sys.n_u).map(|i| if mask[i] { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
            assert!(sys.a.quad(&x) > 0.0);
        }
    }

    #[test]
    fn solid_viscosity_scales_with_time_step() {
        let (mesh, spaces, ops, params, mask) = example1_setup(2, 1);
        let s1 = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::crank_nicolson(0.2), &mask, SolidCoupling::Pressure)
            .unwrap();
        let s2 = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::crank_nicolson(0.1), &mask, SolidCoupling::Pressure)
            .unwrap();
        let e = mesh.elements.iter().position(|el| el.region == Region::Solid).unwrap();
        assert!((s2.viscosity[e] - 0.5 * s1.viscosity[e]).abs() < 1e-15);
        assert!((s2.viscosity[e] - 0.05 * params.mu_s).abs() < 1e-15);
        // the solid diffusion contribution to A scales by the same factor
        let i = spaces.interior_dof(e, 0).min(spaces.normal_dof(mesh.element_facets[e][0], 0));
        let diff1 = s1.a.get(i, i) - StepCoefficients::crank_nicolson(0.2).mass * ops.mass_rho.get(i, i);
        let diff2 = s2.a.get(i, i) - StepCoefficients::crank_nicolson(0.1).mass * ops.mass_rho.get(i, i);
        let fluid = 2.0 * params.mu_f * ops.diffusion_fluid.get(i, i);
        if !mask[i] {
            assert!(((diff2 - fluid) - 0.5 * (diff1 - fluid)).abs() < 1e-12 * diff1.abs());
        }
    }

    #[test]
    fn constant_pressure_sees_no_velocity_when_normals_constrained() {
        let (mesh, spaces, ops, params, mask) = example1_setup(4, 2);
        let sys = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::crank_nicolson(0.1), &mask, SolidCoupling::Pressure)
            .unwrap();
        let ones = spaces.project_pressure(&mesh, |_| 1.0);
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let u: Vec<f64> = (0..sys.n_u).map(|i| if mask[i] { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
        let bu = sys.b.mul_vec(&u);
        let s: f64 = bu.iter().zip(&ones).map(|(a, b)| a * b).sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn all_constrained_is_an_error() {
        let (mesh, spaces, ops, params, _) = example1_setup(2, 1);
        let mask = vec![true; spaces.n_u()];
        let r = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::crank_nicolson(0.1), &mask, SolidCoupling::Pressure);
        assert!(matches!(r, Err(Error::Assembly(_))));
    }

    #[test]
    fn condensation_is_identity_for_linear_velocity() {
        let (mesh, spaces, ops, params, mask) = example1_setup(2, 1);
        let sys = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::crank_nicolson(0.1), &mask, SolidCoupling::Pressure)
            .unwrap();
        let c = static_condense(&sys, &mesh, &spaces).unwrap();
        assert!(c.is_identity());
        assert_eq!(c.matrix, sys.full);
    }

    #[test]
    fn condensation_reduces_pressure_to_one_per_element() {
        let mut mesh = Mesh::structured(&Geometry::unit_square(), 1).unwrap();
        mesh.classify_boundary(&BoundarySpec::new().with("wall", |_| true)).unwrap();
        let spaces = SpaceSet::build(&mesh, 2).unwrap();
        let params = MaterialParams::default();
        let ops = Operators::assemble(&mesh, &spaces, &params).unwrap();
        let mask = spaces.constrained_mask(&mesh, &BcTable::walls(&["wall"])).unwrap();
        let sys = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::crank_nicolson(0.1), &mask, SolidCoupling::Pressure)
            .unwrap();
        assert_eq!(sys.n_p, 6);
        let c = static_condense(&sys, &mesh, &spaces).unwrap();
        assert_eq!(c.n_pres, 2);
    }

    #[test]
    fn condensed_solve_matches_full_solve() {
        let (mesh, spaces, ops, params, mask) = example1_setup(4, 3);
        let sys = assemble_system(&mesh, &spaces, &ops, &params, StepCoefficients::bdf3(0.1), &mask, SolidCoupling::Pressure)
            .unwrap();
        let c = static_condense(&sys, &mesh, &spaces).unwrap();
        assert!(c.matrix.symmetry_defect() < 1e-12 * c.matrix.data.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let mut rhs: Vec<f64> = (0..sys.full.nrows).map(|_| rng.random_range(-1.0..1.0)).collect();
        sys.apply_bc_rhs(&mut rhs);
        let full = dense_solve(&sys.full, &rhs);
        let xr = dense_solve(&c.matrix, &c.reduce_rhs(&rhs));
        let rec = c.recover(&xr, &rhs);
        let err = rec.iter().zip(&full).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nrm = full.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-9 * nrm, "{err} vs {nrm}");
    }
}
