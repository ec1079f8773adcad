//! Measurements shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::VecDeque;

use fsihdg::forms::MaterialParams;
use fsihdg::krylov::{SolveMethod, SolverConfig, SparseFactor};
use fsihdg::mesh::{BoundarySpec, Element, Mesh, Region};
use fsihdg::spaces::{element_quadrature, BcTable, Constraint, FacetBc, SpaceSet};
use fsihdg::sparse::norm;
use fsihdg::stepper::{Level, Problem, Scheme, StepState, Stepper};
use fsihdg::system::{assemble_system, SolidCoupling, StepCoefficients};
use fsihdg::verify::ManufacturedCase;
use fsihdg::Result;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn direct() -> SolverConfig {
    SolverConfig {
        method: SolveMethod::Direct,
        ..Default::default()
    }
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    norm(&d) / norm(b).max(f64::MIN_POSITIVE)
}

/// Random admissible level: constrained entries zero, displacement only on
/// the structure.
pub fn random_level(problem: &Problem, rng: &mut StdRng) -> Level {
    let mut draw = || -> Vec<f64> {
        (0..problem.n_u())
            .map(|i| if problem.constrained[i] { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect()
    };
    let u = draw();
    let eta = problem.restrict_solid(&draw());
    Level { u, eta }
}

/// Per-step energy balance without forcing. Returns the relative residuals
/// `|E_j - E_{j-1} + dt * dissipation| / E_{j-1}` and the energies.
pub fn energy_identity(n: usize, k: usize, steps: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let case = ManufacturedCase::new(1.0, 1.0, 1.0);
    let problem = case.problem(n, k)?;
    let dt = 1.0 / n as f64;
    let stepper = Stepper::new(&problem, Scheme::CrankNicolson, dt, &direct())?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut state = StepState {
        step: 0,
        t: 0.0,
        levels: VecDeque::from(vec![random_level(&problem, &mut rng)]),
    };
    let zero = |_t: f64| vec![0.0; problem.n_u()];
    let mut residuals = Vec::with_capacity(steps);
    let mut energies = vec![problem.energy(&state.current().u, &state.current().eta)];
    for _ in 0..steps {
        let (next, out) = stepper.cn_step(&state, &zero)?;
        let w = &out.solved_velocity;
        // energy carries no 1/2, so the dissipation enters twice
        let dissipation = 2.0 * 2.0 * problem.params.mu_f * problem.ops.diffusion_fluid.quad(w);
        let e_old = *energies.last().unwrap();
        let e_new = problem.energy(&next.current().u, &next.current().eta);
        residuals.push((e_new - e_old + dt * dissipation).abs() / e_old);
        energies.push(e_new);
        state = next;
    }
    Ok((residuals, energies))
}

/// Unit square split along its diagonal into a fluid and a solid triangle.
pub fn two_triangle_problem() -> Result<Problem> {
    let vertices = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let elements = vec![
        Element {
            vertices: [0, 1, 3],
            region: Region::Fluid,
        },
        Element {
            vertices: [0, 3, 2],
            region: Region::Solid,
        },
    ];
    let mut mesh = Mesh::from_elements(vertices, elements)?;
    mesh.classify_boundary(&BoundarySpec::by_region())?;
    let bcs = BcTable {
        rows: vec![
            ("fluid_exterior".into(), FacetBc::WALL),
            (
                "solid_exterior".into(),
                FacetBc {
                    normal: Constraint::Natural,
                    tangential: Constraint::Natural,
                },
            ),
        ],
    };
    let params = MaterialParams {
        rho_s: 2.0,
        mu_s: 3.0,
        lambda_s: 5.0,
        beta_s: 0.5,
        ..Default::default()
    };
    Problem::new(mesh, 1, params, bcs)
}

/// Solves the grad-div and the pressure form of one Crank-Nicolson stage
/// with the same random load. Returns the relative velocity difference and
/// the largest defect of `p = -(dt lambda / 2) div w` on solid elements,
/// relative to the largest solid pressure.
pub fn scheme_equivalence(dt: f64, seed: u64) -> Result<(f64, f64)> {
    let problem = two_triangle_problem()?;
    let coeffs = StepCoefficients::crank_nicolson(dt);
    let solve = |coupling| -> Result<Vec<f64>> {
        let blocks = assemble_system(
            &problem.mesh,
            &problem.spaces,
            &problem.ops,
            &problem.params,
            coeffs,
            &problem.constrained,
            coupling,
        )?;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut rhs: Vec<f64> = (0..blocks.n_u + blocks.n_p)
            .map(|i| if i < blocks.n_u { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        blocks.apply_bc_rhs(&mut rhs);
        Ok(SparseFactor::lu(&blocks.full)?.solve(&rhs))
    };
    let x_graddiv = solve(SolidCoupling::GradDiv)?;
    let x_pressure = solve(SolidCoupling::Pressure)?;
    let n_u = problem.n_u();
    let vel = rel_diff(&x_graddiv[..n_u], &x_pressure[..n_u]);
    let (m, sp) = (&problem.mesh, &problem.spaces);
    let w = &x_pressure[..n_u];
    let p = &x_pressure[n_u..];
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for e in 0..m.num_elements() {
        if m.elements[e].region != Region::Solid {
            continue;
        }
        for (q, _) in element_quadrature(m, e, &sp.volume_rule) {
            let ph = sp.eval_pressure(p, e, q);
            let target = -coeffs.solid * problem.params.lambda_s * sp.eval_divergence(m, w, e, q);
            worst = worst.max((ph - target).abs());
            scale = scale.max(ph.abs());
        }
    }
    Ok((vel, worst / scale.max(f64::MIN_POSITIVE)))
}

/// Largest `|| div(I u) - P div u ||_K / || div u ||` over random smooth
/// fields `u`, where `I` is the H(div) interpolant and `P` the elementwise
/// L2 projection.
pub fn commuting_defect(k: usize, n: usize, fields: usize, seed: u64) -> Result<f64> {
    let case = ManufacturedCase::new(1.0, 1.0, 1.0);
    let mesh = case.mesh(n)?;
    let sp = SpaceSet::build(&mesh, k)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..fields {
        let c: [f64; 8] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let field = |p: [f64; 2]| {
            [
                c[0] * (c[1] * p[0] + c[2] * p[1] + c[3]).sin(),
                c[4] * (c[5] * p[0] + c[6] * p[1] + c[7]).cos(),
            ]
        };
        let div = |p: [f64; 2]| {
            c[0] * c[1] * (c[1] * p[0] + c[2] * p[1] + c[3]).cos() - c[4] * c[6] * (c[5] * p[0] + c[6] * p[1] + c[7]).sin()
        };
        let iu = sp.interpolate_bdm(&mesh, field);
        let pd = sp.project_pressure(&mesh, div);
        let (mut num, mut den) = (0.0, 0.0);
        for e in 0..mesh.num_elements() {
            for (q, w) in element_quadrature(&mesh, e, &sp.fine_volume_rule) {
                let d = sp.eval_divergence(&mesh, &iu, e, q) - sp.eval_pressure(&pd, e, q);
                num += w * d * d;
                den += w * div(q).powi(2);
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    Ok(worst)
}

/// Relative difference between the condensed solve-and-recover and a direct
/// solve of the unreduced system for a random right-hand side.
pub fn condensation_defect(k: usize, n: usize, seed: u64) -> Result<f64> {
    let case = ManufacturedCase::new(1.0, 1.0, 1.0);
    let problem = case.problem(n, k)?;
    let stepper = Stepper::new(&problem, Scheme::CrankNicolson, 1.0 / n as f64, &direct())?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rhs: Vec<f64> = (0..stepper.blocks.full.nrows).map(|_| rng.random_range(-1.0..1.0)).collect();
    stepper.blocks.apply_bc_rhs(&mut rhs);
    let reference = SparseFactor::lu(&stepper.blocks.full)?.solve(&rhs);
    let (x, _, _) = stepper.solve(&rhs)?;
    Ok(rel_diff(&x, &reference))
}
