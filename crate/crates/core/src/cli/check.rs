//! Invariant groups run on a tiny mesh by the `check` subcommand.

use crate::error::Result;
use crate::krylov::{probe_vector, SolveMethod, SolverConfig, SparseFactor, VelocityKind};
use crate::sparse::norm;
use crate::stepper::{init_state, InitialData, Problem, Scheme, Stepper};
use crate::verify::ManufacturedCase;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    norm(&d) / norm(b).max(f64::MIN_POSITIVE)
}

fn mesh_group(problem: &Problem) -> (bool, String) {
    let m = &problem.mesh;
    let euler = m.num_vertices() as i64 - m.num_facets() as i64 + m.num_elements() as i64;
    let positive = (0..m.num_elements()).all(|e| m.area(e) > 0.0);
    let mut closure = 0.0f64;
    for e in 0..m.num_elements() {
        let mut s = [0.0; 2];
        for l in 0..3 {
            let n = m.outward_normal(e, l);
            let len = m.facet_length(m.element_facets[e][l]);
            s[0] += n[0] * len;
            s[1] += n[1] * len;
        }
        closure = closure.max(s[0].hypot(s[1]));
    }
    let mut shared = true;
    for (f, facet) in m.facets.iter().enumerate() {
        if let (a, Some(b)) = facet.elements {
            let la = m.element_facets[a].iter().position(|&g| g == f);
            let lb = m.element_facets[b].iter().position(|&g| g == f);
            match (la, lb) {
                (Some(la), Some(lb)) => shared &= m.element_signs[a][la] * m.element_signs[b][lb] < 0.0,
                _ => shared = false,
            }
        }
    }
    (
        euler == 1 && positive && closure < 1e-12 && shared,
        format!("euler={euler} positive_areas={positive} normal_closure={closure:.1e} opposite_signs={shared}"),
    )
}

fn spaces_group(problem: &Problem) -> (bool, String) {
    let (m, sp) = (&problem.mesh, &problem.spaces);
    let c = sp.interpolate_compound(m, |_| [1.0, -2.0]);
    let lin = sp.interpolate_compound(m, |p| [p[0], 0.0]);
    let mut const_err = 0.0f64;
    let mut div_err = 0.0f64;
    for e in 0..m.num_elements() {
        let x = m.centroid(e);
        let v = sp.eval_velocity(m, &c, e, x);
        const_err = const_err.max((v[0] - 1.0).abs()).max((v[1] + 2.0).abs());
        div_err = div_err.max((sp.eval_divergence(m, &lin, e, x) - 1.0).abs());
    }
    (
        const_err < 1e-12 && div_err < 1e-12,
        format!("constant_reproduction={const_err:.1e} divergence_of_linear={div_err:.1e}"),
    )
}

fn forms_group(stepper: &Stepper) -> (bool, String) {
    let full = &stepper.blocks.full;
    let scale = full.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let defect = full.symmetry_defect() / scale;
    let spd = SparseFactor::cholesky(&stepper.blocks.a).is_ok();
    (defect < 1e-12 && spd, format!("symmetry_defect={defect:.1e} velocity_block_spd={spd}"))
}

fn probe_rhs(stepper: &Stepper) -> Vec<f64> {
    let mut b = probe_vector(stepper.blocks.full.nrows, 3);
    stepper.blocks.apply_bc_rhs(&mut b);
    b
}

fn solve_group(problem: &Problem, config: &SolverConfig, reference: &[f64], rhs: &[f64]) -> Result<(bool, String)> {
    let stepper = Stepper::new(problem, Scheme::CrankNicolson, 0.1, config)?;
    let (x, iters, _) = stepper.solve(rhs)?;
    let d = rel_diff(&x, reference);
    let tol = if config.method == SolveMethod::Direct { 1e-9 } else { 1e-6 };
    Ok((d < tol, format!("relative_difference={d:.1e} iterations={iters}")))
}

fn energy_group(problem: &Problem) -> Result<(bool, String)> {
    let config = SolverConfig {
        method: SolveMethod::Direct,
        ..Default::default()
    };
    let dt = 0.05;
    let case = ManufacturedCase::new(1.0, 1.0, 1.0);
    let vel = |p, _t| case.velocity(p, 0.7);
    let disp = |p, _t| case.displacement(p, 0.7);
    let data = InitialData::Exact {
        velocity: &vel,
        displacement: &disp,
    };
    let zero = |_t: f64| vec![0.0; problem.n_u()];
    let stepper = Stepper::new(problem, Scheme::CrankNicolson, dt, &config)?;
    let mut state = init_state(problem, Scheme::CrankNicolson, dt, &data, false, &zero, &config)?;
    let mut energies = vec![problem.energy(&state.current().u, &state.current().eta)];
    for _ in 0..5 {
        state = stepper.cn_step(&state, &zero)?.0;
        energies.push(problem.energy(&state.current().u, &state.current().eta));
    }
    let ok = energies[0] > 0.0 && energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok((ok, format!("energies {:.3e} -> {:.3e}", energies[0], energies[5])))
}

/// Runs every invariant group; a group that errors counts as failed.
pub fn run_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut record = |name: &'static str, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, e.to_string()));
        out.push(CheckResult { name, passed, detail });
    };
    let case = ManufacturedCase::new(1.0, 1.0, 1.0);
    let problem = match case.problem(2, 2) {
        Ok(p) => p,
        Err(e) => {
            record("setup", Err(e));
            return out;
        }
    };
    record("mesh", Ok(mesh_group(&problem)));
    record("spaces", Ok(spaces_group(&problem)));
    let direct = SolverConfig {
        method: SolveMethod::Direct,
        ..Default::default()
    };
    let base = Stepper::new(&problem, Scheme::CrankNicolson, 0.1, &direct);
    match base {
        Ok(stepper) => {
            record("forms", Ok(forms_group(&stepper)));
            let rhs = probe_rhs(&stepper);
            match SparseFactor::lu(&stepper.blocks.full) {
                Ok(f) => {
                    let reference = f.solve(&rhs);
                    record("condensation", solve_group(&problem, &direct, &reference, &rhs));
                    for (name, velocity) in [("minres_exact", VelocityKind::Exact), ("minres_auxiliary", VelocityKind::Auxiliary)] {
                        let cfg = SolverConfig {
                            tol: 1e-10,
                            velocity,
                            ..Default::default()
                        };
                        record(name, solve_group(&problem, &cfg, &reference, &rhs));
                    }
                }
                Err(e) => record("condensation", Err(e)),
            }
        }
        Err(e) => record("forms", Err(e)),
    }
    record("energy", energy_group(&problem));
    out
}
