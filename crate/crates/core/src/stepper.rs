//! Time integration: Crank-Nicolson in midpoint form and third-order BDF,
//! both with the structure displacement eliminated through `D_t eta = u`.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::forms::{MaterialParams, Operators};
use crate::krylov::{SaddleSolver, SolverConfig};
use crate::mesh::{Mesh, Point, Region};
use crate::spaces::{element_quadrature, BcTable, SpaceSet, Vector2};
use crate::sparse::Csr;
use crate::system::{assemble_system, solid_stiffness, static_condense, Condensed, SolidCoupling, StepCoefficients, SystemBlocks};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    CrankNicolson,
    Bdf3,
}

impl Scheme {
    pub fn history_depth(self) -> usize {
        match self {
            Scheme::CrankNicolson => 1,
            Scheme::Bdf3 => 3,
        }
    }

    pub fn coefficients(self, dt: f64) -> StepCoefficients {
        match self {
            Scheme::CrankNicolson => StepCoefficients::crank_nicolson(dt),
            Scheme::Bdf3 => StepCoefficients::bdf3(dt),
        }
    }
}

/// Mesh, spaces, operators and boundary data shared by every step.
pub struct Problem {
    pub mesh: Mesh,
    pub spaces: SpaceSet,
    pub params: MaterialParams,
    pub ops: Operators,
    pub bcs: BcTable,
    pub constrained: Vec<bool>,
    /// DOFs that carry a displacement.
    pub solid_mask: Vec<bool>,
    /// `2 mu_s A_s + lambda_s (div, div)_s + beta (., .)_s`.
    pub stiffness: Csr,
}

impl Problem {
    pub fn new(mesh: Mesh, k: usize, params: MaterialParams, bcs: BcTable) -> Result<Self> {
        params.validate()?;
        let spaces = SpaceSet::build(&mesh, k)?;
        let ops = Operators::assemble(&mesh, &spaces, &params)?;
        let constrained = spaces.constrained_mask(&mesh, &bcs)?;
        let solid_mask = spaces.region_mask(&mesh, Region::Solid);
        let stiffness = solid_stiffness(&ops, &params);
        Ok(Self {
            mesh,
            spaces,
            params,
            ops,
            bcs,
            constrained,
            solid_mask,
            stiffness,
        })
    }

    pub fn n_u(&self) -> usize {
        self.spaces.n_u()
    }

    pub fn n_p(&self) -> usize {
        self.spaces.n_p()
    }

    /// `(rho u, u) + eta^T K_s eta`.
    pub fn energy(&self, u: &[f64], eta: &[f64]) -> f64 {
        self.ops.mass_rho.quad(u) + self.stiffness.quad(eta)
    }

    /// Largest `|div u|` over quadrature points of fluid elements.
    pub fn max_fluid_divergence(&self, u: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for e in 0..self.mesh.num_elements() {
            if self.mesh.elements[e].region != Region::Fluid {
                continue;
            }
            for (p, _) in element_quadrature(&self.mesh, e, &self.spaces.volume_rule) {
                worst = worst.max(self.spaces.eval_divergence(&self.mesh, u, e, p).abs());
            }
        }
        worst
    }

    /// L2 norm of a compound velocity over the whole domain.
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.l2_error(u, |_| [0.0, 0.0])
    }

    /// `|| u_h - exact ||` over the whole domain.
    pub fn l2_error(&self, u: &[f64], exact: impl Fn(Point) -> Vector2) -> f64 {
        let mut s = 0.0;
        for e in 0..self.mesh.num_elements() {
            for (p, w) in element_quadrature(&self.mesh, e, &self.spaces.volume_rule) {
                let uh = self.spaces.eval_velocity(&self.mesh, u, e, p);
                let ex = exact(p);
                s += w * ((uh[0] - ex[0]).powi(2) + (uh[1] - ex[1]).powi(2));
            }
        }
        s.sqrt()
    }

    /// Keeps only the displacement-carrying entries.
    pub fn restrict_solid(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.solid_mask).map(|(x, &m)| if m { *x } else { 0.0 }).collect()
    }
}

/// One time level of velocity and displacement coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Level {
    pub fn zero(n_u: usize) -> Self {
        Self {
            u: vec![0.0; n_u],
            eta: vec![0.0; n_u],
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepState {
    pub step: usize,
    pub t: f64,
    /// Newest first.
    pub levels: VecDeque<Level>,
}

impl StepState {
    pub fn at_rest(n_u: usize, depth: usize) -> Self {
        Self {
            step: 0,
            t: 0.0,
            levels: (0..depth).map(|_| Level::zero(n_u)).collect(),
        }
    }

    pub fn current(&self) -> &Level {
        &self.levels[0]
    }
}

/// Initial data for a transient run.
pub enum InitialData<'a> {
    Rest,
    /// Exact velocity and displacement fields `(x, t)`.
    Exact {
        velocity: &'a dyn Fn(Point, f64) -> Vector2,
        displacement: &'a dyn Fn(Point, f64) -> Vector2,
    },
}

/// Right-hand side functional over the compound velocity space at time `t`.
pub type LoadFn<'a> = dyn Fn(f64) -> Vec<f64> + 'a;

/// Outcome of a single step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Velocity unknown of the solve (midpoint for Crank-Nicolson).
    pub solved_velocity: Vec<f64>,
    /// Pressure of the solve (midpoint for Crank-Nicolson).
    pub pressure: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Assembled and factorized data for one scheme and step size.
pub struct Stepper<'p> {
    pub problem: &'p Problem,
    pub scheme: Scheme,
    pub dt: f64,
    pub blocks: SystemBlocks,
    pub condensed: Condensed,
    pub solver: SaddleSolver,
}

impl<'p> Stepper<'p> {
    pub fn new(problem: &'p Problem, scheme: Scheme, dt: f64, config: &SolverConfig) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let blocks = assemble_system(
            &problem.mesh,
            &problem.spaces,
            &problem.ops,
            &problem.params,
            scheme.coefficients(dt),
            &problem.constrained,
            SolidCoupling::Pressure,
        )?;
        let condensed = static_condense(&blocks, &problem.mesh, &problem.spaces)?;
        let solver = SaddleSolver::new(
            &problem.mesh,
            &problem.spaces,
            &problem.params,
            &blocks,
            &condensed,
            &problem.bcs,
            config,
        )?;
        Ok(Self {
            problem,
            scheme,
            dt,
            blocks,
            condensed,
            solver,
        })
    }

    /// Velocity and displacement history combinations entering the stage:
    /// `(mass history, eta base)`.
    fn history(&self, state: &StepState) -> Result<(Vec<f64>, Vec<f64>)> {
        let depth = self.scheme.history_depth();
        if state.levels.len() < depth {
            return Err(Error::Config(format!(
                "scheme needs {depth} history levels, state has {}",
                state.levels.len()
            )));
        }
        let l = &state.levels;
        Ok(match self.scheme {
            Scheme::CrankNicolson => (l[0].u.clone(), l[0].eta.clone()),
            Scheme::Bdf3 => {
                let comb = |a: &[f64], b: &[f64], c: &[f64]| -> Vec<f64> {
                    (0..a.len()).map(|i| 3.0 * a[i] - 1.5 * b[i] + c[i] / 3.0).collect()
                };
                let u = comb(&l[0].u, &l[1].u, &l[2].u);
                let eta = comb(&l[0].eta, &l[1].eta, &l[2].eta);
                // mass history carries 1/dt, normalised by the stage coefficient below
                (u, eta.iter().map(|v| v * 6.0 / 11.0).collect())
            }
        })
    }

    /// Time at which loads enter the stage solve.
    pub fn load_time(&self, state: &StepState) -> f64 {
        match self.scheme {
            Scheme::CrankNicolson => state.t + 0.5 * self.dt,
            Scheme::Bdf3 => state.t + self.dt,
        }
    }

    /// Full `[u | p]` right-hand side with boundary rows zeroed.
    pub fn rhs(&self, state: &StepState, load: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let (u_hist, eta_base) = self.history(state)?;
        let mass_scale = match self.scheme {
            Scheme::CrankNicolson => 2.0 / self.dt,
            Scheme::Bdf3 => 1.0 / self.dt,
        };
        let mu = p.ops.mass_rho.mul_vec(&u_hist);
        let ke = p.stiffness.mul_vec(&eta_base);
        let mut rhs = vec![0.0; p.n_u() + p.n_p()];
        for i in 0..p.n_u() {
            rhs[i] = mass_scale * mu[i] + load[i] - ke[i];
        }
        self.blocks.apply_bc_rhs(&mut rhs);
        Ok(rhs)
    }

    /// Solves the full `[u | p]` system through condensation.
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
        let reduced = self.condensed.reduce_rhs(rhs);
        let out = self.solver.solve(&reduced)?;
        Ok((self.condensed.recover(&out.x, rhs), out.iterations, out.residual))
    }

    pub fn cn_step(&self, state: &StepState, loads: &LoadFn) -> Result<(StepState, StepOutput)> {
        debug_assert_eq!(self.scheme, Scheme::CrankNicolson);
        let p = self.problem;
        let load = loads(self.load_time(state));
        let rhs = self.rhs(state, &load)?;
        let (x, iterations, residual) = self.solve(&rhs)?;
        let (mid, pressure) = x.split_at(p.n_u());
        let prev = state.current();
        let u: Vec<f64> = mid.iter().zip(&prev.u).map(|(m, o)| 2.0 * m - o).collect();
        let eta: Vec<f64> = (0..p.n_u())
            .map(|i| if p.solid_mask[i] { prev.eta[i] + self.dt * mid[i] } else { 0.0 })
            .collect();
        let mut levels = state.levels.clone();
        levels.push_front(Level { u, eta });
        levels.truncate(3);
        Ok((
            StepState {
                step: state.step + 1,
                t: state.t + self.dt,
                levels,
            },
            StepOutput {
                solved_velocity: mid.to_vec(),
                pressure: pressure.to_vec(),
                iterations,
                residual,
            },
        ))
    }

    pub fn bdf3_step(&self, state: &StepState, loads: &LoadFn) -> Result<(StepState, StepOutput)> {
        debug_assert_eq!(self.scheme, Scheme::Bdf3);
        let p = self.problem;
        let load = loads(self.load_time(state));
        let rhs = self.rhs(state, &load)?;
        let (x, iterations, residual) = self.solve(&rhs)?;
        let (u, pressure) = x.split_at(p.n_u());
        let (_, eta_hist) = self.history(state)?;
        let c = self.blocks.coeffs.solid;
        let eta: Vec<f64> = (0..p.n_u())
            .map(|i| if p.solid_mask[i] { eta_hist[i] + c * u[i] } else { 0.0 })
            .collect();
        let mut levels = state.levels.clone();
        levels.push_front(Level { u: u.to_vec(), eta });
        levels.truncate(3);
        Ok((
            StepState {
                step: state.step + 1,
                t: state.t + self.dt,
                levels,
            },
            StepOutput {
                solved_velocity: u.to_vec(),
                pressure: pressure.to_vec(),
                iterations,
                residual,
            },
        ))
    }

    pub fn step(&self, state: &StepState, loads: &LoadFn) -> Result<(StepState, StepOutput)> {
        match self.scheme {
            Scheme::CrankNicolson => self.cn_step(state, loads),
            Scheme::Bdf3 => self.bdf3_step(state, loads),
        }
    }
}

fn interpolate_level(problem: &Problem, data: &InitialData, t: f64) -> Level {
    match data {
        InitialData::Rest => Level::zero(problem.n_u()),
        InitialData::Exact { velocity, displacement } => {
            let sp = &problem.spaces;
            let u = sp.interpolate_compound(&problem.mesh, |p| velocity(p, t));
            let eta = sp.interpolate_compound(&problem.mesh, |p| displacement(p, t));
            let zero_bc = |v: Vec<f64>| -> Vec<f64> {
                v.iter().zip(&problem.constrained).map(|(x, &c)| if c { 0.0 } else { *x }).collect()
            };
            Level {
                u: zero_bc(u),
                eta: problem.restrict_solid(&zero_bc(eta)),
            }
        }
    }
}

/// Builds the starting state. BDF3 takes its history from the exact
/// solution when one is given, otherwise from two Crank-Nicolson steps if
/// `bootstrap` is set.
pub fn init_state(
    problem: &Problem,
    scheme: Scheme,
    dt: f64,
    data: &InitialData,
    bootstrap: bool,
    loads: &LoadFn,
    config: &SolverConfig,
) -> Result<StepState> {
    let first = interpolate_level(problem, data, 0.0);
    match scheme {
        Scheme::CrankNicolson => Ok(StepState {
            step: 0,
            t: 0.0,
            levels: VecDeque::from(vec![first]),
        }),
        Scheme::Bdf3 => match data {
            InitialData::Exact { .. } => Ok(StepState {
                step: 2,
                t: 2.0 * dt,
                levels: VecDeque::from(vec![
                    interpolate_level(problem, data, 2.0 * dt),
                    interpolate_level(problem, data, dt),
                    first,
                ]),
            }),
            InitialData::Rest if bootstrap => {
                let cn = Stepper::new(problem, Scheme::CrankNicolson, dt, config)?;
                let mut state = StepState {
                    step: 0,
                    t: 0.0,
                    levels: VecDeque::from(vec![first]),
                };
                for _ in 0..2 {
                    state = cn.cn_step(&state, loads)?.0;
                }
                state.levels.truncate(3);
                Ok(state)
            }
            InitialData::Rest => Err(Error::Config(
                "BDF3 needs an exact solution for its start-up history or the bootstrap flag".into(),
            )),
        },
    }
}

/// Number of uniform steps covering `[0, t_final]`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if t_final < dt {
        return Err(Error::Config(format!("t_final {t_final} is shorter than dt {dt}")));
    }
    let n = (t_final / dt).round();
    if ((n * dt - t_final) / t_final).abs() > 1e-9 {
        return Err(Error::Config(format!("t_final {t_final} is not a multiple of dt {dt}")));
    }
    Ok(n as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub max_fluid_divergence: f64,
    pub velocity_norm: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct TransientReport {
    pub state: StepState,
    pub last_output: Option<StepOutput>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl TransientReport {
    /// Mean of the per-step iteration counts.
    pub fn average_iterations(&self) -> f64 {
        if self.diagnostics.is_empty() {
            return 0.0;
        }
        self.diagnostics.iter().map(|d| d.iterations as f64).sum::<f64>() / self.diagnostics.len() as f64
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "step,t,energy,max_fluid_divergence,minres_iters,residual")?;
        for d in &self.diagnostics {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{},{:.17e}",
                d.step, d.t, d.energy, d.max_fluid_divergence, d.iterations, d.residual
            )?;
        }
        Ok(())
    }
}

/// Steps from the initial data to `t_final`.
pub fn run_transient(
    problem: &Problem,
    scheme: Scheme,
    dt: f64,
    t_final: f64,
    data: &InitialData,
    bootstrap: bool,
    loads: &LoadFn,
    config: &SolverConfig,
) -> Result<TransientReport> {
    let n_steps = step_count(t_final, dt)?;
    let stepper = Stepper::new(problem, scheme, dt, config)?;
    let mut state = init_state(problem, scheme, dt, data, bootstrap, loads, config)?;
    let mut diagnostics = Vec::with_capacity(n_steps);
    let mut last_output = None;
    while state.step < n_steps {
        let (next, out) = stepper.step(&state, loads).map_err(|e| Error::Step {
            step: state.step + 1,
            source: Box::new(e),
        })?;
        let lvl = next.current();
        diagnostics.push(StepDiagnostics {
            step: next.step,
            t: next.t,
            energy: problem.energy(&lvl.u, &lvl.eta),
            max_fluid_divergence: problem.max_fluid_divergence(&lvl.u),
            velocity_norm: problem.l2_norm(&lvl.u),
            iterations: out.iterations,
            residual: out.residual,
        });
        state = next;
        last_output = Some(out);
    }
    Ok(TransientReport {
        state,
        last_output,
        diagnostics,
    })
}
