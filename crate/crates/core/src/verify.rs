//! Manufactured-solution convergence study, the pressure-pulse channel
//! benchmark, error norms and energy diagnostics.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::forms::{facet_traction_load, inlet_load, inlet_pressure, volume_load, MaterialParams};
use crate::krylov::SolverConfig;
use crate::mesh::{BoundarySpec, FacetKind, Geometry, Mesh, Point, Region};
use crate::spaces::{BcTable, Grad2, Vector2};
use crate::stepper::{run_transient, InitialData, Level, Problem, Scheme, TransientReport};

/// Closed-form solution on the fluid box `(0,1) x (-1,0)` below the solid
/// box `(0,1) x (0,0.5)`, with `u = S sin 2t`, `eta = S sin^2 t` and
/// `p = sin 2 pi x sin 2 pi y sin t` in the fluid.
#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub params: MaterialParams,
}

const A_Y: f64 = 8.0 * PI / 3.0;
const B_Y: f64 = 4.0 * PI / 3.0;

impl ManufacturedCase {
    pub fn new(rho_s: f64, delta1: f64, delta2: f64) -> Self {
        Self {
            params: MaterialParams::from_ratios(rho_s, delta1, delta2),
        }
    }

    /// Spatial profile `S` shared by velocity and displacement.
    pub fn profile(&self, p: Point) -> Vector2 {
        let (x, y) = (p[0], p[1]);
        let a = (2.0 * PI * x).sin().powi(2) * (A_Y * (y + 1.0)).sin();
        let c = -1.5 * (4.0 * PI * x).sin() * (B_Y * (y + 1.0)).sin().powi(2);
        [a, c]
    }

    pub fn profile_grad(&self, p: Point) -> Grad2 {
        let (x, y) = (p[0], p[1]);
        let s1 = (2.0 * PI * x).sin().powi(2);
        let ds1 = 2.0 * PI * (4.0 * PI * x).sin();
        let b = (A_Y * (y + 1.0)).sin();
        let db = A_Y * (A_Y * (y + 1.0)).cos();
        let c = -1.5 * (4.0 * PI * x).sin();
        let dc = -6.0 * PI * (4.0 * PI * x).cos();
        let e = (B_Y * (y + 1.0)).sin().powi(2);
        let de = B_Y * (2.0 * B_Y * (y + 1.0)).sin();
        [[ds1 * b, s1 * db], [dc * e, c * de]]
    }

    pub fn profile_laplacian(&self, p: Point) -> Vector2 {
        let (x, y) = (p[0], p[1]);
        let s1 = (2.0 * PI * x).sin().powi(2);
        let d2s1 = 8.0 * PI * PI * (4.0 * PI * x).cos();
        let b = (A_Y * (y + 1.0)).sin();
        let c = -1.5 * (4.0 * PI * x).sin();
        let d2c = 24.0 * PI * PI * (4.0 * PI * x).sin();
        let e = (B_Y * (y + 1.0)).sin().powi(2);
        let d2e = 2.0 * B_Y * B_Y * (2.0 * B_Y * (y + 1.0)).cos();
        [d2s1 * b - A_Y * A_Y * s1 * b, d2c * e + c * d2e]
    }

    pub fn velocity(&self, p: Point, t: f64) -> Vector2 {
        let s = self.profile(p);
        let f = (2.0 * t).sin();
        [s[0] * f, s[1] * f]
    }

    pub fn displacement(&self, p: Point, t: f64) -> Vector2 {
        let s = self.profile(p);
        let f = t.sin().powi(2);
        [s[0] * f, s[1] * f]
    }

    pub fn pressure(&self, p: Point, t: f64) -> f64 {
        (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin() * t.sin()
    }

    pub fn pressure_grad(&self, p: Point, t: f64) -> Vector2 {
        let (x, y) = (p[0], p[1]);
        [
            2.0 * PI * (2.0 * PI * x).cos() * (2.0 * PI * y).sin() * t.sin(),
            2.0 * PI * (2.0 * PI * x).sin() * (2.0 * PI * y).cos() * t.sin(),
        ]
    }

    /// Body force of the given region.
    pub fn force(&self, region: Region, p: Point, t: f64) -> Vector2 {
        let s = self.profile(p);
        let lap = self.profile_laplacian(p);
        let pr = &self.params;
        match region {
            Region::Fluid => {
                let g = self.pressure_grad(p, t);
                let (d1, d2) = (2.0 * (2.0 * t).cos(), (2.0 * t).sin());
                [
                    pr.rho_f * s[0] * d1 - pr.mu_f * lap[0] * d2 + g[0],
                    pr.rho_f * s[1] * d1 - pr.mu_f * lap[1] * d2 + g[1],
                ]
            }
            Region::Solid => {
                let (d1, d2) = (2.0 * (2.0 * t).cos(), t.sin().powi(2));
                [
                    pr.rho_s * s[0] * d1 - pr.mu_s * lap[0] * d2 + pr.beta_s * s[0] * d2,
                    pr.rho_s * s[1] * d1 - pr.mu_s * lap[1] * d2 + pr.beta_s * s[1] * d2,
                ]
            }
        }
    }

    /// Traction jump on the interface `y = 0`: fluid stress minus solid
    /// stress applied to the upward unit normal.
    pub fn interface_traction(&self, p: Point, t: f64) -> Vector2 {
        let g = self.profile_grad(p);
        let dxy = 0.5 * (g[0][1] + g[1][0]);
        let dyy = g[1][1];
        let pr = &self.params;
        let fu = 2.0 * pr.mu_f * (2.0 * t).sin();
        let fe = 2.0 * pr.mu_s * t.sin().powi(2);
        [(fu - fe) * dxy, (fu - fe) * dyy - self.pressure(p, t)]
    }

    pub fn mesh(&self, n: usize) -> Result<Mesh> {
        let mut mesh = Mesh::structured(&Geometry::manufactured(), n)?;
        mesh.classify_boundary(&BoundarySpec::by_region())?;
        Ok(mesh)
    }

    pub fn bcs() -> BcTable {
        BcTable::walls(&["fluid_exterior", "solid_exterior"])
    }

    pub fn problem(&self, n: usize, k: usize) -> Result<Problem> {
        Problem::new(self.mesh(n)?, k, self.params, Self::bcs())
    }

    /// Load functional `t -> (f(t), v) + <g(t), v>_interface`.
    pub fn loads<'a>(&'a self, problem: &'a Problem) -> impl Fn(f64) -> Vec<f64> + 'a {
        let interface = problem.mesh.facets_of_kind(&FacetKind::Interface);
        move |t| {
            let mut f = volume_load(&problem.mesh, &problem.spaces, |r, p| self.force(r, p, t));
            let g = facet_traction_load(&problem.mesh, &problem.spaces, &interface, |_, p| self.interface_traction(p, t));
            for (a, b) in f.iter_mut().zip(g) {
                *a += b;
            }
            f
        }
    }
}

/// Energy and the diagnostic (semi)norms of one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyNorms {
    pub energy: f64,
    /// Broken strain plus projected-jump seminorm on the fluid.
    pub fluid: f64,
    /// Same seminorm of the displacement on the solid.
    pub solid: f64,
    /// Fluid seminorm augmented by `h ||D(u)||^2` on element boundaries.
    pub fluid_star: f64,
    /// `(||rho^1/2 u||^2 + 2 mu_s |eta|_s^2 + lambda_s ||div eta||_s^2)^1/2`.
    pub triple: f64,
}

pub fn energy_and_norms(problem: &Problem, level: &Level) -> EnergyNorms {
    let ops = &problem.ops;
    let pr = &problem.params;
    let fluid2 = ops.strain_fluid.quad(&level.u) + ops.penalty_fluid.quad(&level.u);
    let solid2 = ops.strain_solid.quad(&level.eta) + ops.penalty_solid.quad(&level.eta);
    let star2 = fluid2 + ops.boundary_strain_fluid.quad(&level.u);
    let kinetic = ops.mass_rho.quad(&level.u);
    let div2 = ops.divdiv_solid.quad(&level.eta);
    EnergyNorms {
        energy: problem.energy(&level.u, &level.eta),
        fluid: fluid2.max(0.0).sqrt(),
        solid: solid2.max(0.0).sqrt(),
        fluid_star: star2.max(0.0).sqrt(),
        triple: (kinetic + 2.0 * pr.mu_s * solid2 + pr.lambda_s * div2).max(0.0).sqrt(),
    }
}

/// One row of the convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub k: usize,
    pub n: usize,
    pub rho_s: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub error: f64,
    /// `log2(e_coarse / e_fine)` against the previous mesh of the same case.
    pub eoc: Option<f64>,
    pub avg_iters: f64,
    pub max_divergence_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub k: usize,
    pub scheme: Scheme,
    pub ns: Vec<usize>,
    /// `(rho_s, delta1, delta2)` triples.
    pub grid: Vec<(f64, f64, f64)>,
    pub t_final: f64,
    /// Time step per mesh; `None` means `dt = 1/n`.
    pub dt: Option<f64>,
    pub solver: SolverConfig,
    pub jobs: usize,
}

/// Final-time L2 velocity error and diagnostics of one manufactured run.
pub fn manufactured_run(
    case: &ManufacturedCase,
    n: usize,
    k: usize,
    scheme: Scheme,
    dt: f64,
    t_final: f64,
    solver: &SolverConfig,
) -> Result<(f64, TransientReport)> {
    let problem = case.problem(n, k)?;
    let loads = case.loads(&problem);
    let vel = |p: Point, t: f64| case.velocity(p, t);
    let disp = |p: Point, t: f64| case.displacement(p, t);
    let data = InitialData::Exact {
        velocity: &vel,
        displacement: &disp,
    };
    let report = run_transient(&problem, scheme, dt, t_final, &data, false, &loads, solver)?;
    let t = report.state.t;
    let err = problem.l2_error(&report.state.current().u, |p| case.velocity(p, t));
    Ok((err, report))
}

fn run_case(cfg: &StudyConfig, tri: (f64, f64, f64)) -> Result<Vec<ErrorRow>> {
    let case = ManufacturedCase::new(tri.0, tri.1, tri.2);
    let mut rows: Vec<ErrorRow> = Vec::new();
    for &n in &cfg.ns {
        let dt = cfg.dt.unwrap_or(1.0 / n as f64);
        let (error, report) =
            manufactured_run(&case, n, cfg.k, cfg.scheme, dt, cfg.t_final, &cfg.solver).map_err(|e| Error::Case {
                rho_s: tri.0,
                delta1: tri.1,
                delta2: tri.2,
                n,
                source: Box::new(e),
            })?;
        let eoc = rows.last().map(|prev: &ErrorRow| (prev.error / error).log2() / (n as f64 / prev.n as f64).log2());
        let max_divergence_ratio = report
            .diagnostics
            .iter()
            .map(|d| if d.velocity_norm > 0.0 { d.max_fluid_divergence / d.velocity_norm } else { 0.0 })
            .fold(0.0, f64::max);
        rows.push(ErrorRow {
            k: cfg.k,
            n,
            rho_s: tri.0,
            delta1: tri.1,
            delta2: tri.2,
            error,
            eoc,
            avg_iters: report.average_iterations(),
            max_divergence_ratio,
        });
    }
    Ok(rows)
}

/// Runs every parameter triple on every mesh; triples may run in parallel.
pub fn run_convergence_study(cfg: &StudyConfig) -> Result<Vec<ErrorRow>> {
    let jobs = cfg.jobs.max(1).min(cfg.grid.len().max(1));
    let results: Vec<Result<Vec<ErrorRow>>> = if jobs <= 1 {
        cfg.grid.iter().map(|&tri| run_case(cfg, tri)).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<Vec<ErrorRow>>>>> =
            cfg.grid.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= cfg.grid.len() {
                        break;
                    }
                    let r = run_case(cfg, cfg.grid[i]);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn write_convergence_csv(rows: &[ErrorRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "k,inv_h,rho_s,delta1,delta2,error,eoc,avg_iters")?;
    for r in rows {
        let eoc = r.eoc.map(|e| format!("{e:.17e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
            r.k, r.n, r.rho_s, r.delta1, r.delta2, r.error, eoc, r.avg_iters
        )?;
    }
    Ok(())
}

/// Channel benchmark settings.
#[derive(Clone, Debug)]
pub struct PulseConfig {
    pub k: usize,
    /// Cells per unit length.
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub p_max: f64,
    pub t_max: f64,
    pub samples: usize,
    pub params: MaterialParams,
    pub bcs: BcTable,
    /// Boundary tags loaded by the inlet pressure pulse.
    pub pulse_tags: Vec<String>,
    pub scheme: Scheme,
    /// Start BDF3 from two Crank-Nicolson steps.
    pub bootstrap: bool,
    pub solver: SolverConfig,
}

impl PulseConfig {
    pub fn standard(k: usize, n: usize) -> Self {
        Self {
            k,
            n,
            dt: 1e-4,
            t_final: 1.2e-2,
            p_max: 1.333e4,
            t_max: 0.03,
            samples: 200,
            params: MaterialParams::blood_vessel(),
            bcs: BcTable::channel(),
            pulse_tags: vec!["inlet".to_string()],
            scheme: Scheme::CrankNicolson,
            bootstrap: false,
            solver: SolverConfig {
                tol: 1e-6,
                ..Default::default()
            },
        }
    }
}

/// Line samples `(x, value)` at the final time.
#[derive(Clone, Debug)]
pub struct PulseResult {
    pub flow: Vec<(f64, f64)>,
    pub pressure: Vec<(f64, f64)>,
    pub displacement: Vec<(f64, f64)>,
    pub report: TransientReport,
}

pub fn channel_problem(cfg: &PulseConfig) -> Result<Problem> {
    let mut mesh = Mesh::structured(&Geometry::channel(), cfg.n)?;
    mesh.classify_boundary(&BoundarySpec::channel())?;
    Problem::new(mesh, cfg.k, cfg.params, cfg.bcs.clone())
}

/// Samples flow rate `(2/3) u_x` and pressure on the channel bottom and the
/// vertical displacement on the interface.
pub fn sample_lines(
    problem: &Problem,
    level: &Level,
    pressure: &[f64],
    samples: usize,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let mesh = &problem.mesh;
    let sp = &problem.spaces;
    let rect = Geometry::channel().fluid;
    let (x0, x1) = (rect.x0, rect.x1);
    let y_bottom = rect.y0;
    let y_iface = rect.y1;
    let mut flow = Vec::with_capacity(samples);
    let mut pres = Vec::with_capacity(samples);
    let mut disp = Vec::with_capacity(samples);
    for i in 0..samples {
        let x = if samples > 1 { x0 + (x1 - x0) * i as f64 / (samples - 1) as f64 } else { x0 };
        let pb = [x, y_bottom];
        let ef = mesh
            .locate(pb, Some(Region::Fluid))
            .ok_or_else(|| Error::Geometry(format!("sample point {pb:?} outside the fluid")))?;
        flow.push((x, 2.0 / 3.0 * sp.eval_velocity(mesh, &level.u, ef, pb)[0]));
        pres.push((x, sp.eval_pressure(pressure, ef, pb)));
        let pi = [x, y_iface];
        let es = mesh
            .locate(pi, Some(Region::Solid))
            .ok_or_else(|| Error::Geometry(format!("sample point {pi:?} outside the solid")))?;
        disp.push((x, sp.eval_velocity(mesh, &level.eta, es, pi)[1]));
    }
    Ok((flow, pres, disp))
}

pub fn run_pulse_benchmark(cfg: &PulseConfig) -> Result<PulseResult> {
    let problem = channel_problem(cfg)?;
    let inlet: Vec<usize> = cfg.pulse_tags.iter().flat_map(|t| problem.mesh.facets_with_tag(t)).collect();
    let unit = inlet_load(&problem.mesh, &problem.spaces, &inlet, 1.0);
    let loads = |t: f64| -> Vec<f64> {
        let p = inlet_pressure(t, cfg.p_max, cfg.t_max);
        unit.iter().map(|v| v * p).collect()
    };
    let report = run_transient(
        &problem,
        cfg.scheme,
        cfg.dt,
        cfg.t_final,
        &InitialData::Rest,
        cfg.bootstrap,
        &loads,
        &cfg.solver,
    )?;
    let pressure = report.last_output.as_ref().map(|o| o.pressure.clone()).unwrap_or_else(|| vec![0.0; problem.n_p()]);
    let (flow, pressure, displacement) = sample_lines(&problem, report.state.current(), &pressure, cfg.samples)?;
    Ok(PulseResult {
        flow,
        pressure,
        displacement,
        report,
    })
}

pub fn write_samples_csv(samples: &[(f64, f64)], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "x,value")?;
    for (x, v) in samples {
        writeln!(out, "{x:.17e},{v:.17e}")?;
    }
    Ok(())
}

/// Relative discrete L2 difference of two sampled curves on the same points.
pub fn relative_curve_difference(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(p, q)| (p.1 - q.1).powi(2)).sum();
    let den: f64 = b.iter().map(|q| q.1 * q.1).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
