//! Command-line drivers: configuration, experiment runners and the
//! invariant self-check.

mod check;
mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use check::{run_checks, CheckResult};
pub use config::{parse_config, parse_config_file, CaseConfig, Experiment, GeometryKind, PulseSettings, TimeStep};

use crate::error::{Error, Result};
use crate::mesh::{BoundarySpec, Geometry, Mesh};
use crate::stepper::{run_transient, InitialData, Problem, Stepper};
use crate::verify::{
    run_convergence_study, run_pulse_benchmark, write_convergence_csv, write_samples_csv, ErrorRow, ManufacturedCase,
    PulseConfig, PulseResult, StudyConfig,
};

/// Where and what to write besides the experiment's own CSV files.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: usize,
    /// Write `mesh_n<n>.txt` for each mesh.
    pub dump_mesh: bool,
    /// Write the assembled system of the first time step as `system_n<n>.coo`.
    pub export_matrix: bool,
}

/// `FSIHDG_OUT` wins over the command line, which wins over the config file.
pub fn resolve_output_dir(cli: Option<&Path>, config: &CaseConfig) -> PathBuf {
    if let Ok(dir) = std::env::var("FSIHDG_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    cli.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn build_mesh(geometry: GeometryKind, n: usize) -> Result<Mesh> {
    let (geo, spec) = match geometry {
        GeometryKind::Manufactured => (Geometry::manufactured(), BoundarySpec::by_region()),
        GeometryKind::Channel => (Geometry::channel(), BoundarySpec::channel()),
    };
    let mut mesh = Mesh::structured(&geo, n)?;
    mesh.classify_boundary(&spec)?;
    Ok(mesh)
}

fn write_extras(cfg: &CaseConfig, opts: &RunOptions, n: usize) -> Result<()> {
    if !opts.dump_mesh && !opts.export_matrix {
        return Ok(());
    }
    let mesh = build_mesh(cfg.geometry, n)?;
    if opts.dump_mesh {
        let mut f = create(&opts.out, &format!("mesh_n{n}.txt"))?;
        f.write_all(mesh.to_text().as_bytes())?;
    }
    if opts.export_matrix {
        let problem = Problem::new(mesh, cfg.k, cfg.material, cfg.bcs.clone())?;
        let stepper = Stepper::new(&problem, cfg.scheme, cfg.dt.for_mesh(n), &cfg.solver)?;
        let mut f = create(&opts.out, &format!("system_n{n}.coo"))?;
        stepper.blocks.write_coordinate(&mut f)?;
    }
    Ok(())
}

pub fn run_converge(cfg: &CaseConfig, opts: &RunOptions) -> Result<Vec<ErrorRow>> {
    let study = StudyConfig {
        k: cfg.k,
        scheme: cfg.scheme,
        ns: cfg.ns.clone(),
        grid: cfg.grid.clone(),
        t_final: cfg.t_final,
        dt: match cfg.dt {
            TimeStep::MeshSize => None,
            TimeStep::Fixed(dt) => Some(dt),
        },
        solver: cfg.solver.clone(),
        jobs: opts.jobs,
    };
    let rows = run_convergence_study(&study)?;
    let mut f = create(&opts.out, "convergence.csv")?;
    write_convergence_csv(&rows, &mut f)?;
    f.flush()?;
    for &n in &cfg.ns {
        write_extras(cfg, opts, n)?;
    }
    Ok(rows)
}

pub fn pulse_config(cfg: &CaseConfig) -> PulseConfig {
    let n = cfg.ns[0];
    PulseConfig {
        k: cfg.k,
        n,
        dt: cfg.dt.for_mesh(n),
        t_final: cfg.t_final,
        p_max: cfg.pulse.p_max,
        t_max: cfg.pulse.t_max,
        samples: cfg.pulse.samples,
        params: cfg.material,
        bcs: cfg.bcs.clone(),
        pulse_tags: cfg.pulse_tags.clone(),
        scheme: cfg.scheme,
        bootstrap: cfg.bootstrap,
        solver: cfg.solver.clone(),
    }
}

pub fn run_pulse(cfg: &CaseConfig, opts: &RunOptions) -> Result<PulseResult> {
    if cfg.geometry != GeometryKind::Channel {
        return Err(Error::Config("pulse2d needs the channel geometry".into()));
    }
    let result = run_pulse_benchmark(&pulse_config(cfg))?;
    for (name, curve) in [
        ("pulse_flow.csv", &result.flow),
        ("pulse_pressure.csv", &result.pressure),
        ("pulse_disp.csv", &result.displacement),
    ] {
        let mut f = create(&opts.out, name)?;
        write_samples_csv(curve, &mut f)?;
        f.flush()?;
    }
    let mut f = create(&opts.out, "diagnostics.csv")?;
    result.report.write_csv(&mut f)?;
    f.flush()?;
    write_extras(cfg, opts, cfg.ns[0])?;
    Ok(result)
}

/// Summary of a single run.
#[derive(Clone, Debug)]
pub struct SingleSummary {
    pub n: usize,
    pub steps: usize,
    pub average_iterations: f64,
    /// Final-time L2 velocity error on the manufactured geometry.
    pub error: Option<f64>,
}

/// One transient run on the first mesh, writing `diagnostics.csv`. On the
/// manufactured geometry the exact solution supplies the data and the error.
pub fn run_single(cfg: &CaseConfig, opts: &RunOptions) -> Result<SingleSummary> {
    let n = cfg.ns[0];
    let dt = cfg.dt.for_mesh(n);
    let (report, error) = match cfg.geometry {
        GeometryKind::Channel => (run_pulse(cfg, opts)?.report, None),
        GeometryKind::Manufactured => {
            let case = ManufacturedCase {
                params: cfg.material,
            };
            let problem = Problem::new(case.mesh(n)?, cfg.k, cfg.material, cfg.bcs.clone())?;
            let loads = case.loads(&problem);
            let vel = |p, t| case.velocity(p, t);
            let disp = |p, t| case.displacement(p, t);
            let data = InitialData::Exact {
                velocity: &vel,
                displacement: &disp,
            };
            let report = run_transient(&problem, cfg.scheme, dt, cfg.t_final, &data, cfg.bootstrap, &loads, &cfg.solver)?;
            let t = report.state.t;
            let err = problem.l2_error(&report.state.current().u, |p| case.velocity(p, t));
            let mut f = create(&opts.out, "diagnostics.csv")?;
            report.write_csv(&mut f)?;
            f.flush()?;
            write_extras(cfg, opts, n)?;
            (report, Some(err))
        }
    };
    Ok(SingleSummary {
        n,
        steps: report.diagnostics.len(),
        average_iterations: report.average_iterations(),
        error,
    })
}
