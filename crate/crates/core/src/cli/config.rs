//! Case configuration: a TOML document parsed by hand so that every
//! violation is reported at once.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::forms::MaterialParams;
use crate::krylov::{InverseBackend, SolveMethod, SolverConfig, VelocityKind};
use crate::spaces::{BcTable, Constraint, FacetBc};
use crate::stepper::Scheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Converge,
    Pulse2d,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    Manufactured,
    Channel,
}

impl GeometryKind {
    /// Boundary tags produced by the geometry's classification.
    pub fn tags(self) -> &'static [&'static str] {
        match self {
            GeometryKind::Manufactured => &["fluid_exterior", "solid_exterior"],
            GeometryKind::Channel => &["inlet", "outlet", "fluid_bottom", "solid_inout", "solid_top"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeStep {
    /// `dt = 1/n` for each mesh.
    MeshSize,
    Fixed(f64),
}

impl TimeStep {
    pub fn for_mesh(self, n: usize) -> f64 {
        match self {
            TimeStep::MeshSize => 1.0 / n as f64,
            TimeStep::Fixed(dt) => dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseSettings {
    pub p_max: f64,
    pub t_max: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct CaseConfig {
    pub experiment: Experiment,
    pub geometry: GeometryKind,
    pub k: usize,
    pub ns: Vec<usize>,
    pub dt: TimeStep,
    pub t_final: f64,
    pub scheme: Scheme,
    pub bootstrap: bool,
    pub material: MaterialParams,
    /// `(rho_s, delta1, delta2)` triples of a convergence study.
    pub grid: Vec<(f64, f64, f64)>,
    pub bcs: BcTable,
    /// Tags whose normal traction is the inlet pressure pulse.
    pub pulse_tags: Vec<String>,
    pub pulse: PulseSettings,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
}

struct Reader<'a> {
    errors: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn table<'t>(&mut self, root: &'t Table, name: &str, allowed: &[&str], required: bool) -> Option<&'t Table> {
        match root.get(name) {
            None => {
                if required {
                    self.errors.push(format!("missing section [{name}]"));
                }
                None
            }
            Some(Value::Table(t)) => {
                for key in t.keys() {
                    if !allowed.contains(&key.as_str()) {
                        self.errors.push(format!("unknown key {name}.{key}"));
                    }
                }
                Some(t)
            }
            Some(_) => {
                self.errors.push(format!("{name} must be a table"));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, sec: &str, key: &str) -> Option<f64> {
        match t.get(key) {
            None => None,
            Some(Value::Float(v)) => Some(*v),
            Some(Value::Integer(v)) => Some(*v as f64),
            Some(_) => {
                self.errors.push(format!("{sec}.{key} must be a number"));
                None
            }
        }
    }

    fn uint(&mut self, t: &Table, sec: &str, key: &str) -> Option<usize> {
        match t.get(key) {
            None => None,
            Some(Value::Integer(v)) if *v >= 0 => Some(*v as usize),
            Some(_) => {
                self.errors.push(format!("{sec}.{key} must be a non-negative integer"));
                None
            }
        }
    }

    fn string<'t>(&mut self, t: &'t Table, sec: &str, key: &str) -> Option<&'t str> {
        match t.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => {
                self.errors.push(format!("{sec}.{key} must be a string"));
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, t: &Table, sec: &str, key: &str, options: &[(&str, T)]) -> Option<T> {
        let s = self.string(t, sec, key)?;
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => Some(*v),
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.errors.push(format!("{sec}.{key} = \"{s}\" is not one of {names:?}"));
                None
            }
        }
    }

    fn float_list(&mut self, t: &Table, sec: &str, key: &str) -> Option<Vec<f64>> {
        match t.get(key) {
            None => None,
            Some(Value::Array(a)) => {
                let mut out = Vec::new();
                for v in a {
                    match v {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(x) => out.push(*x as f64),
                        _ => {
                            self.errors.push(format!("{sec}.{key} must hold numbers"));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            Some(Value::Float(x)) => Some(vec![*x]),
            Some(Value::Integer(x)) => Some(vec![*x as f64]),
            Some(_) => {
                self.errors.push(format!("{sec}.{key} must be a number or an array of numbers"));
                None
            }
        }
    }
}

const CASE_KEYS: &[&str] = &["experiment", "geometry", "k", "n", "dt", "t_final", "scheme", "bootstrap"];
const MATERIAL_KEYS: &[&str] = &["rho_f", "mu_f", "rho_s", "mu_s", "lambda_s", "beta_s", "alpha"];
const GRID_KEYS: &[&str] = &["rho_s", "delta1", "delta2"];
const SOLVER_KEYS: &[&str] = &["tol", "maxit", "backend", "velocity", "method"];
const PULSE_KEYS: &[&str] = &["p_max", "t_max", "samples"];
const OUTPUT_KEYS: &[&str] = &["dir"];
const BC_KEYS: &[&str] = &["normal", "tangential"];
const TOP_KEYS: &[&str] = &["case", "material", "grid", "solver", "boundary", "pulse", "output"];

pub fn parse_config_file(path: &Path) -> Result<CaseConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parses and validates a configuration; on failure the error lists every
/// violation, one per line.
pub fn parse_config(text: &str) -> Result<CaseConfig> {
    let root: Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
    let mut errors = Vec::new();
    for key in root.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown section [{key}]"));
        }
    }
    let mut r = Reader { errors: &mut errors };
    let empty = Table::new();

    let case = r.table(&root, "case", CASE_KEYS, true).unwrap_or(&empty);
    let experiment = r.choice(
        case,
        "case",
        "experiment",
        &[("converge", Experiment::Converge), ("pulse2d", Experiment::Pulse2d), ("single", Experiment::Single)],
    );
    if experiment.is_none() && !case.contains_key("experiment") {
        r.errors.push("missing case.experiment".into());
    }
    let experiment = experiment.unwrap_or(Experiment::Single);
    let default_geometry = if experiment == Experiment::Pulse2d {
        GeometryKind::Channel
    } else {
        GeometryKind::Manufactured
    };
    let geometry = r
        .choice(
            case,
            "case",
            "geometry",
            &[("manufactured", GeometryKind::Manufactured), ("channel", GeometryKind::Channel)],
        )
        .unwrap_or(default_geometry);
    match (experiment, geometry) {
        (Experiment::Converge, GeometryKind::Channel) => {
            r.errors.push("case.geometry: converge needs the manufactured geometry".into())
        }
        (Experiment::Pulse2d, GeometryKind::Manufactured) => {
            r.errors.push("case.geometry: pulse2d needs the channel geometry".into())
        }
        _ => {}
    }
    let k = r.uint(case, "case", "k").unwrap_or(1);
    if !(1..=4).contains(&k) {
        r.errors.push(format!("case.k = {k} must be in 1..=4"));
    }
    let ns: Vec<usize> = match case.get("n") {
        None => {
            r.errors.push("missing case.n".into());
            vec![]
        }
        Some(Value::Integer(v)) if *v > 0 => vec![*v as usize],
        Some(Value::Array(a)) if !a.is_empty() => {
            let v: Vec<usize> = a
                .iter()
                .filter_map(|x| match x {
                    Value::Integer(i) if *i > 0 => Some(*i as usize),
                    _ => None,
                })
                .collect();
            if v.len() != a.len() {
                r.errors.push("case.n must hold positive integers".into());
            }
            v
        }
        Some(_) => {
            r.errors.push("case.n must be a positive integer or a non-empty array of them".into());
            vec![]
        }
    };
    let dt = match case.get("dt") {
        None => {
            r.errors.push("missing case.dt".into());
            TimeStep::MeshSize
        }
        Some(Value::String(s)) if s == "h" => TimeStep::MeshSize,
        Some(Value::Float(_)) | Some(Value::Integer(_)) => {
            let v = r.float(case, "case", "dt").unwrap();
            if !(v > 0.0) {
                r.errors.push(format!("case.dt = {v} must be positive"));
            }
            TimeStep::Fixed(v)
        }
        Some(_) => {
            r.errors.push("case.dt must be a positive number or \"h\"".into());
            TimeStep::MeshSize
        }
    };
    let t_final = r.float(case, "case", "t_final");
    if t_final.is_none() && !case.contains_key("t_final") {
        r.errors.push("missing case.t_final".into());
    }
    let t_final = t_final.unwrap_or(0.0);
    for &n in &ns {
        let step = dt.for_mesh(n);
        if step > 0.0 && t_final < step {
            r.errors.push(format!("case.t_final = {t_final} is shorter than dt = {step} (n = {n})"));
        }
    }
    let scheme = r
        .choice(case, "case", "scheme", &[("cn", Scheme::CrankNicolson), ("bdf3", Scheme::Bdf3)])
        .unwrap_or(Scheme::CrankNicolson);
    let bootstrap = match case.get("bootstrap") {
        None => false,
        Some(Value::Boolean(b)) => *b,
        Some(_) => {
            r.errors.push("case.bootstrap must be a boolean".into());
            false
        }
    };
    if scheme == Scheme::Bdf3 && geometry == GeometryKind::Channel && !bootstrap {
        r.errors.push("case.scheme = \"bdf3\" without an exact solution needs case.bootstrap = true".into());
    }

    // material
    let mut material = match geometry {
        GeometryKind::Channel => MaterialParams::blood_vessel(),
        GeometryKind::Manufactured => MaterialParams::default(),
    };
    if let Some(m) = r.table(&root, "material", MATERIAL_KEYS, false) {
        if experiment == Experiment::Converge {
            for key in m.keys() {
                r.errors.push(format!("material.{key} is not used by converge; set [grid] instead"));
            }
        }
        let fields: [(&str, &mut f64); 7] = [
            ("rho_f", &mut material.rho_f),
            ("mu_f", &mut material.mu_f),
            ("rho_s", &mut material.rho_s),
            ("mu_s", &mut material.mu_s),
            ("lambda_s", &mut material.lambda_s),
            ("beta_s", &mut material.beta_s),
            ("alpha", &mut material.alpha),
        ];
        for (key, slot) in fields {
            if let Some(v) = r.float(m, "material", key) {
                *slot = v;
            }
        }
    }
    for v in material.violations() {
        r.errors.push(format!("material: {v}"));
    }

    // grid
    let mut grid = Vec::new();
    if let Some(g) = r.table(&root, "grid", GRID_KEYS, experiment == Experiment::Converge) {
        if experiment != Experiment::Converge {
            r.errors.push("[grid] is only used by converge".into());
        }
        let rho = r.float_list(g, "grid", "rho_s").unwrap_or_else(|| vec![1.0]);
        let d1 = r.float_list(g, "grid", "delta1").unwrap_or_else(|| vec![1.0]);
        let d2 = r.float_list(g, "grid", "delta2").unwrap_or_else(|| vec![1.0]);
        for (name, list) in [("rho_s", &rho), ("delta1", &d1), ("delta2", &d2)] {
            if list.iter().any(|v| !(*v > 0.0)) {
                r.errors.push(format!("grid.{name} values must be positive"));
            }
        }
        for &a in &rho {
            for &b in &d1 {
                for &c in &d2 {
                    grid.push((a, b, c));
                }
            }
        }
    }

    // solver
    let mut solver = SolverConfig::default();
    if experiment == Experiment::Pulse2d {
        solver.tol = 1e-6;
    }
    if let Some(s) = r.table(&root, "solver", SOLVER_KEYS, false) {
        if let Some(tol) = r.float(s, "solver", "tol") {
            if !(tol > 0.0 && tol < 1.0) {
                r.errors.push(format!("solver.tol = {tol} must lie in (0, 1)"));
            }
            solver.tol = tol;
        }
        if let Some(m) = r.uint(s, "solver", "maxit") {
            if m == 0 {
                r.errors.push("solver.maxit must be positive".into());
            }
            solver.maxit = m;
        }
        if let Some(b) = r.choice(s, "solver", "backend", &[("direct", InverseBackend::Direct), ("amg", InverseBackend::Amg)]) {
            solver.backend = b;
        }
        if let Some(v) = r.choice(
            s,
            "solver",
            "velocity",
            &[("auxiliary", VelocityKind::Auxiliary), ("exact", VelocityKind::Exact)],
        ) {
            solver.velocity = v;
        }
        if let Some(m) = r.choice(s, "solver", "method", &[("minres", SolveMethod::Minres), ("direct", SolveMethod::Direct)]) {
            solver.method = m;
        }
    }

    // boundary conditions
    let mut bcs = BcTable::default();
    let mut pulse_tags = Vec::new();
    match root.get("boundary") {
        Some(Value::Table(b)) => {
            for tag in b.keys() {
                if !geometry.tags().contains(&tag.as_str()) {
                    r.errors.push(format!("boundary.{tag}: the geometry has no such boundary tag"));
                    continue;
                }
                let Some(row) = r.table(b, tag, BC_KEYS, true) else { continue };
                let sec = format!("boundary.{tag}");
                let normal = match r.string(row, &sec, "normal") {
                    Some("essential") => Some(Constraint::Essential),
                    Some("natural") => Some(Constraint::Natural),
                    Some("pulse") => {
                        pulse_tags.push(tag.clone());
                        Some(Constraint::Natural)
                    }
                    Some(other) => {
                        r.errors.push(format!("{sec}.normal = \"{other}\" is not one of essential, natural, pulse"));
                        None
                    }
                    None => {
                        r.errors.push(format!("missing {sec}.normal"));
                        None
                    }
                };
                let tangential = r.choice(
                    row,
                    &sec,
                    "tangential",
                    &[("essential", Constraint::Essential), ("natural", Constraint::Natural)],
                );
                if !row.contains_key("tangential") {
                    r.errors.push(format!("missing {sec}.tangential"));
                }
                if let (Some(normal), Some(tangential)) = (normal, tangential) {
                    bcs.rows.push((tag.clone(), FacetBc { normal, tangential }));
                }
            }
        }
        Some(_) => r.errors.push("boundary must be a table of per-tag tables".into()),
        None => {}
    }
    for tag in geometry.tags() {
        if !root
            .get("boundary")
            .and_then(|b| b.as_table())
            .map(|b| b.contains_key(*tag))
            .unwrap_or(false)
        {
            r.errors.push(format!("missing boundary condition row [boundary.{tag}]"));
        }
    }
    if !pulse_tags.is_empty() && geometry != GeometryKind::Channel {
        r.errors.push("pulse boundary loads need the channel geometry".into());
    }
    if bcs.rows.iter().all(|(_, b)| b.normal == Constraint::Natural && b.tangential == Constraint::Natural)
        && !bcs.rows.is_empty()
    {
        r.errors.push("boundary: at least one essential condition is needed".into());
    }

    let mut pulse = PulseSettings {
        p_max: 1.333e4,
        t_max: 0.03,
        samples: 200,
    };
    if let Some(p) = r.table(&root, "pulse", PULSE_KEYS, false) {
        if let Some(v) = r.float(p, "pulse", "p_max") {
            pulse.p_max = v;
        }
        if let Some(v) = r.float(p, "pulse", "t_max") {
            if !(v > 0.0) {
                r.errors.push(format!("pulse.t_max = {v} must be positive"));
            }
            pulse.t_max = v;
        }
        if let Some(v) = r.uint(p, "pulse", "samples") {
            if v < 2 {
                r.errors.push("pulse.samples must be at least 2".into());
            }
            pulse.samples = v;
        }
    }

    let mut output_dir = PathBuf::from("results");
    if let Some(o) = r.table(&root, "output", OUTPUT_KEYS, false) {
        if let Some(d) = r.string(o, "output", "dir") {
            output_dir = PathBuf::from(d);
        }
    }

    if !errors.is_empty() {
        return Err(Error::Config(errors.join("\n")));
    }
    Ok(CaseConfig {
        experiment,
        geometry,
        k,
        ns,
        dt,
        t_final,
        scheme,
        bootstrap,
        material,
        grid,
        bcs,
        pulse_tags,
        pulse,
        solver,
        output_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[case]
experiment = "single"
k = 1
n = 10
dt = 0.1
t_final = 0.3

[boundary.fluid_exterior]
normal = "essential"
tangential = "essential"

[boundary.solid_exterior]
normal = "essential"
tangential = "essential"
"#;

    #[test]
    fn minimal_config_parses() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.experiment, Experiment::Single);
        assert_eq!(c.ns, vec![10]);
        assert_eq!(c.dt, TimeStep::Fixed(0.1));
        assert_eq!(c.bcs.rows.len(), 2);
    }

    #[test]
    fn zero_time_step_names_the_field() {
        let text = MINIMAL.replace("dt = 0.1", "dt = 0.0");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("case.dt"), "{err}");
    }

    #[test]
    fn all_violations_are_reported() {
        let text = MINIMAL
            .replace("dt = 0.1", "dt = -1.0")
            .replace("k = 1", "k = 7\nbogus = 3")
            .replace("[boundary.solid_exterior]\nnormal = \"essential\"\ntangential = \"essential\"\n", "");
        let err = parse_config(&text).unwrap_err().to_string();
        for needle in ["case.dt", "case.k", "unknown key case.bogus", "boundary.solid_exterior"] {
            assert!(err.contains(needle), "missing {needle} in {err}");
        }
    }

    #[test]
    fn bdf3_on_channel_needs_bootstrap() {
        let text = r#"
[case]
experiment = "pulse2d"
k = 1
n = 10
dt = 1e-4
t_final = 1.2e-2
scheme = "bdf3"
[boundary.inlet]
normal = "pulse"
tangential = "essential"
[boundary.outlet]
normal = "natural"
tangential = "essential"
[boundary.fluid_bottom]
normal = "essential"
tangential = "natural"
[boundary.solid_inout]
normal = "essential"
tangential = "essential"
[boundary.solid_top]
normal = "natural"
tangential = "essential"
"#;
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("bootstrap"), "{err}");
        let ok = parse_config(&text.replace("scheme = \"bdf3\"", "scheme = \"bdf3\"\nbootstrap = true")).unwrap();
        assert_eq!(ok.pulse_tags, vec!["inlet".to_string()]);
        assert_eq!(ok.solver.tol, 1e-6);
    }
}
