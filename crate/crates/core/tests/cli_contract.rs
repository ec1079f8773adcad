use std::path::{Path, PathBuf};
use std::process::Command;

use fsihdg::cli::{parse_config_file, resolve_output_dir, Experiment, GeometryKind, TimeStep};
use fsihdg::krylov::VelocityKind;
use fsihdg::stepper::Scheme;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fsihdg"));
    c.env_remove("FSIHDG_OUT");
    c
}

const WALLS: &str = r#"
[boundary.fluid_exterior]
normal = "essential"
tangential = "essential"

[boundary.solid_exterior]
normal = "essential"
tangential = "essential"
"#;

#[test]
fn shipped_configs_parse() {
    let c1 = parse_config_file(&configs().join("example1.toml")).unwrap();
    assert_eq!(c1.experiment, Experiment::Converge);
    assert_eq!((c1.k, c1.ns.clone(), c1.dt), (1, vec![10, 20, 40], TimeStep::MeshSize));
    assert_eq!(c1.grid, vec![(1.0, 1.0, 1.0)]);
    assert_eq!(c1.scheme, Scheme::CrankNicolson);
    assert_eq!(c1.solver.velocity, VelocityKind::Auxiliary);

    let c2 = parse_config_file(&configs().join("example2.toml")).unwrap();
    assert_eq!(c2.experiment, Experiment::Pulse2d);
    assert_eq!(c2.geometry, GeometryKind::Channel);
    assert_eq!(c2.dt, TimeStep::Fixed(1e-4));
    assert_eq!(c2.solver.tol, 1e-6);
    assert_eq!(c2.material.beta_s, 4e6);
    assert_eq!(c2.pulse_tags, vec!["inlet".to_string()]);
    assert_eq!(c2.bcs.rows.len(), 5);
}

#[test]
fn output_directory_precedence() {
    let cfg = parse_config_file(&configs().join("example1.toml")).unwrap();
    std::env::remove_var("FSIHDG_OUT");
    assert_eq!(resolve_output_dir(None, &cfg), PathBuf::from("results/example1"));
    assert_eq!(resolve_output_dir(Some(Path::new("x")), &cfg), PathBuf::from("x"));
    std::env::set_var("FSIHDG_OUT", "/tmp/from_env");
    assert_eq!(resolve_output_dir(Some(Path::new("x")), &cfg), PathBuf::from("/tmp/from_env"));
    std::env::remove_var("FSIHDG_OUT");
}

#[test]
fn check_subcommand_succeeds() {
    let out = bin().arg("check").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().count() >= 7 && text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn invalid_config_exits_with_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "[case]\nexperiment = \"single\"\nk = 1\nn = 4\ndt = -0.5\nt_final = 1.0\nspeed = 3\n[boundary.fluid_exterior]\nnormal = \"essential\"\ntangential = \"essential\"\n",
    )
    .unwrap();
    let out = bin().args(["single", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["case.dt", "case.speed", "boundary.solid_exterior"] {
        assert!(err.contains(needle), "missing {needle}: {err}");
    }
}

#[test]
fn subcommand_must_match_experiment() {
    let out = bin()
        .args(["pulse2d", "--config"])
        .arg(configs().join("example1.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_run_writes_diagnostics_and_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("single.toml");
    std::fs::write(
        &path,
        format!("[case]\nexperiment = \"single\"\nk = 1\nn = 4\ndt = 0.05\nt_final = 0.2\n{WALLS}"),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["single", "--dump-mesh", "--export-matrix", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    let mut lines = diag.lines();
    assert_eq!(lines.next(), Some("step,t,energy,max_fluid_divergence,minres_iters,residual"));
    assert_eq!(lines.count(), 4);
    let mesh = std::fs::read_to_string(out_dir.join("mesh_n4.txt")).unwrap();
    let counts: Vec<usize> = mesh.lines().next().unwrap().split(' ').map(|s| s.parse().unwrap()).collect();
    assert_eq!(mesh.lines().count(), 1 + counts.iter().sum::<usize>());
    assert!(out_dir.join("system_n4.coo").exists());
}

#[test]
fn converge_writes_table_and_env_overrides_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("conv.toml");
    std::fs::write(
        &path,
        format!(
            "[case]\nexperiment = \"converge\"\nk = 1\nn = [2, 4]\ndt = \"h\"\nt_final = 0.5\n[grid]\nrho_s = [1.0]\ndelta1 = [1.0]\ndelta2 = [1.0, 1e4]\n{WALLS}"
        ),
    )
    .unwrap();
    let env_dir = dir.path().join("env");
    let out = bin()
        .env("FSIHDG_OUT", &env_dir)
        .args(["converge", "--jobs", "2", "--out", "ignored", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(env_dir.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,inv_h,rho_s,delta1,delta2,error,eoc,avg_iters");
    assert_eq!(lines.len(), 5);
    // first mesh of each triple has no rate
    assert_eq!(lines[1].split(',').nth(6), Some(""));
    assert!(lines[2].split(',').nth(6).unwrap().parse::<f64>().is_ok());
    assert!(!Path::new("ignored").exists());
}

#[test]
fn pulse_run_writes_sample_curves() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("example2.toml"))
        .unwrap()
        .replace("t_final = 1.2e-2", "t_final = 5e-4");
    let path = dir.path().join("pulse.toml");
    std::fs::write(&path, text).unwrap();
    let out = bin().args(["pulse2d", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["pulse_flow.csv", "pulse_pressure.csv", "pulse_disp.csv"] {
        let csv = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,value");
        assert_eq!(lines.len(), 201, "{name}");
        let last: Vec<f64> = lines[200].split(',').map(|s| s.parse().unwrap()).collect();
        assert!((last[0] - 6.0).abs() < 1e-12 && last[1].is_finite());
    }
}
