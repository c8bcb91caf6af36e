use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const K1: &str = "\
[domain]
n = 64

[vortices]
points = 0.25 0.5; 0.75 0.5

[bubbles]
k = 1
seed = 0.5 0.03
d = 0.0625

[sweep]
eps = 0.01
";

const K2: &str = "\
[domain]
n = 64

[vortices]
points = 0.25 0.25; 0.75 0.25; 0.25 0.75; 0.75 0.75

[bubbles]
k = 2
seed = 0.5 0.0; 0.5 0.5
d = 0.0225

[sweep]
eps = 0.04, 0.03, 0.02
";

fn csvl(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.ini");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_csvl"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(&format!("{key} ="))).unwrap_or_else(|| panic!("no `{key}` in\n{text}"));
    line.split('=').nth(1).unwrap().trim().parse().unwrap()
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join("out").join(name)
}

#[test]
fn green_is_symmetric_and_mean_free() {
    let dir = tempfile::tempdir().unwrap();
    let o = csvl(dir.path(), K1, &["green", "--x", "0.1,0.2", "--y", "0.3,0.7", "--dump"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(value(&s, "G(x,y)").to_bits(), value(&s, "G(y,x)").to_bits());
    assert!(value(&s, "mean_G_defect") <= 1e-8);
    let hash = s.lines().next().unwrap();
    assert!(hash.starts_with("config_hash = ") && hash.len() == 14 + 64);
    assert!(out(dir.path(), "u0.field").exists() && out(dir.path(), "green_y.field").exists());

    // bit-for-bit reproducible
    let again = csvl(dir.path(), K1, &["green", "--x", "0.1,0.2", "--y", "0.3,0.7"]);
    assert_eq!(stdout(&again), s);
}

#[test]
fn coincident_points_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = csvl(dir.path(), K1, &["green", "--x", "0.1,0.2", "--y", "0.1,0.2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("singular point"), "{}", stderr(&o));
}

#[test]
fn bad_config_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = csvl(dir.path(), &K1.replace("k = 1", "k = 2"), &["functionals"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 8") && e.contains("N = 2k"), "{e}");

    let o = csvl(dir.path(), &K1.replace("eps = 0.01", "eps = 0.01, 0.02"), &["functionals"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 13"), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_csvl")).args(["functionals"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_csvl")).args(["no-such-command"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn functionals_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = csvl(dir.path(), K1, &["functionals"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(value(&s, "grad_norm") <= 1e-8);
    assert!(value(&s, "d_value") < 0.0);
    assert!(s.contains("d_sign = negative"), "{s}");
    let table = std::fs::read_to_string(out(dir.path(), "dq_table.csv")).unwrap();
    assert!(table.starts_with("r,partial_sum,extrapolant\n"));
    assert_eq!(table.lines().count(), 9);
    let cp = std::fs::read_to_string(out(dir.path(), "critical_point.csv")).unwrap();
    assert!(cp.starts_with("i,x,y,grad_x,grad_y\n"));
    let report = std::fs::read_to_string(out(dir.path(), "functionals_report.txt")).unwrap();
    assert!(report.starts_with("config_hash = "));
}

#[test]
fn ansatz_writes_fields_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = csvl(dir.path(), K1, &["ansatz"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let f = csvl::fieldfile::FieldFile::read(&out(dir.path(), "ansatz_u.field")).unwrap();
    assert_eq!(f.n, 64);
    assert!(f.values.iter().all(|v| *v < 0.0));
    let s = stdout(&o);
    assert!(value(&s, "discriminant") > 0.0);
    assert!(out(dir.path(), "ansatz_params.txt").exists());
}

#[test]
fn maximal_sweep_is_monotone_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let o = csvl(dir.path(), K2, &["solve", "--branch", "maximal"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in 0..3 {
        assert!(out(dir.path(), &format!("phi_{i:02}.field")).exists());
        let rep = std::fs::read_to_string(out(dir.path(), &format!("report_{i:02}.txt"))).unwrap();
        assert!(rep.starts_with("config_hash = "));
    }
    assert!(out(dir.path(), "plots.script").exists());
    let mono = std::fs::read_to_string(out(dir.path(), "monotonicity.csv")).unwrap();
    assert_eq!(mono.lines().count(), 3);
    assert!(mono.lines().skip(1).all(|l| l.ends_with(",true")), "{mono}");
    assert!(stdout(&o).contains("label = topological"));

    let summary = std::fs::read(out(dir.path(), "summary.csv")).unwrap();
    let o = csvl(dir.path(), K2, &["solve", "--branch", "maximal"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(out(dir.path(), "summary.csv")).unwrap(), summary);
    for i in 0..3 {
        let s = String::from_utf8_lossy(&summary).lines().nth(i + 1).unwrap().to_string();
        let grid_max: f64 = s.split(',').nth(9).unwrap().parse().unwrap();
        assert!(grid_max <= 1e-10);
    }

    let o = csvl(dir.path(), K2, &["classify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("label = topological"));

    // restart from a stored field
    let seed = out(dir.path(), "phi_02.field");
    let one = K2.replace("eps = 0.04, 0.03, 0.02", "eps = 0.02");
    let o = csvl(dir.path(), &one, &["solve", "--seed-field", seed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = std::fs::read_to_string(out(dir.path(), "report_00.txt")).unwrap();
    assert!(rep.contains("newton_iterations = 0"), "{rep}");
}

#[test]
fn bubbling_sweep_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = K2.replace("eps = 0.04, 0.03, 0.02", "eps = 0.01, 0.005, 0.0025");
    let o = csvl(dir.path(), &cfg, &["solve", "--branch", "bubbling"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut fields: Vec<String> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".field"))
        .collect();
    fields.sort();
    assert_eq!(fields, ["phi_00.field", "phi_01.field", "phi_02.field"]);
    assert!(out(dir.path(), "summary.csv").exists() && out(dir.path(), "plots.script").exists());
    let summary = std::fs::read_to_string(out(dir.path(), "summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.lines().skip(1).all(|l| l.split(',').nth(4) == Some("true")));
    assert!(stdout(&o).contains("label = non-topological"));
}

#[test]
fn flipped_d_term_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = K2.replace("eps = 0.04, 0.03, 0.02", "eps = 0.005\nflip_d_term = true");
    let o = csvl(dir.path(), &cfg, &["reduce-sweep"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("no root"));
    let csv = std::fs::read_to_string(out(dir.path(), "reduced_sweep.csv")).unwrap();
    assert!(csv.starts_with("eps,mu,beta,R0,R_0_0,R_0_1,R_1_0,R_1_1,grad_g_star_norm,A0,B0"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ini") {
            let c = csvl::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(csvl::config::ExperimentConfig::parse(&c.emit()).unwrap(), c);
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
