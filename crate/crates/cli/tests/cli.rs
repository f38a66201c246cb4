use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 1

[grid]
extent = 3.0
n = 5

[physics]
gamma = 1.0
c_b = 0.1

[run]
mode = "march"
dt = 0.01
t_end = 0.05
"#;

fn kmx(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("case.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_kmx"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_data_march_writes_zero_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = kmx(dir.path(), BASE, &["--deterministic", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,M,E,H,minF,w2_Linft_L2v_Linfx,A,B");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(&cols[1..4], &["0", "0", "0"]);
        assert_eq!(cols[5], "0");
    }
    let echo = fs::read_to_string(dir.path().join("out/config.toml")).unwrap();
    assert!(echo.contains("c_b = 0.1") && echo.contains("n_theta = 2"));
    let json = fs::read_to_string(dir.path().join("out/run.json")).unwrap();
    assert!(json.contains("\"config\"") && json.contains("gamma = 1.0"));
}

#[test]
fn out_of_range_gamma_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kmx(dir.path(), &BASE.replace("gamma = 1.0", "gamma = 1.5"), &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hard potentials 0 ≤ γ ≤ 1"));
}

#[test]
fn norm_exponent_one_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}\n[[norm]]\nr = 1.0\nl = 2.0\n");
    let o = kmx(dir.path(), &cfg, &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("r ∈ (1, ∞]"));
}

#[test]
fn missing_section_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BASE.replace("[physics]\ngamma = 1.0\nc_b = 0.1\n", "");
    let o = kmx(dir.path(), &cfg, &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing section [physics]"));
}

#[test]
fn kernel_over_cap_is_a_resource_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}\n[kernel]\nmax_nodes = 100\n");
    let o = kmx(dir.path(), &cfg, &["kernel"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn overflowing_data_aborts_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{}\n[data]\nkind = \"gaussian_bump\"\namplitude = 1e150\n",
        BASE.replace("t_end = 0.05", "t_end = 0.05\nscheme = \"nu_integrator\"")
    );
    let o = kmx(dir.path(), &cfg, &["run"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    // the trajectory up to the last good step is still written
    assert!(dir.path().join("out/series.csv").exists());
    assert!(dir.path().join("out/run.json").exists());
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_kmx"))
        .args(["--config", "/nonexistent/kmx.toml", "run"])
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
