use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ODE: &str = r#"
[system]
kind = "ode"
p0 = 5.0
p1 = 1.0
p2 = 0.5
t_end = 1.0

[grid]
cells = [400]

[kernel]
lengthscale = 0.7745966692414834
variance = 4.0

[basis]
features = 30

[sensors]
placement = "intervals"
count = 40

[noise]
sigma = 0.1

[mcmc]
steps = 3000
burn_in = 500
pre_run = 300

[sweep]
sensors = [40]
features = [30]
replicates = 1

[scan]
features = 30
samples = 20

[[scan.axes]]
name = "lengthscale"
lo = 0.4
hi = 1.2
steps = 3
"#;

fn adjgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adjgp")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_byte_identical_on_rerun() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&adjgp(&["simulate", "--config", s(&cfg), "--out", s(&a)]));
    ok(&adjgp(&["--jobs", "2", "simulate", "--config", s(&cfg), "--out", s(&b)]));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 5);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    for f in ["observations.csv", "truth_forcing.csv", "solution.csv", "config.toml"] {
        assert!(manifest.contains(f), "{f} missing from manifest");
    }
}

#[test]
fn infer_exports_are_thread_count_independent() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    let data = t.path().join("data");
    ok(&adjgp(&["simulate", "--config", s(&cfg), "--out", s(&data)]));
    let (one, four) = (t.path().join("j1"), t.path().join("j4"));
    ok(&adjgp(&["--jobs", "1", "infer", "--config", s(&cfg), "--data", s(&data), "--out", s(&one)]));
    ok(&adjgp(&["--jobs", "4", "infer", "--config", s(&cfg), "--data", s(&data), "--out", s(&four)]));
    for f in ["phi.csv", "posterior.json", "forcing_mean.csv", "forcing_variance.csv", "predictive.csv"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(four.join(f)).unwrap(), "{f}");
    }
    let timings = fs::read_to_string(one.join("timings.csv")).unwrap();
    let lines: Vec<&str> = timings.lines().collect();
    assert_eq!(lines[0], "stage,seconds");
    assert_eq!(lines.len(), 6, "{timings}");
}

#[test]
fn infer_without_bundle_matches_infer_with_bundle() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    let data = t.path().join("data");
    ok(&adjgp(&["simulate", "--config", s(&cfg), "--out", s(&data)]));
    ok(&adjgp(&["infer", "--config", s(&cfg), "--data", s(&data), "--out", s(&t.path().join("x"))]));
    ok(&adjgp(&["infer", "--config", s(&cfg), "--out", s(&t.path().join("y"))]));
    assert_eq!(
        fs::read(t.path().join("x/posterior.json")).unwrap(),
        fs::read(t.path().join("y/posterior.json")).unwrap()
    );
}

#[test]
fn config_errors_exit_2_with_field_messages() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("o");
    let cfg = write_config(t.path(), &ODE.replace("sigma = 0.1", "sigma = 0.1\nbogus = 1"));
    let o = adjgp(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let cfg = write_config(t.path(), &ODE.replace("features = 30\n\n[sensors]", "features = 0\n\n[sensors]"));
    let o = adjgp(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[basis]"));

    let o = adjgp(&["simulate", "--config", s(&t.path().join("missing.toml")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn slice_requires_space_time_and_parses() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    let o = adjgp(&["infer", "--config", s(&cfg), "--out", s(&t.path().join("o")), "--slice", "t=0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = adjgp(&["infer", "--config", s(&cfg), "--out", s(&t.path().join("o")), "--slice", "x=1"]);
    assert!(!o.status.success());
}

#[test]
fn mcmc_writes_table_and_trace_deterministically() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&adjgp(&["mcmc", "--config", s(&cfg), "--out", s(&a)]));
    ok(&adjgp(&["mcmc", "--config", s(&cfg), "--out", s(&b)]));
    for f in ["comparison.csv", "trace.csv", "diagnostics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let table = fs::read_to_string(a.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 31);
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3001);
}

#[test]
fn mcmc_warns_for_large_bases() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &ODE.replace("features = 30\n\n[sensors]", "features = 60\n\n[sensors]")
            .replace("steps = 3000", "steps = 600")
            .replace("burn_in = 500", "burn_in = 100")
            .replace("pre_run = 300", "pre_run = 50"),
    );
    let o = adjgp(&["mcmc", "--config", s(&cfg), "--out", s(&t.path().join("o"))]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rarely converges"));
    let manifest = fs::read_to_string(t.path().join("o/manifest.json")).unwrap();
    assert!(manifest.contains("\"warning\""));
}

#[test]
fn single_cell_sweep_equals_infer_and_resumes() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    let sw = t.path().join("sweep");
    ok(&adjgp(&["sweep", "--config", s(&cfg), "--out", s(&sw)]));
    ok(&adjgp(&["infer", "--config", s(&cfg), "--out", s(&t.path().join("inf"))]));
    let results = fs::read_to_string(sw.join("results.csv")).unwrap();
    let mse_sweep = results.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string();
    let pred = fs::read_to_string(t.path().join("inf/predictive.csv")).unwrap();
    let mse_infer = pred
        .lines()
        .find(|l| l.starts_with("predictive_mse,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .to_string();
    assert_eq!(mse_sweep, mse_infer);

    // a rerun finds every cell done and leaves the results untouched
    let o = Command::new(env!("CARGO_BIN_EXE_adjgp"))
        .env("RUST_LOG", "info")
        .args(["sweep", "--config", s(&cfg), "--out", s(&sw)])
        .output()
        .unwrap();
    ok(&o);
    let log = String::from_utf8_lossy(&o.stderr);
    assert!(log.contains("resuming sweep with 1 finished cells"), "{log}");
    assert!(!log.contains("mse "), "{log}");
    assert_eq!(fs::read_to_string(sw.join("results.csv")).unwrap(), results);
}

#[test]
fn scan_hyper_ranks_points() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    ok(&adjgp(&["scan-hyper", "--config", s(&cfg), "--out", s(&t.path().join("o"))]));
    let scan = fs::read_to_string(t.path().join("o/scan.csv")).unwrap();
    let lines: Vec<&str> = scan.lines().collect();
    assert_eq!(lines[0], "rank,lengthscale,nll");
    assert_eq!(lines.len(), 4);
    let nll: Vec<f64> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(nll.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn shift_demo_runs_builtin_scenario() {
    let t = tempfile::tempdir().unwrap();
    let o = adjgp(&["shift-demo", "--out", s(&t.path().join("o"))]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("observation_mse"));
    for f in ["forcing_mean.csv", "solution_mean.csv", "report.csv", "manifest.json"] {
        assert!(t.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_flag_changes_data() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), ODE);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&adjgp(&["simulate", "--config", s(&cfg), "--out", s(&a), "--seed", "11"]));
    ok(&adjgp(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "12"]));
    assert_ne!(fs::read(a.join("observations.csv")).unwrap(), fs::read(b.join("observations.csv")).unwrap());
}
