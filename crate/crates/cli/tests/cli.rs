use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn fracshape(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracshape"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("FRACSHAPE_OUT")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn solve_on_disk_matches_torsion_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracshape(dir.path(), &["solve", "--domain", "ball", "--s", "0.5", "--p", "1", "--resolution", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("solve.json"));
    // u = w/‖w‖₁ with w = (2/π)(1 − r²)^½: ‖w‖₁ = 4/3, trace (2/π)√2·¾.
    let lambda = r["lambda"].as_f64().unwrap();
    let trace = r["trace"]["mean"].as_f64().unwrap();
    assert!(rel(lambda, 0.75) < 0.03, "lambda {lambda}");
    assert!(rel(trace, 1.5 * 2f64.sqrt() / PI) < 0.05, "trace {trace}");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert!(dir.path().join("solution.bin").exists());
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("# fracshape "));
    assert!(csv.contains(r["config_hash"].as_str().unwrap()));
}

#[test]
fn solve_on_fine_interval_is_fast_and_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let o = fracshape(dir.path(), &["solve", "--domain", "interval", "--p", "1", "--resolution", "2048"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t0.elapsed().as_secs_f64() < 30.0);
    // w = √(1 − x²): λ = 1/‖w‖₁ = 2/π.
    let lambda = json(&dir.path().join("solve.json"))["lambda"].as_f64().unwrap();
    assert!(rel(lambda, 2.0 / PI) < 0.01, "lambda {lambda}");
}

#[test]
fn out_of_range_parameters_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["solve", "--p", "2.5"],
        vec!["solve", "--s", "0"],
        vec!["solve", "--resolution", "32"],
        vec!["solve", "--domain", "interval", "--resolution", "63"],
        vec!["solve", "--domain", "nowhere"],
        vec!["frobnicate"],
    ] {
        let o = fracshape(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn symmetrized_ellipse_keeps_its_area() {
    let dir = tempfile::tempdir().unwrap();
    let ell = r#"{"kind":"ellipse","params":{"center":[0.2,0.4],"semi_axes":[1.3,0.8],"angle":0.5}}"#;
    let o = fracshape(dir.path(), &["symmetrize", "--domain", ell, "--t", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let spec = json(&dir.path().join("domain_t000.json"));
    let ax = &spec["params"]["semi_axes"];
    let area = PI * ax[0].as_f64().unwrap() * ax[1].as_f64().unwrap();
    assert!(rel(area, PI * 1.3 * 0.8) < 1e-8);
    let report = json(&dir.path().join("symmetrize.json"));
    assert!(report["steps"][0]["relative_volume_change"].as_f64().unwrap().abs() < 1e-8);
}

fn write_bump(path: &Path) {
    // Sheared bump on a 40×40 grid with a zero margin.
    let (n, h, lo) = (40usize, 0.075, -1.5);
    let mut text = format!("# fracshape grid v1\n# dims: {n} {n}\n# origin: {lo} {lo}\n# spacing: {h}\n");
    for i in 0..n {
        let x = lo + i as f64 * h;
        let row: Vec<String> = (0..n)
            .map(|j| {
                let y = lo + j as f64 * h;
                let (qx, qy) = (x / 0.7, (y - 0.3 - 0.6 * x) / 0.7);
                (1.0 - (qx * qx + qy * qy)).max(0.0).powi(3).to_string()
            })
            .collect();
        text += &(row.join(",") + "\n");
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn function_flow_has_decreasing_energy() {
    let dir = tempfile::tempdir().unwrap();
    let bump = dir.path().join("bump.csv");
    write_bump(&bump);
    let o = fracshape(dir.path(), &["symmetrize", "--function", bump.to_str().unwrap(), "--times", "0:0.5:0.05"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("flow.csv")).unwrap();
    let e: Vec<f64> = csv.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(e.len(), 11);
    assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{e:?}");
    assert!(dir.path().join("u_t010.csv").exists());

    let o = fracshape(dir.path(), &["plotdata", "--input", dir.path().join("flow.csv").to_str().unwrap()]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(dir.path().join("flow.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    assert_eq!(svg.matches("<circle").count(), 11);
}

#[test]
fn empty_time_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for args in [vec!["symmetrize", "--domain", "ellipse", "--times", ""], vec!["symmetrize", "--domain", "ellipse"]] {
        let o = fracshape(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn nonconvex_polygon_is_refused_citing_convexity() {
    let dir = tempfile::tempdir().unwrap();
    let dart = r#"{"kind":"polygon","params":{"vertices":[[0,0],[2,1],[0,2],[0.5,1]]}}"#;
    let o = fracshape(dir.path(), &["rigidity", "--domain", dart]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("convex"));
}

#[test]
fn rigidity_separates_disk_from_ellipse() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracshape(dir.path(), &["rigidity", "--domain", "ball", "--p", "1", "--resolution", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("critical"), "{}", stdout(&o));
    let r = json(&dir.path().join("rigidity.json"));
    assert_eq!(r["verdict"], "critical");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);

    let o = fracshape(dir.path(), &["rigidity", "--domain", "ellipse", "--p", "1", "--resolution", "64", "--battery", "steiner"]);
    assert_eq!(o.status.code(), Some(0), "not critical is still success");
    assert!(stdout(&o).starts_with("not critical: dJ·V = -"), "{}", stdout(&o));
    let r = json(&dir.path().join("rigidity.json"));
    assert_eq!(r["entries"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("rigidity.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("field,dj_analytic"));
}

#[test]
fn plotdata_without_input_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracshape(dir.path(), &["plotdata", "--input", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_table_plots_against_arclength() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracshape(dir.path(), &["solve", "--domain", "ellipse", "--resolution", "48"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = fracshape(dir.path(), &["plotdata", "--input", dir.path().join("trace.csv").to_str().unwrap()]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(dir.path().join("trace.svg")).unwrap();
    assert!(svg.contains("ratio vs arclength"));
}

#[test]
fn identical_configs_give_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["solve", "--domain", "ellipse", "--p", "1.5", "--resolution", "48"];
    assert!(fracshape(a.path(), &args).status.success());
    assert!(fracshape(b.path(), &args).status.success());
    for f in ["solve.json", "trace.csv", "solution.bin"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let args = ["selftest", "--quick", "--seed", "3", "--suite", "interval-formulas,union-axioms", "--ci"];
    assert_eq!(fracshape(a.path(), &args).status.code(), Some(0));
    assert_eq!(fracshape(b.path(), &args).status.code(), Some(0));
    assert_eq!(std::fs::read(a.path().join("selftest.json")).unwrap(), std::fs::read(b.path().join("selftest.json")).unwrap());
}

#[test]
fn selftest_rejects_unknown_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracshape(dir.path(), &["selftest", "--quick", "--suite", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_is_layered_under_flags_and_env_sets_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "p = 1.5\ns = 0.4\nresolution = 48\noutput_dir = \"ignored\"\n[domain]\nkind = \"ball\"\nparams = { radius = 1.0 }\n").unwrap();
    let env_out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_fracshape"))
        .args(["solve", "--config", cfg.to_str().unwrap(), "--p", "1"])
        .env("FRACSHAPE_OUT", &env_out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&env_out.join("solve.json"));
    assert_eq!(r["config"]["p"], 1.0);
    assert_eq!(r["config"]["s"], 0.4);
    assert_eq!(r["config"]["resolution"], 48);
    assert!(!dir.path().join("ignored").exists());
}
