use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tnoise() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tnoise"));
    c.env_remove("TNOISE_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    tnoise().args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tnoise-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read_toml(path: &Path) -> toml::Value {
    toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gate_report_for_drag_pulse() {
    let dir = scratch("gate");
    let out = run(&["gate", "--tg", "70", "--drag", "1", "--out", dir.to_str().unwrap()]);
    ok(&out);
    let report = read_toml(&dir.join("gate_report.toml"));
    for g in report["gates"].as_array().unwrap() {
        let inf = g["infidelity"].as_float().unwrap();
        assert!((1e-4..=5e-3).contains(&inf), "{inf}");
        assert!(g["leakage"].as_float().unwrap() < 1e-5);
    }
    assert!(dir.join("envelope_spectrum.csv").exists());
    let manifest = read_toml(&dir.join("manifest.toml"));
    assert_eq!(manifest["command"].as_str(), Some("gate"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

fn simulate(dir: &Path, workers: Option<&str>) -> Output {
    let mut c = tnoise();
    if let Some(w) = workers {
        c.env("TNOISE_WORKERS", w);
    }
    c.args([
        "simulate", "--state", "90,0,0", "--kind", "free", "--instants", "70", "--total-ns", "19600",
        "--trajectories", "3", "--seed", "5", "--out",
    ])
    .arg(dir)
    .output()
    .unwrap()
}

#[test]
fn simulate_writes_one_row_per_instant_reproducibly() {
    let (a, b) = (scratch("sim-a"), scratch("sim-b"));
    ok(&simulate(&a, Some("1")));
    ok(&simulate(&b, Some("2")));
    let csv = std::fs::read_to_string(a.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 71);
    assert!(csv.starts_with("instant_ns,mean,half_width"));
    assert_eq!(csv, std::fs::read_to_string(b.join("curve.csv")).unwrap());
    let (ma, mb) = (read_toml(&a.join("manifest.toml")), read_toml(&b.join("manifest.toml")));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["seed"].as_integer(), Some(5));
    assert!(ma["version"].as_str().is_some());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = scratch("usage");
    let d = dir.to_str().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["simulate", "--state", "90,0", "--out", d],
        vec!["simulate", "--kind", "sideways", "--out", d],
        vec!["simulate", "--device", "nowhere", "--out", d],
        vec!["fit", "--dataset", "no_such_dataset", "--out", d],
        vec!["predict", "--dataset", "no_such_dataset", "--noise", "lima", "--out", d],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(!err.trim().is_empty());
    }
    let out = tnoise().env("TNOISE_WORKERS", "many").args(["gate", "--out", d]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_renders_curves_and_surfaces() {
    let dir = scratch("plot");
    std::fs::create_dir_all(&dir).unwrap();
    let curve = dir.join("curve.csv");
    std::fs::write(&curve, "instant_ns,mean,half_width\n0,1,0\n280,0.9,0.01\n560,0.85,0.01\n").unwrap();
    ok(&run(&["plot", "--input", curve.to_str().unwrap()]));
    let svg = std::fs::read_to_string(dir.join("curve.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("mean"));
    let surface = dir.join("surface.csv");
    std::fs::write(&surface, "g_x,omega_c_x,cost\n0,1,0.3\n0,2,0.2\n1,1,0.1\n1,2,0.05\n").unwrap();
    let out_svg = dir.join("s.svg");
    ok(&run(&["plot", "--input", surface.to_str().unwrap(), "--out", out_svg.to_str().unwrap(), "--title", "Step I"]));
    let svg = std::fs::read_to_string(&out_svg).unwrap();
    assert!(svg.contains("<rect") && svg.contains("Step I"));
    // Rendering twice gives the same file.
    ok(&run(&["plot", "--input", surface.to_str().unwrap(), "--out", out_svg.to_str().unwrap(), "--title", "Step I"]));
    assert_eq!(svg, std::fs::read_to_string(&out_svg).unwrap());
}

#[test]
fn synthesize_fit_predict_and_compare_on_a_small_grid() {
    let dir = scratch("pipeline");
    let synth = dir.join("synth");
    ok(&run(&[
        "synthesize", "--states", "fit", "--instants", "4", "--total-ns", "1120", "--trajectories", "2", "--shots",
        "2000", "--seed", "3", "--out", synth.to_str().unwrap(),
    ]));
    let dataset = synth.join("dataset.csv");
    let text = std::fs::read_to_string(&dataset).unwrap();
    assert!(text.starts_with("# synthetic"));
    assert_eq!(text.lines().filter(|l| l.starts_with("record")).count(), 12);

    let fit = dir.join("fit");
    let out = run(&[
        "fit", "--dataset", dataset.to_str().unwrap(), "--resolution", "2", "--trajectories", "2", "--out",
        fit.to_str().unwrap(),
    ]);
    ok(&out);
    let report = read_toml(&fit.join("fit_report.toml"));
    let p = &report["parameters"];
    for key in ["g_x", "omega_c_x", "g_z", "omega_c_z"] {
        assert!(p[key].as_float().is_some(), "{key}");
    }
    assert!(p["fluctuators"]["b"].as_float().is_some() && p["fluctuators"]["gamma_max"].as_float().is_some());
    assert_eq!(report["steps"].as_array().unwrap().len(), 3);
    for s in ["I", "II", "III"] {
        assert!(fit.join(format!("surface_step_{s}.csv")).exists());
    }
    let manifest = read_toml(&fit.join("manifest.toml"));
    assert_eq!(manifest["config"]["dataset_sha256"].as_str().unwrap().len(), 64);

    let pred = dir.join("predict");
    ok(&run(&[
        "predict", "--dataset", dataset.to_str().unwrap(), "--noise", fit.join("fit_report.toml").to_str().unwrap(),
        "--trajectories", "2", "--out", pred.to_str().unwrap(),
    ]));
    let rows = std::fs::read_to_string(pred.join("relative_errors.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 12 * 4);
    let summary = read_toml(&pred.join("summary.toml"));
    assert!(summary["free"]["median"].as_float().is_some() && summary["dd"]["max_abs"].as_float().is_some());

    let cmp = dir.join("compare");
    ok(&run(&[
        "compare-models", "--dataset", dataset.to_str().unwrap(), "--full",
        fit.join("fit_report.toml").to_str().unwrap(), "--resolution", "2", "--trajectories", "2", "--out",
        cmp.to_str().unwrap(),
    ]));
    let comparison = read_toml(&cmp.join("comparison.toml"));
    let models: Vec<&str> = comparison["models"].as_array().unwrap().iter().map(|m| m["model"].as_str().unwrap()).collect();
    assert_eq!(models, ["full", "sm1", "sm2"]);
    assert!(cmp.join("sm1").join("fit_report.toml").exists() && !cmp.join("full").exists());
}
