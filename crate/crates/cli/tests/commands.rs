use std::path::{Path, PathBuf};

use serde_json::Value;
use ssc_cli::{run_command, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use tempfile::TempDir;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["ssc".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out".into());
    argv.push(out.to_string_lossy().into_owned());
    run_command(argv)
}

fn summary(out: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(out.join(format!("{name}.result.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn csv_column(out: &Path, name: &str, label: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(out.join(format!("{name}.trace.csv"))).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == label).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn check_square_plant_all_true() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["check", &data("square2.json")]), EXIT_OK);
    let s = summary(dir.path(), "square2");
    assert_eq!(s["status"], "ok");
    for battery in ["row_battery", "column_battery"] {
        for key in [
            "rosenbrock",
            "francis",
            "dual_francis",
            "cp",
            "cd",
            "consistent",
        ] {
            assert_eq!(s[battery][key], true, "{battery}.{key}");
        }
    }
    assert_eq!(s["square"]["all_true"], true);
}

#[test]
fn check_resonant_zero_flips_verdicts() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        run(dir.path(), &["check", &data("zero-at-integrator.json")]),
        EXIT_OK
    );
    let s = summary(dir.path(), "zero-at-integrator");
    for key in ["rosenbrock", "francis", "dual_francis", "cp", "cd"] {
        assert_eq!(s["row_battery"][key], false, "{key}");
    }
    assert_eq!(s["row_battery"]["consistent"], true);
    assert!(s["row_battery"]["witness"].is_object());
}

#[test]
fn design_failure_exits_one_with_code() {
    let dir = TempDir::new().unwrap();
    let code = run(
        dir.path(),
        &[
            "design",
            "stab",
            &data("zero-at-integrator.json"),
            "--method",
            "3a1a",
        ],
    );
    assert_eq!(code, EXIT_FAILURE);
    let s = summary(dir.path(), "zero-at-integrator-3a1a");
    assert_eq!(s["status"], "error");
    assert_eq!(s["code"], "design.rank_condition_failed");
}

#[test]
fn every_design_pathway_on_square_plant() {
    let dir = TempDir::new().unwrap();
    for m in ["3a1a", "3a1b", "3a2a", "3a2b", "3a3a", "3a3b"] {
        assert_eq!(
            run(
                dir.path(),
                &["design", "stab", &data("square2.json"), "--method", m]
            ),
            EXIT_OK,
            "{m}"
        );
        let s = summary(dir.path(), &format!("square2-{m}"));
        assert!(s["abscissa"].as_f64().unwrap() < 0.0, "{m}");
    }
    for m in ["b1a", "b1b", "b2a", "b2b", "b3a", "b3b"] {
        assert_eq!(
            run(
                dir.path(),
                &["design", "est", &data("square2.json"), "--method", m]
            ),
            EXIT_OK,
            "{m}"
        );
        let s = summary(dir.path(), &format!("square2-{m}"));
        assert!(s["abscissa"].as_f64().unwrap() < 0.0, "{m}");
    }
}

#[test]
fn method_family_with_fix() {
    let dir = TempDir::new().unwrap();
    let f = data("square2.json");
    assert_eq!(
        run(
            dir.path(),
            &["design", "stab", &f, "--method", "3a2", "--fix", "gain"]
        ),
        EXIT_OK
    );
    assert_eq!(summary(dir.path(), "square2-3a2b")["method"], "3A2b");
    assert_eq!(
        run(
            dir.path(),
            &["design", "est", &f, "--method", "b1", "--fix", "dynamics"]
        ),
        EXIT_OK
    );
    assert_eq!(summary(dir.path(), "square2-b1a")["method"], "B1a");
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let f = data("square2.json");
    let left = data("square2-left.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["design", "stab", &f],
        vec!["design", "stab", &f, "--method", "3a9z"],
        vec!["design", "stab", &f, "--method", "3a1a", "--fix", "gain"],
        vec!["design", "stab", &f, "--method", "b1a"],
        vec!["design", "est", &f, "--method", "b2", "--fix", "gain"],
        vec![
            "design",
            "stab",
            &f,
            "--method",
            "3a2a",
            "--eps-grid",
            "1e-1:1e-4:9",
        ],
        vec!["check", "/nonexistent/system.json"],
        vec!["check", &left],
        vec!["reduce", &f, "--side", "middle"],
        vec!["reduce", &f, "--side", "two"],
        vec!["check", &f, "--tol", "-1"],
        vec!["demo", "fourtank-reg", "--fix", "gain"],
        vec!["demo", "fourtank-reg", "--method", "b1a"],
    ];
    for args in cases {
        assert_eq!(run(dir.path(), &args), EXIT_USAGE, "{args:?}");
    }
}

#[test]
fn help_exits_zero() {
    assert_eq!(run_command(["ssc", "--help"]), EXIT_OK);
}

#[test]
fn reduce_each_side() {
    let dir = TempDir::new().unwrap();
    let f = data("square2.json");
    let left = data("square2-left.json");
    for args in [
        vec!["reduce", f.as_str(), "--side", "right"],
        vec!["reduce", f.as_str(), "--side", "left"],
        vec![
            "reduce",
            f.as_str(),
            "--side",
            "two",
            "--left-data",
            left.as_str(),
        ],
        vec![
            "reduce",
            f.as_str(),
            "--side",
            "two",
            "--left-data",
            left.as_str(),
            "--family",
            "left",
        ],
    ] {
        assert_eq!(run(dir.path(), &args), EXIT_OK, "{args:?}");
        let s = summary(dir.path(), "square2-rom");
        assert!(
            s["rom"]["match_residual"].as_f64().unwrap() <= 1e-8,
            "{args:?}"
        );
        assert_eq!(s["structural_certificate"]["condition_holds"], true);
        assert!(s["steady_state"]["max_gap"].as_f64().unwrap() <= 1e-6);
        // the reduced model is a loadable system file
        let rom =
            ssc_core::sysfile::parse_system_file(&dir.path().join("square2-rom.json")).unwrap();
        assert_eq!(rom.require_plant().unwrap().n(), 3);
    }
}

#[test]
fn reduce_rejects_unmet_tolerance() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        run(
            dir.path(),
            &["reduce", &data("square2.json"), "--tol", "1e-30"]
        ),
        EXIT_FAILURE
    );
    let s = summary(dir.path(), "square2-rom");
    assert_eq!(s["code"], "mor.match_residual");
    assert!(s["rom"].is_object());
}

#[test]
fn moments_agree_with_sylvester() {
    let dir = TempDir::new().unwrap();
    for (file, name) in [
        ("square2.json", "square2-moments"),
        ("fourtank-reg.json", "fourtank-reg-moments"),
    ] {
        assert_eq!(run(dir.path(), &["moments", &data(file)]), EXIT_OK);
        let s = summary(dir.path(), name);
        assert!(s["cp_gap"].as_f64().unwrap() <= 1e-7);
        assert!(s["cd_gap"].as_f64().unwrap() <= 1e-7);
    }
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    for d in [&a, &b] {
        assert_eq!(
            run(
                d.path(),
                &["simulate", &data("square2.json"), "--seed", "7"]
            ),
            EXIT_OK
        );
    }
    assert_eq!(
        run(
            c.path(),
            &["simulate", &data("square2.json"), "--seed", "8"]
        ),
        EXIT_OK
    );
    let read = |d: &TempDir| std::fs::read_to_string(d.path().join("square2.trace.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let plot = std::fs::read_to_string(a.path().join("square2.plot")).unwrap();
    assert!(plot.contains("'square2.trace.csv'"));
}

#[test]
fn simulate_scalar_step_settles() {
    let dir = TempDir::new().unwrap();
    let mut f = tempfile::NamedTempFile::new().unwrap();
    std::io::Write::write_all(
        &mut f,
        br#"{"metadata": {"name": "lag"}, "plant": {"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]]}}"#,
    )
    .unwrap();
    assert_eq!(
        run(
            dir.path(),
            &["simulate", f.path().to_str().unwrap(), "--horizon", "20"]
        ),
        EXIT_OK
    );
    let y = csv_column(dir.path(), "lag", "y1");
    assert!((y.last().unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn fourtank_regulation_decays() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        run(dir.path(), &["demo", "fourtank-reg", "--method", "3a1a"]),
        EXIT_OK
    );
    let e1 = csv_column(dir.path(), "fourtank-reg-3a1a", "e1");
    let e2 = csv_column(dir.path(), "fourtank-reg-3a1a", "e2");
    let norms: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a.hypot(*b)).collect();
    let peak = norms.iter().copied().fold(0.0, f64::max);
    assert!(peak > 0.0);
    assert!(*norms.last().unwrap() < 0.01 * peak);
    let s = summary(dir.path(), "fourtank-reg-3a1a");
    assert!(s["final_over_peak"].as_f64().unwrap() < 0.01);
}

#[test]
fn fourtank_estimation_tracks_disturbance() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        run(
            dir.path(),
            &[
                "demo",
                "fourtank-est",
                "--method",
                "b2",
                "--fix",
                "dynamics"
            ]
        ),
        EXIT_OK
    );
    let s = summary(dir.path(), "fourtank-est-b2a");
    assert!(s["late_error_over_amplitude"].as_f64().unwrap() < 0.01);
}

#[test]
fn vdp_observer_errors_decay() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["demo", "vdp-observer"]), EXIT_OK);
    let err = csv_column(dir.path(), "vdp-observer", "err_total");
    assert!(*err.last().unwrap() < 1e-3 * err[0]);
    for seed in ["1", "2", "3"] {
        let d = TempDir::new().unwrap();
        assert_eq!(
            run(d.path(), &["demo", "vdp-observer", "--seed", seed]),
            EXIT_OK
        );
        let s = summary(d.path(), "vdp-observer");
        assert!(s["error_ratio"].as_f64().unwrap() < 1e-3, "seed {seed}");
    }
}
