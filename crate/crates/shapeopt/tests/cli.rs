//! End-to-end checks of the command-line driver: exit codes, file
//! schemas, determinism.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapeopt"))
}

#[test]
fn analytic_check_passes() {
    let out = bin().arg("analytic-check").output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 8);
    assert!(!text.contains("FAIL"));
}

#[test]
fn stationarity_run_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let out = bin()
            .args([
                "stationarity",
                "--problem",
                "example1",
                "--shape",
                "square",
                "--p",
                "2",
                "--levels",
                "0..2",
                "--out",
            ])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let path = dir.path().join("stationarity_example1_square_p2.csv");
        std::fs::read_to_string(path).unwrap()
    };
    let first = run();
    let second = run();
    assert!(first.starts_with("level,n_triangles,eta_ph,J,wall_time\n"));
    assert_eq!(first.lines().count(), 4, "header + 3 levels");
    let strip = |s: &str| {
        s.lines()
            .map(|l| {
                l.rsplit_once(',')
                    .map(|(h, _)| h.to_string())
                    .unwrap_or_default()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&first), strip(&second));
    // Eta decreases from level 0 to 2 on the square before stagnating.
    let etas: Vec<f64> = first
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(etas[0] > etas[1] && etas[1] > etas[2], "{etas:?}");
}

#[test]
fn optimize_run_emits_report_and_final_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "optimize",
            "--problem",
            "example1",
            "--shape",
            "tetragon",
            "--p",
            "2",
            "--level",
            "2",
            "--max-iters",
            "4",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv =
        std::fs::read_to_string(dir.path().join("optimize_example1_tetragon_p2.csv")).unwrap();
    assert!(csv.starts_with("iter,J,eta,alpha,min_angle,barycenter_x,barycenter_y\n"));
    assert!(csv.contains("# termination="));
    let mesh_text =
        std::fs::read_to_string(dir.path().join("final_mesh_example1_tetragon_p2.txt")).unwrap();
    let mesh = shapeopt::io::read_mesh_text(&mesh_text).unwrap();
    assert_eq!(mesh.n_triangles(), 128);
    // J decreases across the recorded iterations.
    let js: Vec<f64> = csv
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(js.windows(2).all(|w| w[1] <= w[0] + 1e-14), "{js:?}");
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "problem = example1\nshape = square\np = 1.5\nlevels = 0..1\nout = .\n",
    )
    .unwrap();
    // Override the output directory and p on the command line.
    let out = bin()
        .args(["stationarity", "--config"])
        .arg(&cfg)
        .args(["--p", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir
        .path()
        .join("stationarity_example1_square_p2.csv")
        .exists());
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["stationarity", "--problem", "nonsense"],
        vec!["stationarity", "--p", "3.0"],
        vec!["optimize", "--shape", "blob"],
        vec!["stationarity", "--levels", "5..1"],
    ] {
        let out = bin()
            .args(&args)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "args {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn empty_levels_writes_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["stationarity", "--levels", "", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv =
        std::fs::read_to_string(dir.path().join("stationarity_example1_square_p2.csv")).unwrap();
    assert_eq!(csv, "level,n_triangles,eta_ph,J,wall_time\n");
}
