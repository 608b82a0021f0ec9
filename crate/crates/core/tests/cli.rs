use std::process::Command;

fn lolnmpc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lolnmpc"))
}

#[test]
fn run_prints_summary_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = lolnmpc()
        .args(["run", "--traj", "fig8", "--g", "2.5", "--controller", "lol", "--duration", "1.5", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for key in ["rmse", "max speed", "mean solve", "clip events"] {
        assert!(stdout.contains(key), "{stdout}");
    }
    for f in ["lol_fig8_2.5g.csv", "lol_fig8_2.5g_ticks.csv", "lol_fig8_2.5g.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn standard_speed_variant_is_selected() {
    let dir = tempfile::tempdir().unwrap();
    let out = lolnmpc()
        .args(["run", "--traj", "hover", "--controller", "standard", "--motor-variant", "force", "--duration", "0.5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("standard-force_hover"));
    let meta = std::fs::read_to_string(dir.path().join("standard-force_hover.json")).unwrap();
    assert!(meta.contains("\"controller\": \"standard\""));
}

#[test]
fn missing_vehicle_file_exits_2_naming_the_path() {
    let out = lolnmpc().args(["run", "--vehicle", "/no/such/vehicle.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/vehicle.json"));
}

#[test]
fn malformed_reference_csv_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.csv");
    std::fs::write(&path, "t,px\n0,abc\n").unwrap();
    let out = lolnmpc().args(["run", "--traj"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ref.csv"));
}

#[test]
fn diverging_run_exits_1() {
    // a vehicle that cannot lift itself falls until the plant reports divergence
    let dir = tempfile::tempdir().unwrap();
    let vehicle = dir.path().join("heavy.json");
    let mut v: serde_json::Value = serde_json::from_str(include_str!("../config/vehicle.json")).unwrap();
    v["mass"] = serde_json::json!(12.0);
    std::fs::write(&vehicle, v.to_string()).unwrap();
    let out = lolnmpc()
        .args(["run", "--traj", "hover", "--duration", "30", "--vehicle"])
        .arg(&vehicle)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn small_bench_prints_gain_rows_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("matrix.json");
    std::fs::write(
        &matrix,
        r#"{"shapes":["fig8","hyp"],"g_levels":[1.0],"controllers":[{"kind":"standard","variant":"speed"},{"kind":"lol"}],
            "repetitions":1,"seed":5,"laps":0.25}"#,
    )
    .unwrap();
    let out = lolnmpc().arg("bench").arg(&matrix).args(["--jobs", "1", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("fig8_1g")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("hyp_1g")), "{stdout}");
    assert!(stdout.contains("mean gain"));
    for f in ["report.json", "report.txt", "timing.json", "fig8_1g_prediction.csv", "solve_time_histogram.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn invalid_matrix_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("matrix.json");
    std::fs::write(&matrix, r#"{"shapes":[],"g_levels":[1.0],"controllers":[],"repetitions":1,"seed":0}"#).unwrap();
    let out = lolnmpc().arg("bench").arg(&matrix).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("matrix.json"));
}

#[test]
fn selftest_passes() {
    let out = lolnmpc().arg("selftest").output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("0 failed"));
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 8);
}
