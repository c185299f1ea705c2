use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
}

fn tdcosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdcosim"))
        .args(args)
        .env_remove("TDCOSIM_JOBS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn snapshot_with_explicit_feeder_prints_the_iteration_table() {
    let out = tempfile::tempdir().unwrap();
    let feeder = format!("{}@6", s(&data("ckt24_synth.td")));
    let o = tdcosim(&[
        "snapshot",
        "--case",
        s(&data("case9.td")),
        "--feeder",
        &feeder,
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("PCC bus 6"));
    assert!(text.contains("T |Va|") && text.contains("D |Va|") && text.contains("mismatch"));
    let n: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("converged in "))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((2..=4).contains(&n));
    for f in ["pcc_voltages.csv", "coupling_trace.csv", "dispatch.csv"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
}

#[test]
fn missing_feeder_file_is_an_input_error() {
    let out = tempfile::tempdir().unwrap();
    let o = tdcosim(&[
        "snapshot",
        "--case",
        s(&data("case9.td")),
        "--feeder",
        "nowhere.td@6",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.td"));
}

#[test]
fn non_convergence_exits_with_one() {
    let out = tempfile::tempdir().unwrap();
    let o = tdcosim(&[
        "snapshot",
        "--case",
        s(&data("case9_ts1.td")),
        "--max-rounds",
        "1",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn zero_horizon_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let o = tdcosim(&[
        "timeseries",
        "--case",
        s(&data("case9_ts1.td")),
        "--horizon",
        "0",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"));
}

#[test]
fn timeseries_with_baseline_writes_the_comparison() {
    let out = tempfile::tempdir().unwrap();
    let o = tdcosim(&[
        "timeseries",
        "--case",
        s(&data("case9_ts1.td")),
        "--horizon",
        "60",
        "--decoupled",
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("60 coupled solves, 12 dispatches"));
    let cmp = fs::read_to_string(out.path().join("comparison.csv")).unwrap();
    assert_eq!(
        cmp.lines().next().unwrap(),
        "minute,pcc,phase,v_coupled,v_decoupled"
    );
    assert_eq!(cmp.lines().count() - 1, 60 * 3);
    let dispatch = fs::read_to_string(out.path().join("dispatch.csv")).unwrap();
    assert_eq!(dispatch.lines().count() - 1, 12 * 3);
}

#[test]
fn sweep_prints_one_row_per_alpha() {
    let out = tempfile::tempdir().unwrap();
    let o = tdcosim(&[
        "sweep-unbalance",
        "--case",
        s(&data("case9_ts2.td")),
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    assert!(header.contains("bus 5") && header.contains("bus 8") && header.contains("overall"));
    assert_eq!(text.lines().count(), 5);
    let csv = fs::read_to_string(out.path().join("convergence_table.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "alpha,n_bus5,n_bus6,n_bus8,overall"
    );
    assert_eq!(csv.lines().count(), 5);

    let o = tdcosim(&[
        "sweep-unbalance",
        "--case",
        s(&data("case9_ts2.td")),
        "--alphas",
        "0.1",
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn validate_accepts_shipped_files() {
    let names = [
        "case9.td",
        "case9_ts1.td",
        "case9_ts2.td",
        "ckt24_synth.td",
        "two_node.td",
        "loadshape_daily.csv",
    ];
    let paths: Vec<PathBuf> = names.iter().map(|n| data(n)).collect();
    let mut args = vec!["validate"];
    args.extend(paths.iter().map(|p| s(p)));
    let o = tdcosim(&args);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(
        stdout(&o).lines().filter(|l| l.starts_with("ok")).count(),
        names.len()
    );
}

#[test]
fn validate_reports_locations() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.td");
    let text = fs::read_to_string(data("case9.td")).unwrap().replacen(
        "base_mva = 100.0",
        "base_mva = = 100.0",
        1,
    );
    fs::write(&broken, text).unwrap();
    let cyclic = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/corpus/invalid/loop.td");
    let o = tdcosim(&["validate", s(&broken), s(&cyclic)]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(
        text.contains("broken.td") && text.contains("syntax"),
        "{text}"
    );
    assert!(text.contains("radiality"), "{text}");
    // every error line carries line:column
    for l in text.lines().filter(|l| l.starts_with("error")) {
        assert!(
            l.split(':').nth(1).unwrap().trim().parse::<usize>().is_ok(),
            "{l}"
        );
    }
}

#[test]
fn synth_feeder_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let o = tdcosim(&[
            "synth-feeder",
            "--nodes",
            "120",
            "--seed",
            seed,
            "--out",
            s(&p),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(p).unwrap()
    };
    assert_eq!(gen("a.td", "7"), gen("b.td", "7"));
    assert_ne!(gen("c.td", "7"), gen("d.td", "8"));
}

#[test]
fn jobs_setting_does_not_change_results() {
    let run = |jobs: Option<&str>| {
        let out = tempfile::tempdir().unwrap();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_tdcosim"));
        cmd.args([
            "snapshot",
            "--case",
            s(&data("case9_ts2.td")),
            "--out",
            s(out.path()),
        ]);
        match jobs {
            Some(j) => cmd.env("TDCOSIM_JOBS", j),
            None => cmd.env_remove("TDCOSIM_JOBS"),
        };
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.path().join("coupling_trace.csv")).unwrap()
    };
    let one = run(Some("1"));
    assert_eq!(one, run(Some("3")));
    assert_eq!(one, run(None));

    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tdcosim"))
        .args([
            "snapshot",
            "--case",
            s(&data("case9_ts1.td")),
            "--out",
            s(out.path()),
        ])
        .env("TDCOSIM_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("TDCOSIM_JOBS"));
}
