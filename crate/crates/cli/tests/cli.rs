use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybrid-sis"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV artifact after checking the comment and header lines.
fn read_csv(path: &Path, header: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap();
    assert!(comment.starts_with("# hybrid-sis "), "{comment}");
    for key in ["config_hash=", "h=", "tol=", "seed="] {
        assert!(comment.contains(key), "{comment}");
    }
    assert_eq!(lines.next().unwrap(), header);
    lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn write_config(dir: &Path, edit: impl Fn(&str) -> String) -> PathBuf {
    let text = std::fs::read_to_string(config("example1_cost_a.json")).unwrap();
    let path = dir.join("edited.json");
    std::fs::write(&path, edit(&text)).unwrap();
    path
}

#[test]
fn linear_cost_policy_is_max_effort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1_cost_c.json");
    let o = run(&["solve1d", "--config", cfg.to_str().unwrap(), "--h", "0.02"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS solve1d converged"));
    let rows = read_csv(&dir.path().join("value_policy.csv"), "i,regime,value,c");
    assert_eq!(rows.len(), 2 * 51);
    for r in rows {
        if r[0] > 0.02 + 1e-12 {
            assert_eq!(r[3], 3.0, "{r:?}");
        } else {
            assert_eq!(r[2], 0.0);
        }
    }
    let conv = read_csv(&dir.path().join("convergence.csv"), "iteration,increment");
    assert!(conv.last().unwrap()[1] <= 1e-8);
}

#[test]
fn quadratic_cost_policy_has_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1_cost_a.json");
    let o = run(&["solve1d", "--config", cfg.to_str().unwrap(), "--h", "0.02"], dir.path());
    assert!(o.status.success());
    let rows = read_csv(&dir.path().join("value_policy.csv"), "i,regime,value,c");
    for regime in [1.0, 2.0] {
        let live: Vec<&Vec<f64>> = rows.iter().filter(|r| r[1] == regime && r[0] > 0.02 + 1e-12).collect();
        let n_max = live.iter().take_while(|r| r[3] == 3.0).count();
        assert!(n_max > 0 && n_max < live.len());
        assert!(live[n_max..].iter().all(|r| r[3] < 3.0));
    }
}

#[test]
fn consistency_passes_at_coarse_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1_cost_a.json");
    let o = run(&["consistency", "--config", cfg.to_str().unwrap(), "--h", "0.1"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    for clause in ["stochastic", "mean", "variance", "switch", "stay", "jump"] {
        assert!(out.contains(&format!("PASS consistency {clause}")), "{out}");
    }
    assert!(!out.contains("FAIL"));
    let rows = read_csv(
        &dir.path().join("consistency.csv"),
        "i,v,regime,control,mean_error,variance_gap_over_dt,max_jump,boundary",
    );
    assert_eq!(rows.len(), 11 * 2 * 16);
}

#[test]
fn refine_and_hjb_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1_cost_a.json");
    let o = run(&["refine", "--config", cfg.to_str().unwrap(), "--meshes", "0.1,0.05,0.025"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS refine decreasing"));
    let rows = read_csv(&dir.path().join("refine.csv"), "h,iterations,diff_to_next,ratio_to_next");
    assert_eq!(rows.len(), 3);

    let o = run(&["hjb-residual", "--config", cfg.to_str().unwrap(), "--h", "0.05"], dir.path());
    assert!(o.status.success());
    let rows = read_csv(&dir.path().join("hjb.csv"), "i,regime,residual");
    assert!(rows.iter().all(|r| r[0] > 0.02 && r[2].is_finite()));
}

#[test]
fn simulation_is_byte_identical_across_runs_and_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config("example1_cost_a.json");
    let args = [
        "simulate", "--config", cfg.to_str().unwrap(), "--h", "0.05", "--n-paths", "200", "--seed", "9", "--trajectories", "2",
    ];
    let o1 = run(&args, a.path());
    let mut with_threads = args.to_vec();
    with_threads.extend(["--threads", "1"]);
    let o2 = run(&with_threads, b.path());
    assert!(o1.status.success() && o2.status.success());
    for f in ["stats.csv", "trajectories.csv", "value_policy.csv"] {
        let (x, y) = (a.path().join(f), b.path().join(f));
        if f == "value_policy.csv" {
            assert!(!x.exists());
            continue;
        }
        assert_eq!(std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap(), "{f}");
    }
    let stats = read_csv(
        &a.path().join("stats.csv"),
        "n_paths,mean_cost,std_dev,ci95_halfwidth,tail_bound,eradication_fraction,mean_tau,violations,value_at_start",
    );
    assert_eq!(stats[0][0], 200.0);
    assert_eq!(stats[0][7], 0.0);
}

#[test]
fn vaccination_solve_and_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example2_vaccination.json");
    let o = run(&["solve2d", "--config", cfg.to_str().unwrap(), "--h", "0.1"], dir.path());
    assert!(o.status.success());
    let rows = read_csv(&dir.path().join("value_policy.csv"), "i,v,regime,value,c,p,q");
    assert_eq!(rows.len(), 2 * 66);
    assert!(rows.iter().all(|r| r[0] + r[1] <= 1.0 + 1e-12));
    let o = run(
        &["simulate", "--model", "siv", "--config", cfg.to_str().unwrap(), "--h", "0.1", "--n-paths", "100", "--dt-sim", "1e-3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS simulate positivity"));
}

#[test]
fn invalid_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, fn(&str) -> String, &str); 4] = [
        ("negative rate", |t| t.replacen("\"lambda\": 2.0", "\"lambda\": -1.0", 1), "regimes[0].lambda"),
        ("row sum", |t| t.replace("[-1.0, 1.0]", "[-1.0, 1.1]"), "generator"),
        ("syntax", |t| t.replace("\"delta\": 0.05", "\"delta\": 0.05,,"), "line"),
        ("unknown key", |t| t.replace("\"xi\": 0.02", "\"xi\": 0.02, \"chi\": 1"), "chi"),
    ];
    for (name, edit, needle) in cases {
        let path = write_config(dir.path(), edit);
        let o = run(&["solve1d", "--config", path.to_str().unwrap(), "--h", "0.1"], dir.path());
        assert_eq!(o.status.code(), Some(3), "{name}: {}", stderr(&o));
        let err = stderr(&o);
        assert!(err.contains("error[E_CONFIG]") || err.contains("error[E_PARSE]"), "{name}: {err}");
        assert!(err.contains(needle), "{name}: {err}");
    }
}

#[test]
fn bad_mesh_and_missing_epsilon_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1_cost_a.json");
    let o = run(&["solve1d", "--config", cfg.to_str().unwrap(), "--h", "0.03"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["solve2d", "--config", cfg.to_str().unwrap(), "--h", "0.1"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("epsilon"));
}

#[test]
fn iteration_cap_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example1_cost_a.json");
    let o = run(&["solve1d", "--config", cfg.to_str().unwrap(), "--h", "0.1", "--max-iters", "5"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL solve1d converged"));
    // artifacts are still written
    assert!(dir.path().join("value_policy.csv").exists());
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve1d", "--config", "/nonexistent/config.json"], dir.path());
    assert_eq!(o.status.code(), Some(7));
    assert!(stderr(&o).contains("E_IO"));
}
