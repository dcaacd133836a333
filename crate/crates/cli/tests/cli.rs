//! End-to-end runs of the `pathcomplete` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pathcomplete"));
    c.env_remove("PATHCOMPLETE_SOLVER_OPTS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Parses the `name: value` line printed on stderr.
fn reported(o: &Output, name: &str) -> f64 {
    let prefix = format!("{name}: ");
    stderr(o)
        .lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {name} line in {}", stderr(o)))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn graph_gen_dual_debruijn() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["graph", "gen", "--debruijn", "1", "--modes", "2", "--dual", "-o", "g.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let g = json(&dir.path().join("g.json"));
    assert_eq!(g["nodes"].as_array().unwrap().len(), 2);
    assert_eq!(g["edges"].as_array().unwrap().len(), 4);
    let m = json(&dir.path().join("g.json.manifest.json"));
    assert_eq!(m["schema"], "manifest-v1");
    assert_eq!(m["outputs"][0], "g.json");
    assert_eq!(m["command"][0], "pathcomplete");
}

#[test]
fn graph_check_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["graph", "gen", "--preset", "fig1a", "-o", "a.json"])), 0);
    assert_eq!(code(&run(dir.path(), &["graph", "gen", "--preset", "fig1b", "-o", "b.json"])), 0);

    let a = run(dir.path(), &["graph", "check", "a.json"]);
    assert_eq!(code(&a), 0);
    assert!(stdout(&a).contains("co-complete: yes"));
    assert!(stdout(&a).contains("path-complete: yes"));

    let b = run(dir.path(), &["graph", "check", "b.json"]);
    assert_eq!(code(&b), 2);
    assert!(stdout(&b).contains("path-complete: no"));
    assert!(stdout(&b).contains("witness: 2 2"));
}

#[test]
fn usage_input_and_capacity_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 64);
    assert_eq!(code(&run(dir.path(), &["graph", "gen"])), 64);
    assert_eq!(code(&run(dir.path(), &["graph", "check", "missing.json"])), 66);
    assert_eq!(code(&run(dir.path(), &["graph", "gen", "--debruijn", "40", "--modes", "2"])), 70);
    fs::write(dir.path().join("bad.json"), "{not json").unwrap();
    assert_eq!(code(&run(dir.path(), &["graph", "check", "bad.json"])), 65);
}

#[test]
fn bound_and_tighten_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["system", "example2", "-o", "s.json"])), 0);
    assert_eq!(code(&run(d, &["graph", "gen", "--preset", "fig1a", "-o", "a.json"])), 0);
    let o = run(d, &["bound", "--system", "s.json", "--graph", "a.json", "--objective", "trace", "-o", "c.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!((reported(&o, "objective") - 8.883747).abs() < 1e-5);
    let cert = json(&d.join("c.json"));
    assert_eq!(cert["combiner"], "max");
    let manifest = json(&d.join("c.json.manifest.json"));
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);

    let t = run(d, &["tighten", "--cert", "c.json", "--system", "s.json", "--multipliers", "-o", "mu.json"]);
    assert_eq!(code(&t), 0, "{}", stderr(&t));
    let mu = json(&d.join("mu.json"));
    let mu_value = mu["mu"].as_f64().unwrap();
    assert!((1.0..1.5).contains(&mu_value));
    assert_eq!(mu["case"], "max");
    assert!(mu["multipliers"].is_object());

    let o = run(d, &["oracle", "--system", "s.json", "--x0", "1,0", "--cert", "c.json", "--mu", "mu.json", "-o", "o.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("o.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,H,J_H,stabilized,V,V_over_mu");
    let cells: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .enumerate()
        .filter(|(i, _)| *i != 4)
        .map(|(_, c)| c.parse().unwrap())
        .collect();
    let (j, v, w) = (cells[3], cells[4], cells[5]);
    assert!(w <= j + 1e-6 && j <= v + 1e-6);
}

#[test]
fn random_system_tightness_trend() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["system", "random", "--n", "2", "--modes", "2", "--seed", "11", "-o", "s.json"])), 0);
    let mut mus = Vec::new();
    for l in ["1", "2"] {
        assert_eq!(code(&run(d, &["graph", "gen", "--debruijn", l, "--dual", "-o", "g.json"])), 0);
        assert_eq!(code(&run(d, &["bound", "--system", "s.json", "--graph", "g.json", "-o", "c.json"])), 0);
        let t = run(d, &["tighten", "--cert", "c.json", "--system", "s.json"]);
        assert_eq!(code(&t), 0, "{}", stderr(&t));
        mus.push(reported(&t, "mu"));
    }
    assert!((1.0..1.5).contains(&mus[0]));
    assert!(mus[1] <= mus[0] + 1e-6);
    assert_eq!(json(&d.join("s.json.manifest.json"))["seed"], 11);
}

#[test]
fn infeasible_bound_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sys = r#"{"n": 1, "M": 2, "A": [[[2.0]], [[0.5]]], "Q": [[1.0]]}"#;
    fs::write(d.join("s.json"), sys).unwrap();
    assert_eq!(code(&run(d, &["graph", "gen", "--debruijn", "1", "--dual", "-o", "g.json"])), 0);
    let o = run(d, &["bound", "--system", "s.json", "--graph", "g.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"));
}

#[test]
fn synth_pointwise_controller() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["system", "controlled", "-o", "s.json"])), 0);
    assert_eq!(code(&run(d, &["graph", "gen", "--debruijn", "1", "-o", "g.json"])), 0);
    let x0 = format!("--x0={},{}", 2f64.cos(), 2f64.sin());
    let o = run(d, &["synth", "--system", "s.json", "--graph", "g.json", "--objective", "pointwise", &x0, "-o", "k.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!((reported(&o, "value") - 11.971591).abs() < 1e-4);
    let k = json(&d.join("k.json"));
    assert_eq!(k["K"].as_object().unwrap().len(), 2);

    let o = run(d, &["oracle", "--system", "s.json", "--controller", "k.json", &x0, "--horizon", "12"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let row: Vec<String> = stdout(&o).lines().nth(1).unwrap().split(',').map(String::from).collect();
    let (j, v): (f64, f64) = (row[3].parse().unwrap(), row[5].parse().unwrap());
    assert!(j <= v + 1e-6);
}

#[test]
fn solver_options_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["system", "example2", "-o", "s.json"])), 0);
    assert_eq!(code(&run(d, &["graph", "gen", "--preset", "fig1a", "-o", "a.json"])), 0);
    let bad = bin()
        .current_dir(d)
        .env("PATHCOMPLETE_SOLVER_OPTS", "feas_tol=oops")
        .args(["bound", "--system", "s.json", "--graph", "a.json"])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 64);
    let good = bin()
        .current_dir(d)
        .env("PATHCOMPLETE_SOLVER_OPTS", "max_iters=150")
        .args(["bound", "--system", "s.json", "--graph", "a.json", "-o", "c.json"])
        .output()
        .unwrap();
    assert_eq!(code(&good), 0);
    assert_eq!(json(&d.join("c.json.manifest.json"))["solver_options"]["max_iters"], 150);
}

#[test]
fn repro_table1_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["repro", "table1", "--config", "2,2", "--realizations", "3", "--orders", "1..3", "--seed", "5"];
    let mut outs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let mut a: Vec<&str> = args.to_vec();
        a.extend(["-o", name]);
        let o = run(d, &a);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outs.push(fs::read_to_string(d.join(name)).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert!(d.join("a.samples.csv").exists());
    let means: Vec<f64> = outs[0]
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(means.len(), 3);
    assert!(means.windows(2).all(|w| w[1] < w[0]));
    assert!(outs[0].starts_with("n,modes,order,realizations,failures,mean_mu,min_mu,max_mu,generator\n"));
}

#[test]
fn repro_fig3_gap_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["repro", "fig3", "--orders", "1,2,3", "--points", "7", "-o", "fig3.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(d.join("fig3.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "theta,order,upper,lower,mu,oracle,horizon,stabilized");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').take(6).map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 21);
    for k in 0..7 {
        let gaps: Vec<f64> = (0..3).map(|l| rows[l * 7 + k][2] - rows[l * 7 + k][3]).collect();
        assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1], "gaps {gaps:?} at row {k}");
        for l in 0..3 {
            let r = &rows[l * 7 + k];
            assert!(r[3] <= r[5] + 1e-6 && r[5] <= r[2] + 1e-6);
        }
    }
    let m = json(&d.join("fig3.csv.manifest.json"));
    assert_eq!(m["output_schemas"][0], "experiments-v1");
}
