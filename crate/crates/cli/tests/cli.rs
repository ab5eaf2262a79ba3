use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const RECORD_KEYS: [&str; 24] = [
    "schema_version",
    "method",
    "step",
    "t",
    "tau",
    "energy",
    "energy_error",
    "energy_variance",
    "observables",
    "loschmidt_rate",
    "residual",
    "error_estimate",
    "rejected_steps",
    "phase_re",
    "phase_im",
    "infidelity",
    "infidelity_error",
    "iterations",
    "converged",
    "optimization_trace",
    "sampler",
    "solver",
    "vanishing_connections",
    "checkpoint",
];

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn nqsdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nqsdyn"))
        .args(args)
        .env_remove("NQSDYN_THREADS")
        .output()
        .expect("binary runs")
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    nqsdyn(&args)
}

fn records(out: &Path) -> Vec<Value> {
    fs::read_to_string(out.join("trajectory.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Small quench shared by most tests; `{method}` is replaced per test.
fn small_config(dir: &Path, name: &str, sampler: &str, method: &str, output: &str) -> PathBuf {
    let text = format!(
        r#"
version = 1
seed = 4

[model]
name = "tfim"
lattice = "chain"
extent = [4]
boundary = "periodic"
hx = 1.0

[ansatz]
architecture = "rbm"
alpha = 1
initial_state = "+x"

[sampler]
{sampler}

[method]
{method}

[[observables]]
kind = "magnetization"
axis = "X"

[[observables]]
kind = "correlation"
axis = "Z"
i = 0
j = 1

[output]
{output}
"#
    );
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn assert_schema(rec: &Value) {
    let obj = rec.as_object().expect("record is an object");
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut want = RECORD_KEYS.to_vec();
    want.sort_unstable();
    assert_eq!(keys, want);
    assert_eq!(rec["schema_version"], 1);
    assert!(rec["t"].is_f64() && rec["step"].is_u64());
    for (_, o) in rec["observables"].as_object().unwrap() {
        assert!(o["mean"].is_f64() && o["std_error"].is_f64());
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = repo_root().join("configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = nqsdyn(&["validate-config", "--config", path.to_str().unwrap()]);
            assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let good = small_config(dir.path(), "a.toml", "kind = \"exact\"", "kind = \"tdvp\"\nmax_time = 0.0", "");
    let text = fs::read_to_string(&good).unwrap();
    for (from, to) in [
        ("hx = 1.0", "hx = 1.0\nhy = 1.0"),
        ("version = 1", "version = 9"),
        ("alpha = 1", "alpha = 1\nwidth = 3"),
        ("kind = \"exact\"", "kind = \"exact\"\nn_sample = 5"),
    ] {
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, text.replace(from, to)).unwrap();
        let out = nqsdyn(&["validate-config", "--config", bad.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{to}");
        let out = run("evolve-tdvp", &bad, &dir.path().join("o"), &[]);
        assert_eq!(out.status.code(), Some(2), "{to}");
    }
    let out = nqsdyn(&["validate-config", "--config", "/nonexistent.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run("evolve-global", &good, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_time_gives_a_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "c.toml", "kind = \"exact\"", "kind = \"tdvp\"\nmax_time = 0.0", "loschmidt = true");
    let out_dir = dir.path().join("out");
    let out = run("evolve-tdvp", &cfg, &out_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&out_dir);
    assert_eq!(recs.len(), 1);
    assert_schema(&recs[0]);
    assert_eq!(recs[0]["t"], 0.0);
    assert!((recs[0]["observables"]["mx"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    assert_eq!(recs[0]["loschmidt_rate"].as_f64().unwrap().abs() < 1e-4, true);
    assert_eq!(recs[0]["checkpoint"], "checkpoints/step_000000.json");
    assert!(out_dir.join("checkpoints/step_000000.json").is_file());
    let meta: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "ok");
    assert_eq!(meta["n_records"], 1);
    // no temporary files are left behind
    for entry in fs::read_dir(&out_dir).unwrap() {
        assert!(!entry.unwrap().file_name().to_string_lossy().starts_with('.'));
    }
}

const MCMC: &str = "kind = \"mcmc\"\nn_samples = 2000\nn_chains = 4";
const TDVP: &str = "kind = \"tdvp\"\nmax_time = 0.1\n[method.step]\ntau0 = 0.01\ntau_min = 0.01\ntau_max = 0.01\nlocal_error_target = 1e3";

#[test]
fn reruns_are_byte_identical_and_seed_matters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "c.toml", MCMC, TDVP, "checkpoint_every = 3");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = run("evolve-tdvp", &cfg, out, &["--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = fs::read(a.join("trajectory.jsonl")).unwrap();
    assert_eq!(ta, fs::read(b.join("trajectory.jsonl")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoints/step_000009.json")).unwrap(),
        fs::read(b.join("checkpoints/step_000009.json")).unwrap()
    );
    let recs = records(&a);
    assert_eq!(recs.len(), 11);
    recs.iter().for_each(assert_schema);
    assert!(recs[10]["sampler"]["n_samples"].as_u64().unwrap() >= 2000);
    assert!(run("evolve-tdvp", &cfg, &c, &["--seed", "5"]).status.success());
    assert_ne!(ta, fs::read(c.join("trajectory.jsonl")).unwrap());
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "c.toml", MCMC, TDVP, "checkpoint_every = 4");
    let full = dir.path().join("full");
    assert!(run("evolve-tdvp", &cfg, &full, &[]).status.success());
    let part = dir.path().join("part");
    fs::create_dir_all(part.join("checkpoints")).unwrap();
    // keep the trajectory through step 6 and resume from the step-4 checkpoint
    let text = fs::read_to_string(full.join("trajectory.jsonl")).unwrap();
    let head: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
    fs::write(part.join("trajectory.jsonl"), head).unwrap();
    let ck = part.join("checkpoints/step_000004.json");
    fs::copy(full.join("checkpoints/step_000004.json"), &ck).unwrap();
    let o = run("evolve-tdvp", &cfg, &part, &["--resume", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(text, fs::read_to_string(part.join("trajectory.jsonl")).unwrap());

    // a checkpoint from another seed is refused
    let o = run("evolve-tdvp", &cfg, &part, &["--resume", ck.to_str().unwrap(), "--seed", "99"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn global_run_records_optimization_traces_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let method = "kind = \"global\"\npropagator = \"trotter2\"\ntau = 0.05\nmax_time = 0.15\n[method.optimizer]\nmax_iterations = 30";
    let cfg = small_config(dir.path(), "g.toml", "kind = \"exact\"", method, "checkpoint_every = 1");
    let out = dir.path().join("g");
    let o = run("evolve-global", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = records(&out);
    assert_eq!(recs.len(), 4);
    recs.iter().for_each(assert_schema);
    assert_eq!(recs[0]["optimization_trace"].as_array().unwrap().len(), 0);
    let trace = recs[2]["optimization_trace"].as_array().unwrap();
    assert!(!trace.is_empty());
    assert!(recs[3]["infidelity"].as_f64().unwrap() < 1e-4);
    assert!((recs[3]["t"].as_f64().unwrap() - 0.15).abs() < 1e-12);

    let text = fs::read_to_string(out.join("trajectory.jsonl")).unwrap();
    let ck = out.join("checkpoints/step_000002.json");
    let o = run("evolve-global", &cfg, &out, &["--resume", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(text, fs::read_to_string(out.join("trajectory.jsonl")).unwrap());
}

#[test]
fn step_underflow_exits_with_code_4_and_keeps_records() {
    let dir = tempfile::tempdir().unwrap();
    let method = "kind = \"tdvp\"\nmax_time = 1.0\n[method.step]\ntau0 = 0.1\ntau_min = 0.1\ntau_max = 0.1\nlocal_error_target = 1e-12";
    let cfg = small_config(dir.path(), "u.toml", "kind = \"exact\"", method, "");
    let out = dir.path().join("u");
    let o = run("evolve-tdvp", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(records(&out).len(), 1);
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["exit_code"], 4);
}

#[test]
fn exact_manifold_run_matches_benchmark_ed() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(small_config(
        dir.path(),
        "m.toml",
        "kind = \"exact\"",
        "kind = \"tdvp\"\nmax_time = 0.5\n[method.regularization]\nsvd_cutoff = 1e-12\nsnr_threshold = 0.0\n[method.step]\nlocal_error_target = 1e-6",
        "record_interval = 0.1\nloschmidt = true",
    ))
    .unwrap()
    .replace("architecture = \"rbm\"\nalpha = 1", "architecture = \"full\"")
    // at hx = J some amplitudes of this quench pass through zero, which no
    // log-amplitude parametrization can follow
    .replace("hx = 1.0", "hx = 0.5");
    let cfg = dir.path().join("full.toml");
    fs::write(&cfg, text).unwrap();
    let (tdvp, ed) = (dir.path().join("tdvp"), dir.path().join("ed"));
    assert!(run("evolve-tdvp", &cfg, &tdvp, &[]).status.success());
    assert!(run("benchmark-ed", &cfg, &ed, &[]).status.success());
    let exact = records(&ed);
    assert_eq!(exact.len(), 6);
    exact.iter().for_each(assert_schema);
    assert_eq!(exact[0]["method"], "ed");
    let last = records(&tdvp).pop().unwrap();
    let ref_last = exact.last().unwrap();
    for key in ["mx", "czz_0_1"] {
        let a = last["observables"][key]["mean"].as_f64().unwrap();
        let b = ref_last["observables"][key]["mean"].as_f64().unwrap();
        assert!((a - b).abs() < 1e-5, "{key}: {a} vs {b}");
    }
    let (la, lb) = (last["loschmidt_rate"].as_f64().unwrap(), ref_last["loschmidt_rate"].as_f64().unwrap());
    assert!((la - lb).abs() < 1e-5);

    // the bundled comparison script agrees when python is available
    if let Ok(o) = Command::new("python3")
        .arg(repo_root().join("scripts/compare.py"))
        .arg(tdvp.join("trajectory.jsonl"))
        .arg(ed.join("trajectory.jsonl"))
        .output()
    {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
        assert!(String::from_utf8_lossy(&o.stdout).contains("max |diff| mx"));
    }
}

#[test]
fn sample_check_reports_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        "s.toml",
        "kind = \"mcmc\"\nn_samples = 20000\nn_chains = 4",
        "kind = \"tdvp\"\nmax_time = 0.0",
        "",
    );
    let out = dir.path().join("s");
    let o = run("sample-check", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("sample_check.json")).unwrap()).unwrap();
    assert_eq!(report["consistent"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 3);
    assert!(report["total_variation"].as_f64().unwrap() < 0.1);
}
