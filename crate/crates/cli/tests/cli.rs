use std::path::Path;
use std::process::{Command, Output};

use hippo_cli::RunConfig;
use hippo_core::diffcore::Checkpoint;
use hippo_core::hierpolicy::{probe_observations, AnyPolicy, LatentCode};

const SMALL: &str = r#"
[train]
iterations = 2
min_steps = 200
epochs_per_iter = 2

[env]
size = 8
n_apples = 4
n_bombs = 4
horizon = 40

[eval]
probe_trajectories = 20
baseline_mc_trajectories = 100
n_rollouts = 3
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hippo-lab"))
        .current_dir(dir)
        .env_remove("HIPPO_LAB_WORKERS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("small.toml"), SMALL).unwrap();
    d
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn missing_config_exits_2() {
    let d = setup();
    assert_eq!(code(&run(d.path(), &["train", "-c", "nope.toml"])), 2);
}

#[test]
fn bad_keys_exit_2_with_diagnostics() {
    let d = setup();
    std::fs::write(d.path().join("bad.toml"), "[train]\nlr = 0.1\nlrr = 3\n").unwrap();
    let o = run(d.path(), &["train", "-c", "bad.toml"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("lrr") && err.contains("line 3"), "{err}");
    assert_eq!(code(&run(d.path(), &["train", "--override", "bogus=1"])), 2);
}

#[test]
fn default_config_trains_and_echoes_overrides() {
    let d = setup();
    let o = run(
        d.path(),
        &[
            "train",
            "--seed",
            "4",
            "--out",
            "run",
            "--override",
            "iterations=1",
            "--override",
            "lr=1e-3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = d.path().join("run");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_return_mean"].as_f64().unwrap().is_finite());
    assert_eq!(summary["config"]["lr"].as_f64(), Some(1e-3));
    let echo = std::fs::read_to_string(run_dir.join("config.toml")).unwrap();
    let cfg = RunConfig::parse(&echo, &[]).unwrap();
    assert_eq!(cfg.train.lr, 1e-3);
    assert_eq!(cfg.train.seed, 4);
    assert_eq!(RunConfig::parse(&cfg.to_toml(), &[]).unwrap(), cfg);
}

#[test]
fn resume_continues_deterministically() {
    let d = setup();
    assert_eq!(code(&run(d.path(), &["train", "-c", "small.toml", "--out", "full"])), 0);
    let one = [
        "train",
        "-c",
        "small.toml",
        "--out",
        "part",
        "--override",
        "iterations=1",
    ];
    assert_eq!(code(&run(d.path(), &one)), 0);
    assert_eq!(
        code(&run(
            d.path(),
            &["train", "-c", "small.toml", "--out", "part", "--resume"]
        )),
        0
    );
    let read = |p: &str| std::fs::read_to_string(d.path().join(p).join("metrics.csv")).unwrap();
    assert_eq!(read("full"), read("part"));
    assert_eq!(read("full").lines().count(), 3);
}

#[test]
fn worker_env_var_sets_workers_without_changing_results() {
    let d = setup();
    assert_eq!(code(&run(d.path(), &["train", "-c", "small.toml", "--out", "w1"])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_hippo-lab"))
        .current_dir(d.path())
        .env("HIPPO_LAB_WORKERS", "3")
        .args(["train", "-c", "small.toml", "--out", "w3"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let echo = std::fs::read_to_string(d.path().join("w3/config.toml")).unwrap();
    assert_eq!(RunConfig::parse(&echo, &[]).unwrap().train.workers, 3);
    let read = |p: &str| std::fs::read_to_string(d.path().join(p).join("metrics.csv")).unwrap();
    assert_eq!(read("w1"), read("w3"));
}

#[test]
fn divergent_training_exits_3_and_keeps_checkpoint() {
    let d = setup();
    let o = run(
        d.path(),
        &[
            "train",
            "-c",
            "small.toml",
            "--out",
            "boom",
            "--override",
            "env.reward.velocity_penalty_coeff=1.7976931348623157e308",
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("boom/policy.ckpt").exists());
}

#[test]
fn checkpoint_reload_gives_identical_distributions() {
    let d = setup();
    assert_eq!(code(&run(d.path(), &["train", "-c", "small.toml", "--out", "r"])), 0);
    let cfg = RunConfig::parse(SMALL, &[]).unwrap();
    let ck = Checkpoint::load(d.path().join("r/policy.ckpt")).unwrap();
    let a = AnyPolicy::from_checkpoint(&ck).unwrap();
    let b = AnyPolicy::from_checkpoint(&Checkpoint::load(d.path().join("r/policy.ckpt")).unwrap()).unwrap();
    let (AnyPolicy::Hier(a), AnyPolicy::Hier(b)) = (a, b) else {
        panic!("expected a hierarchical policy")
    };
    for o in probe_observations(&cfg.env, 10, 1).unwrap() {
        assert_eq!(a.manager_dist(&o, 5).unwrap(), b.manager_dist(&o, 5).unwrap());
        for z in 0..a.n() {
            assert_eq!(
                a.skill_dist(&o, LatentCode(z), 3).unwrap(),
                b.skill_dist(&o, LatentCode(z), 3).unwrap()
            );
        }
    }
    assert_eq!(a.params.checksum(), ck.params("", a.layout()).unwrap().checksum());
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let d = setup();
    let o = run(d.path(), &["gradcheck", "-c", "small.toml", "--out", "gc"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let s = stdout(&o);
    assert!(s.contains("eps_hat=") && s.contains("cos_sim="));
    assert!(!s.contains("FAIL"));
    let csv = std::fs::read_to_string(d.path().join("gc/diversity.csv")).unwrap();
    assert!(csv.starts_with("tag,cos_sim_mean"));
    let bad = run(
        d.path(),
        &["gradcheck", "-c", "small.toml", "--corrupt-gradient", "--n-traj", "4"],
    );
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("FAIL finite_diff"));
}

fn train_three(d: &Path) {
    for (name, alg) in [("rand", "hippo"), ("fixed", "hippo"), ("flat", "flat_ppo")] {
        let mut args = vec!["train", "-c", "small.toml", "--out", name, "--override"];
        let a = format!("algorithm={alg}");
        args.push(&a);
        if name == "fixed" {
            args.extend(["--override", "p_min=10", "--override", "p_max=10"]);
        }
        assert_eq!(code(&run(d, &args)), 0, "{name}");
    }
}

#[test]
fn transfer_table_shape_determinism_and_mismatch() {
    let d = setup();
    train_three(d.path());
    let args = |out: &'static str| {
        vec![
            "transfer",
            "-c",
            "small.toml",
            "--policy",
            "rand=rand",
            "--policy",
            "fixed=fixed",
            "--policy",
            "flat=flat",
            "--out",
            out,
        ]
    };
    let o = run(d.path(), &args("t1"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("win count rand vs fixed:"));
    let t1 = std::fs::read_to_string(d.path().join("t1/transfer.csv")).unwrap();
    assert_eq!(t1.lines().count(), 1 + 3 * 5);
    assert_eq!(t1.lines().filter(|l| l.contains(",initial,")).count(), 3);
    assert_eq!(code(&run(d.path(), &args("t2"))), 0);
    assert_eq!(t1, std::fs::read_to_string(d.path().join("t2/transfer.csv")).unwrap());

    let mut zero = args("t0");
    zero.extend([
        "--override",
        "perturbations=[\"mass:0\",\"dampening:0\",\"inertia:0\",\"friction:0\"]",
    ]);
    assert_eq!(code(&run(d.path(), &zero)), 0);
    let t0 = std::fs::read_to_string(d.path().join("t0/transfer.csv")).unwrap();
    assert!(t0.lines().skip(1).all(|l| l.ends_with(",0.0")), "{t0}");

    let o = run(
        d.path(),
        &[
            "transfer",
            "-c",
            "small.toml",
            "--override",
            "env.kind=chain_blocks",
            "--policy",
            "rand=rand",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_emits_one_directory_per_value() {
    let d = setup();
    let o = run(
        d.path(),
        &[
            "sweep",
            "-c",
            "small.toml",
            "--axis",
            "n",
            "--values",
            "2,4,6,8",
            "--seed",
            "0",
            "--out",
            "sw",
            "--override",
            "iterations=1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for n in [2, 4, 6, 8] {
        assert!(d.path().join(format!("sw/n={n}/seed0/summary.json")).exists());
    }
    let csv = std::fs::read_to_string(d.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(code(&run(d.path(), &["sweep", "--axis", "depth", "--values", "1"])), 2);
}

#[test]
fn ablate_emits_seven_runs_and_an_aggregate() {
    let d = setup();
    let o = run(
        d.path(),
        &[
            "ablate",
            "-c",
            "small.toml",
            "--out",
            "ab",
            "--override",
            "iterations=1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let runs = std::fs::read_dir(d.path().join("ab"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(runs, 7);
    let csv = std::fs::read_to_string(d.path().join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn plot_lines_bands_and_errors() {
    let d = setup();
    for s in 0..3 {
        let out = format!("grp/seed{s}");
        let seed = s.to_string();
        assert_eq!(
            code(&run(
                d.path(),
                &["train", "-c", "small.toml", "--seed", &seed, "--out", &out]
            )),
            0
        );
    }
    let o = run(d.path(), &["plot", "grp/seed0", "--out", "p1"]);
    assert_eq!(code(&o), 0);
    let svg = std::fs::read_to_string(d.path().join("p1/mean_return.svg")).unwrap();
    assert_eq!(svg.matches("class=\"line\"").count(), 1);
    assert_eq!(svg.matches("class=\"band\"").count(), 0);
    assert_eq!(
        code(&run(
            d.path(),
            &["plot", "grp/seed0", "grp/seed1", "grp/seed2", "--out", "p2"]
        )),
        0
    );
    let svg = std::fs::read_to_string(d.path().join("p2/mean_return.svg")).unwrap();
    assert_eq!(svg.matches("class=\"line\"").count(), 1);
    assert_eq!(svg.matches("class=\"band\"").count(), 1);
    assert_eq!(code(&run(d.path(), &["plot"])), 2);
    assert_eq!(code(&run(d.path(), &["plot", "grp/seed0", "--metric", "nope"])), 2);
}

#[test]
fn inspect_batch_writes_step_records() {
    let d = setup();
    let o = run(d.path(), &["inspect-batch", "-c", "small.toml", "--out", "ib"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(d.path().join("ib/batch.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first.get("time_remaining").is_some() && first.get("manager_logprob").is_some());
    assert!(text.lines().count() >= 200);
}
