//! One function per subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hippo_core::diffcore::{finite_diff_check, grad, Checkpoint, CorruptedGradient, Loss};
use hippo_core::evalkit::{
    self, baseline_zero_mean, diversity_report, write_diversity_csv, write_sweep_csv, zero_shot_eval, DiversityProbe,
    EvalPolicy, SweepAxis,
};
use hippo_core::grads::{
    approx_logprob_grad, estimate_advantages, exact_logprob_grad, BaselineMode, BaselineSet, FlatPpoSurrogate,
    HierTerms, HippoSurrogate, TrajectoryLogLik,
};
use hippo_core::hierpolicy::{load_pretrained, AnyPolicy, FlatPolicy, HierPolicy};
use hippo_core::rollout::{collect_batch, BatchSize, Sampler};
use hippo_core::seeding;
use hippo_core::trainer::{
    ablation_suite, scripted_source, train_with, Algorithm, Init, RunOptions, Start, Summary, TrainConfig,
};

use crate::config::RunConfig;
use crate::plot::{load_series, render_svg};
use crate::{CliError, EXIT_ABORT, EXIT_FAIL};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Globals {
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(CliError::usage("--workers must be >= 1"));
            }
            cfg.train.workers = w;
        }
        Ok(cfg)
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::fail(format!("i/o error: {e}"))
}

fn core(code: u8) -> impl Fn(hippo_core::Error) -> CliError {
    move |e| CliError::from_core(e, code)
}

fn write_echo(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(io_err)
}

fn start_for(train: &TrainConfig) -> Result<Start, CliError> {
    if train.init == Init::Pretrained || train.algorithm == Algorithm::ManagerOnly {
        Ok(Start::Pretrained(scripted_source(train).map_err(core(EXIT_FAIL))?))
    } else {
        Ok(Start::Scratch)
    }
}

pub fn train(g: &Globals, resume: bool, checkpoint_every: usize) -> Result<(), CliError> {
    let cfg = g.run_config()?;
    let out = g.out_dir("hippo-out");
    write_echo(&out, &cfg)?;
    let opts = RunOptions {
        out_dir: Some(out.clone()),
        checkpoint_every,
        resume,
    };
    let start = start_for(&cfg.train)?;
    match train_with(&cfg.train, &opts, &start) {
        Ok(r) => {
            let s = r.report.summary();
            println!(
                "trained {} iterations: final return {:.4} +- {:.4}; outputs in {}",
                s.iterations,
                s.final_return_mean,
                s.final_return_std,
                out.display()
            );
            Ok(())
        }
        Err(e) => {
            let mut err = CliError::from_core(e, EXIT_ABORT);
            if err.code == EXIT_ABORT {
                err.message = format!(
                    "training aborted: {}; last good state kept in {}",
                    err.message,
                    out.display()
                );
            }
            Err(err)
        }
    }
}

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn fd_check(
    name: &str,
    loss: &dyn Loss,
    params: &hippo_core::diffcore::ParamVector,
    cfg: &RunConfig,
    corrupt: bool,
) -> Result<Check, CliError> {
    let report = if corrupt {
        let g = grad(loss, params).map_err(core(EXIT_FAIL))?;
        let index = (0..g.values.len())
            .max_by(|&a, &b| g.values[a].abs().total_cmp(&g.values[b].abs()))
            .unwrap_or(0);
        let bad = CorruptedGradient {
            inner: loss,
            index,
            factor: 2.0,
        };
        finite_diff_check(&bad, params, cfg.eval.fd_step, cfg.eval.fd_tol)
    } else {
        finite_diff_check(loss, params, cfg.eval.fd_step, cfg.eval.fd_tol)
    }
    .map_err(core(EXIT_FAIL))?;
    Ok(Check {
        name: format!("finite_diff {name}"),
        pass: report.pass,
        detail: format!("max_rel_err={:.3e} worst={}", report.max_rel_err, report.worst_segment),
    })
}

pub fn gradcheck(g: &Globals, n_traj: Option<usize>, corrupt: bool) -> Result<(), CliError> {
    let cfg = g.run_config()?;
    let t = &cfg.train;
    let e = &cfg.eval;
    let src = scripted_source(t).map_err(core(EXIT_FAIL))?;
    let policy = load_pretrained(t.hier_spec(), &src, t.policy_seed()).map_err(core(EXIT_FAIL))?;
    let probe = DiversityProbe {
        horizon: e.probe_horizon,
        p_min: e.probe_p,
        p_max: e.probe_p,
        seed: t.seed,
        workers: t.workers,
    };
    let mut checks = Vec::new();

    let batch = collect_batch(
        &cfg.env,
        Sampler::Hier {
            policy: &policy,
            p_min: e.probe_p,
            p_max: e.probe_p,
        },
        BatchSize::trajectories(2),
        e.probe_horizon,
        1,
        seeding::derive(t.seed, &[0x6C]),
        0,
    )
    .map_err(core(EXIT_FAIL))?;
    let traj = &batch.trajectories[0];
    for (name, exact) in [("approx_loglik", false), ("exact_loglik", true)] {
        let loss = TrajectoryLogLik {
            policy: &policy,
            traj,
            exact,
        };
        checks.push(fd_check(name, &loss, &policy.params, &cfg, corrupt)?);
    }
    let baselines = BaselineSet::new(
        BaselineMode::Latent,
        cfg.env.obs_dim(),
        t.n,
        t.p_max as f64,
        &t.baseline_fit,
        5,
    )
    .map_err(core(EXIT_FAIL))?;
    let adv = estimate_advantages(&batch, &baselines, t.gamma, t.lambda, true).map_err(core(EXIT_FAIL))?;
    let sur = HippoSurrogate {
        policy: &policy,
        batch: &batch,
        adv: &adv,
        eps_clip: Some(t.eps_clip),
        terms: HierTerms::Both,
    };
    checks.push(fd_check("hippo_surrogate", &sur, &policy.params, &cfg, false)?);
    let flat = FlatPolicy::parity_with(&t.hier_spec(), t.policy_seed()).map_err(core(EXIT_FAIL))?;
    let flat_batch = collect_batch(
        &cfg.env,
        Sampler::Flat {
            policy: &flat,
            repeat: 1,
        },
        BatchSize::trajectories(2),
        e.probe_horizon,
        1,
        seeding::derive(t.seed, &[0x6D]),
        0,
    )
    .map_err(core(EXIT_FAIL))?;
    let fb = BaselineSet::new(BaselineMode::StateOnly, cfg.env.obs_dim(), 1, 1.0, &t.baseline_fit, 6)
        .map_err(core(EXIT_FAIL))?;
    let fadv = estimate_advantages(&flat_batch, &fb, t.gamma, t.lambda, true).map_err(core(EXIT_FAIL))?;
    let fsur = FlatPpoSurrogate {
        policy: &flat,
        batch: &flat_batch,
        adv: &fadv,
        eps_clip: Some(t.eps_clip),
    };
    checks.push(fd_check("flat_ppo_surrogate", &fsur, &flat.params, &cfg, false)?);

    let n1 = HierPolicy::new(
        hippo_core::hierpolicy::HierSpec { n: 1, ..t.hier_spec() },
        t.policy_seed(),
    )
    .map_err(core(EXIT_FAIL))?;
    let n1_batch = collect_batch(
        &cfg.env,
        Sampler::Hier {
            policy: &n1,
            p_min: t.p_min,
            p_max: t.p_max,
        },
        BatchSize::trajectories(5),
        e.probe_horizon,
        1,
        t.seed,
        0,
    )
    .map_err(core(EXIT_FAIL))?;
    let mut worst: f64 = 0.0;
    for tr in &n1_batch.trajectories {
        let a = exact_logprob_grad(&n1, tr).map_err(core(EXIT_FAIL))?;
        let b = approx_logprob_grad(&n1, tr).map_err(core(EXIT_FAIL))?;
        worst = a
            .values
            .iter()
            .zip(&b.values)
            .fold(worst, |m, (x, y)| m.max((x - y).abs()));
    }
    checks.push(Check {
        name: "single_skill exact==approx".into(),
        pass: worst <= 1e-10,
        detail: format!("max_abs_diff={worst:.3e}"),
    });

    let d = diversity_report(
        &policy,
        &cfg.env,
        n_traj.unwrap_or(e.probe_trajectories),
        "gradcheck",
        &probe,
    )
    .map_err(core(EXIT_FAIL))?;
    let eps = d.eps_hat.map_or(f64::NAN, |x| x.mean);
    checks.push(Check {
        name: "diversity".into(),
        pass: d.cos_sim.mean >= 0.9 && !(eps >= d.own_prob.mean),
        detail: format!(
            "cos_sim={:.4}+-{:.4} eps_hat={:.4} own_prob={:.4} rel_err={:.4} partial={}",
            d.cos_sim.mean, d.cos_sim.std, eps, d.own_prob.mean, d.rel_err.mean, d.partial
        ),
    });

    let random_b = BaselineSet::new(
        BaselineMode::Latent,
        cfg.env.obs_dim(),
        t.n,
        t.p_max as f64,
        &t.baseline_fit,
        seeding::derive(t.seed, &[0xB0]),
    )
    .map_err(core(EXIT_FAIL))?;
    for s in
        baseline_zero_mean(&policy, &cfg.env, &random_b, e.baseline_mc_trajectories, &probe).map_err(core(EXIT_FAIL))?
    {
        checks.push(Check {
            name: format!("baseline_zero_mean {}", s.term),
            pass: s.z_score() < 3.0,
            detail: format!("mean={:.3e} std_err={:.3e} z={:.2}", s.mean, s.std_err, s.z_score()),
        });
    }

    if let Some(out) = &g.out {
        fs::create_dir_all(out).map_err(io_err)?;
        write_diversity_csv(&out.join("diversity.csv"), std::slice::from_ref(&d)).map_err(core(EXIT_FAIL))?;
    }
    let mut failed = 0;
    for c in &checks {
        println!("{} {:<32} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.pass);
    }
    if failed > 0 {
        return Err(CliError::fail(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn load_eval_policy(spec: &str, cfg: &RunConfig) -> Result<EvalPolicy, CliError> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--policy `{spec}` is not name=path")))?;
    let path = Path::new(path);
    let (ckpt, trained): (PathBuf, Option<TrainConfig>) = if path.is_dir() {
        let s: Summary = serde_json::from_reader(
            fs::File::open(path.join("summary.json"))
                .map_err(|e| CliError::config(format!("{}: {e}", path.join("summary.json").display())))?,
        )
        .map_err(|e| CliError::config(format!("{}: {e}", path.join("summary.json").display())))?;
        (path.join("policy.ckpt"), Some(s.config))
    } else {
        (path.to_path_buf(), None)
    };
    let ck = Checkpoint::load(&ckpt).map_err(|e| CliError::config(format!("{}: {e}", ckpt.display())))?;
    let policy = AnyPolicy::from_checkpoint(&ck).map_err(core(EXIT_FAIL))?;
    let t = trained.as_ref().unwrap_or(&cfg.train);
    if let Some(tc) = &trained {
        if tc.env.kind != cfg.env.kind {
            return Err(CliError::config(format!(
                "policy `{name}` was trained on {:?}, evaluation env is {:?}",
                tc.env.kind, cfg.env.kind
            )));
        }
    }
    Ok(EvalPolicy {
        name: name.to_string(),
        policy,
        p_min: t.p_min,
        p_max: t.p_max,
        repeat: if t.algorithm == Algorithm::FlatPpoRepeat {
            t.repeat
        } else {
            1
        },
    })
}

pub fn transfer(g: &Globals, policies: &[String], env_name: &str) -> Result<(), CliError> {
    let cfg = g.run_config()?;
    if policies.is_empty() {
        return Err(CliError::usage("transfer needs at least one --policy name=path"));
    }
    let ps = policies
        .iter()
        .map(|p| load_eval_policy(p, &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let table = zero_shot_eval(
        &ps,
        env_name,
        &cfg.env,
        &cfg.eval.suite()?,
        cfg.eval.n_rollouts,
        cfg.train.seed,
    )
    .map_err(core(EXIT_FAIL))?;
    let out = g.out_dir("hippo-transfer");
    write_echo(&out, &cfg)?;
    table.write_csv(&out.join("transfer.csv")).map_err(core(EXIT_FAIL))?;
    for c in &table.cells {
        println!(
            "{:<16} {:<10} {:<10} {:>10.4} {:>9.4} {:>+8.2}%",
            c.algo,
            c.env,
            c.perturbation,
            c.return_mean,
            c.return_std,
            100.0 * c.pct_change
        );
    }
    if ps.len() >= 2 {
        let (w, n) = table.win_count(&ps[0].name, &ps[1].name);
        println!("win count {} vs {}: {w} of {n} cells", ps[0].name, ps[1].name);
    }
    Ok(())
}

/// Parses `2,4,6` for the skill axis or `1-1,5-15` for time-commitment.
pub fn parse_axis(axis: &str, values: &str) -> Result<SweepAxis, CliError> {
    let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let bad = |v: &str| CliError::usage(format!("bad sweep value `{v}` for axis `{axis}`"));
    match axis {
        "n" | "skills" => Ok(SweepAxis::SkillCount(
            items
                .iter()
                .map(|v| v.parse().map_err(|_| bad(v)))
                .collect::<Result<_, _>>()?,
        )),
        "time_commitment" | "time-commitment" | "p" => Ok(SweepAxis::TimeCommitment(
            items
                .iter()
                .map(|v| {
                    let (a, b) = v.split_once('-').unwrap_or((v, v));
                    Ok((a.parse().map_err(|_| bad(v))?, b.parse().map_err(|_| bad(v))?))
                })
                .collect::<Result<_, CliError>>()?,
        )),
        other => Err(CliError::usage(format!(
            "unknown sweep axis `{other}` (use n or time_commitment)"
        ))),
    }
}

pub fn sweep(g: &Globals, axis: &str, values: &str) -> Result<(), CliError> {
    let cfg = g.run_config()?;
    let axis = parse_axis(axis, values)?;
    let seeds = match g.seed {
        Some(s) => vec![s],
        None => cfg.eval.seeds.clone(),
    };
    let out = g.out_dir("hippo-sweep");
    write_echo(&out, &cfg)?;
    let rows = evalkit::sweep(&cfg.train, &axis, &seeds, Some(&out)).map_err(core(EXIT_FAIL))?;
    write_sweep_csv(&out.join("sweep.csv"), &rows).map_err(core(EXIT_FAIL))?;
    for r in &rows {
        match r.ok {
            true => println!(
                "{}={} seed {}: final return {:.4}",
                r.axis, r.value, r.seed, r.final_return_mean
            ),
            false => println!("{}={} seed {}: FAILED {}", r.axis, r.value, r.seed, r.error),
        }
    }
    Ok(())
}

pub fn ablate(g: &Globals) -> Result<(), CliError> {
    let cfg = g.run_config()?;
    let out = g.out_dir("hippo-ablate");
    write_echo(&out, &cfg)?;
    let mut w = csv::Writer::from_path(out.join("ablation.csv")).map_err(|e| CliError::fail(e.to_string()))?;
    w.write_record([
        "label",
        "ok",
        "final_return_mean",
        "final_return_std",
        "final_return_window5",
        "error",
    ])
    .map_err(|e| CliError::fail(e.to_string()))?;
    for (label, r) in ablation_suite(&cfg.train, Some(&out)) {
        let rec = match &r {
            Ok(rep) => {
                let s = rep.summary();
                println!("{label:<22} final return {:.4}", s.final_return_mean);
                vec![
                    label,
                    "true".into(),
                    s.final_return_mean.to_string(),
                    s.final_return_std.to_string(),
                    s.final_return_window5.to_string(),
                    String::new(),
                ]
            }
            Err(e) => {
                println!("{label:<22} FAILED {e}");
                vec![
                    label,
                    "false".into(),
                    "NaN".into(),
                    "NaN".into(),
                    "NaN".into(),
                    e.to_string(),
                ]
            }
        };
        w.write_record(&rec).map_err(|e| CliError::fail(e.to_string()))?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn plot(g: &Globals, dirs: &[PathBuf], metric: &str) -> Result<(), CliError> {
    let series = load_series(dirs, metric)?;
    let out = g.out_dir(".");
    fs::create_dir_all(&out).map_err(io_err)?;
    let path = out.join(format!("{metric}.svg"));
    fs::write(&path, render_svg(&series, metric)).map_err(io_err)?;
    println!("wrote {} ({} line(s))", path.display(), series.len());
    Ok(())
}

pub fn inspect_batch(g: &Globals, checkpoint: Option<&Path>, iteration: u64) -> Result<(), CliError> {
    let cfg = g.run_config()?;
    let t = &cfg.train;
    let policy = match checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            AnyPolicy::from_checkpoint(&ck).map_err(core(EXIT_FAIL))?
        }
        None if t.algorithm.is_hierarchical() => {
            AnyPolicy::Hier(HierPolicy::new(t.hier_spec(), t.policy_seed()).map_err(core(EXIT_FAIL))?)
        }
        None => AnyPolicy::Flat(FlatPolicy::parity_with(&t.hier_spec(), t.policy_seed()).map_err(core(EXIT_FAIL))?),
    };
    let sampler = match &policy {
        AnyPolicy::Hier(policy) => Sampler::Hier {
            policy,
            p_min: t.p_min,
            p_max: t.p_max,
        },
        AnyPolicy::Flat(policy) => Sampler::Flat {
            policy,
            repeat: if t.algorithm == Algorithm::FlatPpoRepeat {
                t.repeat
            } else {
                1
            },
        },
    };
    let batch = collect_batch(
        &cfg.env,
        sampler,
        BatchSize::steps(t.min_steps),
        t.rollout_horizon(),
        t.workers,
        t.collect_seed(),
        iteration,
    )
    .map_err(core(EXIT_FAIL))?;
    match &g.out {
        Some(out) => {
            fs::create_dir_all(out).map_err(io_err)?;
            let f = std::io::BufWriter::new(fs::File::create(out.join("batch.jsonl")).map_err(io_err)?);
            batch.write_jsonl(f).map_err(core(EXIT_FAIL))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            batch.write_jsonl(&mut lock).map_err(core(EXIT_FAIL))?;
            lock.flush().map_err(io_err)?;
        }
    }
    eprintln!(
        "batch: {} trajectories, {} steps, {} segments, mean return {:.4}, policy hash {:016x}",
        batch.trajectories.len(),
        batch.num_steps(),
        batch.num_segments(),
        batch.mean_return(),
        batch.policy_hash
    );
    Ok(())
}
