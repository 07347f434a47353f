use super::*;
use crate::envs::EnvConfig;

fn small() -> TrainConfig {
    TrainConfig {
        env: EnvConfig {
            size: 8,
            n_apples: 4,
            n_bombs: 4,
            horizon: 40,
            ..EnvConfig::gather()
        },
        iterations: 2,
        min_steps: 240,
        epochs_per_iter: 3,
        baseline_fit: BaselineConfig {
            epochs: 5,
            ..BaselineConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn defaults_follow_published_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!(
        (c.lr, c.eps_clip, c.epochs_per_iter, c.gamma, c.n),
        (3e-3, 0.1, 10, 0.999, 6)
    );
    assert_eq!((c.p_min, c.p_max), (5, 15));
    c.validate().unwrap();
}

#[test]
fn validate_rejects_bad_values() {
    for f in [
        (|c: &mut TrainConfig| c.eps_clip = 1.0) as fn(&mut TrainConfig),
        |c| c.eps_clip = 0.0,
        |c| c.lr = 0.0,
        |c| c.iterations = 0,
        |c| (c.p_min, c.p_max) = (6, 5),
        |c| c.workers = 0,
        |c| {
            c.algorithm = Algorithm::FlatPpo;
            c.init = Init::Pretrained;
        },
    ] {
        let mut c = small();
        f(&mut c);
        assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
    }
}

#[test]
fn config_rejects_unknown_keys() {
    let r: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lr": 0.1, "lrr": 2}"#);
    assert!(r.is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.1}"#).unwrap();
    assert_eq!(c.lr, 0.1);
    assert_eq!(c.n, 6);
}

#[test]
fn same_config_gives_identical_reports() {
    let a = train(&small()).unwrap().report;
    let b = train(&small()).unwrap().report;
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 2);
    assert_eq!(a.epochs.len(), 6);
    for e in &a.epochs {
        assert!((0.0..=1.0).contains(&e.clip_fraction));
    }
    assert!(a.rows.iter().all(|r| r.mean_return.is_finite() && r.steps >= 240));
}

#[test]
fn worker_count_does_not_change_results() {
    let a = train(&small()).unwrap().report;
    let b = train(&TrainConfig { workers: 3, ..small() }).unwrap().report;
    assert_eq!(a.rows, b.rows);
}

#[test]
fn every_algorithm_runs() {
    for alg in [
        Algorithm::Hippo,
        Algorithm::HierVpg,
        Algorithm::FlatPpo,
        Algorithm::FlatPpoRepeat,
    ] {
        let r = train(&TrainConfig {
            algorithm: alg,
            ..small()
        })
        .unwrap();
        assert_eq!(r.report.rows.len(), 2, "{alg:?}");
        assert_eq!(matches!(r.policy, AnyPolicy::Hier(_)), alg.is_hierarchical());
    }
}

#[test]
fn unclipped_variant_never_reports_clipping() {
    let r = train(&TrainConfig {
        algorithm: Algorithm::HierVpg,
        ..small()
    })
    .unwrap();
    assert!(r.report.epochs.iter().all(|e| e.clip_fraction == 0.0));
}

#[test]
fn minibatches_cover_the_batch() {
    let r = train(&TrainConfig {
        minibatch_trajectories: 2,
        ..small()
    })
    .unwrap();
    assert_eq!(r.report.rows.len(), 2);
}

#[test]
fn manager_only_keeps_skills_bit_identical() {
    let cfg = small();
    let src = scripted_source(&cfg).unwrap();
    let init = load_pretrained(cfg.hier_spec(), &src, cfg.policy_seed()).unwrap();
    let r = train_manager_only(&cfg, &src).unwrap();
    let AnyPolicy::Hier(p) = r.policy else { panic!() };
    let s = p.skill_range();
    assert_eq!(p.params.values()[s.clone()], init.params.values()[s]);
    let m = p.manager_range();
    assert_ne!(p.params.values()[m.clone()], init.params.values()[m]);
    assert!(r.report.pretrained_from.is_some());
}

#[test]
fn manager_only_needs_skills() {
    let c = TrainConfig {
        algorithm: Algorithm::ManagerOnly,
        ..small()
    };
    assert!(matches!(train(&c), Err(Error::Config(_))));
}

#[test]
fn adaptation_moves_skills_and_logs_drift() {
    let cfg = small();
    let src = scripted_source(&cfg).unwrap();
    let init = load_pretrained(cfg.hier_spec(), &src, cfg.policy_seed()).unwrap();
    let r = adapt_pretrained(&cfg, &src).unwrap();
    let AnyPolicy::Hier(p) = r.policy else { panic!() };
    let s = p.skill_range();
    assert_ne!(p.params.values()[s.clone()], init.params.values()[s]);
    assert!(r.report.rows.iter().all(|row| row.skill_tv.is_some()));
    assert!(r.report.pretrained_from.unwrap().contains("scripted"));
    let flat = TrainConfig {
        algorithm: Algorithm::FlatPpo,
        ..cfg
    };
    assert!(adapt_pretrained(&flat, &src).is_err());
}

#[test]
fn diversity_logging_fills_columns() {
    let r = train(&TrainConfig {
        diversity: true,
        ..small()
    })
    .unwrap();
    for row in &r.report.rows {
        let (e, o) = (row.eps_hat.unwrap(), row.own_prob.unwrap());
        assert!((0.0..=1.0).contains(&e) && (0.0..=1.0).contains(&o));
    }
}

#[test]
fn writes_outputs_and_resumes_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let full = TrainConfig {
        iterations: 3,
        ..small()
    };
    let straight = train_with(&full, &RunOptions::in_dir(dir.path().join("a")), &Start::Scratch).unwrap();
    let a = dir.path().join("a");
    for f in [
        "metrics.csv",
        "epochs.csv",
        "summary.json",
        "policy.ckpt",
        TRAIN_STATE_FILE,
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(read_metrics_csv(&a.join("metrics.csv")).unwrap(), straight.report.rows);
    let s: Summary = serde_json::from_reader(std::fs::File::open(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s.config, full);
    assert_eq!(s.iterations, 3);

    let b = dir.path().join("b");
    let part = TrainConfig {
        iterations: 1,
        ..full.clone()
    };
    train_with(&part, &RunOptions::in_dir(&b), &Start::Scratch).unwrap();
    let resumed = train_with(
        &full,
        &RunOptions {
            resume: true,
            ..RunOptions::in_dir(&b)
        },
        &Start::Scratch,
    )
    .unwrap();
    assert_eq!(resumed.report.rows, straight.report.rows);
    assert_eq!(resumed.policy, straight.policy);

    let other = TrainConfig { lr: 1e-2, ..full };
    let e = train_with(
        &other,
        &RunOptions {
            resume: true,
            ..RunOptions::in_dir(&b)
        },
        &Start::Scratch,
    );
    assert!(matches!(e, Err(Error::Config(_))));
}

#[test]
fn divergence_aborts_and_keeps_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig {
        iterations: 4,
        ..small()
    };
    // Any move overflows the discounted return.
    cfg.env.reward.velocity_penalty_coeff = f64::MAX;
    let r = train_with(&cfg, &RunOptions::in_dir(dir.path()), &Start::Scratch);
    assert!(matches!(r, Err(Error::Numerical { .. })), "{:?}", r.err());
    assert!(dir.path().join("policy.ckpt").exists());
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn ablation_suite_has_seven_variants_on_shared_seeds() {
    let base = small();
    let cfgs = ablation_configs(&base);
    assert_eq!(cfgs.len(), 7);
    assert!(cfgs
        .iter()
        .all(|(_, c)| c.seed == base.seed && c.collect_seed() == base.collect_seed()));
    let p1 = &cfgs.iter().find(|(l, _)| l == "hippo_p1").unwrap().1;
    assert_eq!((p1.p_min, p1.p_max), (1, 1));
    let rep = &cfgs.iter().find(|(l, _)| l == "flat_ppo_repeat").unwrap().1;
    assert_eq!(rep.repeat, 10);
}

#[test]
fn ablation_suite_records_failures_and_continues() {
    let base = TrainConfig {
        iterations: 1,
        // The fixed-p variants ignore these bounds; the others fail validation.
        p_min: 9,
        p_max: 3,
        ..small()
    };
    let out = ablation_suite(&base, None);
    assert_eq!(out.len(), 7);
    let ok: Vec<_> = out.iter().filter(|(_, r)| r.is_ok()).map(|(l, _)| l.as_str()).collect();
    assert!(ok.contains(&"hippo_p10") && ok.contains(&"hippo_p1"));
    assert!(out.iter().any(|(_, r)| r.is_err()));
}
