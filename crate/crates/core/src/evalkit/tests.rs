use proptest::prelude::*;

use super::transfer::pct_change;
use super::*;
use crate::envs::{standard_suite, EnvConfig};
use crate::grads::BaselineMode;
use crate::hierpolicy::{load_pretrained, probe_observations, AnyPolicy, HierSpec, PretrainedSource, ScriptedSkillSet};
use crate::trainer::TrainConfig;

fn env() -> EnvConfig {
    EnvConfig {
        size: 8,
        n_apples: 4,
        n_bombs: 4,
        horizon: 48,
        ..EnvConfig::gather()
    }
}

fn scripted_policy(n: usize, sharpness: f64) -> HierPolicy {
    let e = env();
    let spec = HierSpec::for_env(&e, n, true, 15.0);
    let src = PretrainedSource::Scripted {
        skills: ScriptedSkillSet::gather(n, sharpness).unwrap(),
        probes: probe_observations(&e, 48, 7).unwrap(),
        tol: 0.05,
    };
    load_pretrained(spec, &src, 3).unwrap()
}

#[test]
fn cosine_hand_cases() {
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    assert_eq!(cosine(&[0.3, -0.7], &[0.3, -0.7]), 1.0);
    assert!((cosine(&[1.0, 1.0], &[-2.0, -2.0]) + 1.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn cosine_is_bounded(a in prop::collection::vec(-1e3f64..1e3, 5), b in prop::collection::vec(-1e3f64..1e3, 5)) {
        let c = cosine(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn trace_is_nonnegative_and_shift_invariant(
        xs in prop::collection::vec(prop::collection::vec(-10f64..10.0, 3), 2..20),
        shift in -5f64..5.0,
    ) {
        let t = trace_of_covariance(&xs);
        prop_assert!(t >= 0.0);
        let moved: Vec<Vec<f64>> = xs.iter().map(|v| v.iter().map(|x| x + shift).collect()).collect();
        prop_assert!((trace_of_covariance(&moved) - t).abs() <= 1e-9 * (1.0 + t));
    }
}

#[test]
fn trace_hand_case() {
    // Coordinate variances 2 and 8 (unbiased).
    let s = vec![vec![1.0, 0.0], vec![3.0, 4.0]];
    assert!((trace_of_covariance(&s) - 10.0).abs() < 1e-12);
}

#[test]
fn pct_change_hand_cases() {
    assert_eq!(pct_change(10.0, 8.0), -0.2);
    assert_eq!(pct_change(-10.0, -12.0), -0.2);
    assert_eq!(pct_change(0.0, 0.0), 0.0);
    assert_eq!(pct_change(4.0, 5.0), 0.25);
}

#[test]
fn single_skill_report_has_unit_cosine_and_no_eps() {
    let e = env();
    let p = HierPolicy::new(HierSpec::for_env(&e, 1, true, 15.0), 11).unwrap();
    let r = diversity_report(&p, &e, 12, "n1", &DiversityProbe::default()).unwrap();
    assert_eq!(r.cos_sim.mean, 1.0);
    assert_eq!(r.cos_sim.std, 0.0);
    assert_eq!(r.rel_err.mean, 0.0);
    assert!(r.eps_hat.is_none());
    assert_eq!(r.trajectories, 12);
}

#[test]
fn scripted_skills_are_diverse_and_well_approximated() {
    let e = env();
    let p = scripted_policy(6, ScriptedSkillSet::DEFAULT_SHARPNESS);
    let probe = DiversityProbe {
        p_min: 8,
        p_max: 8,
        ..DiversityProbe::default()
    };
    let r = diversity_report(&p, &e, 40, "scripted", &probe).unwrap();
    let eps = r.eps_hat.unwrap().mean;
    // Same order of magnitude as 0.1.
    assert!((0.033..=0.3).contains(&eps), "eps_hat {eps}");
    assert!(r.own_prob.mean > eps);
    assert!(r.cos_sim.mean >= 0.9, "cos {}", r.cos_sim.mean);
    assert!(!r.partial && !r.density_ratio);
}

#[test]
fn long_probes_make_the_report_partial() {
    let e = EnvConfig { horizon: 100, ..env() };
    let p = scripted_policy(2, 3.0);
    let probe = DiversityProbe {
        horizon: 100,
        ..DiversityProbe::default()
    };
    let r = diversity_report(&p, &e, 3, "long", &probe).unwrap();
    assert!(r.partial);
}

#[test]
fn diversity_csv_has_documented_columns() {
    let e = env();
    let p = scripted_policy(3, 4.0);
    let r = diversity_report(&p, &e, 4, "t", &DiversityProbe::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_diversity_csv(&path, &[r]).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("tag,cos_sim_mean,cos_sim_std,eps_mean,eps_std,own_mean,own_std"));
}

fn eval_policies() -> Vec<EvalPolicy> {
    let e = env();
    let spec = HierSpec::for_env(&e, 6, true, 15.0);
    vec![
        EvalPolicy {
            name: "random_p".into(),
            policy: AnyPolicy::Hier(HierPolicy::new(spec.clone(), 1).unwrap()),
            p_min: 5,
            p_max: 15,
            repeat: 1,
        },
        EvalPolicy {
            name: "p10".into(),
            policy: AnyPolicy::Hier(HierPolicy::new(spec.clone(), 2).unwrap()),
            p_min: 10,
            p_max: 10,
            repeat: 1,
        },
        EvalPolicy {
            name: "flat".into(),
            policy: AnyPolicy::Flat(crate::hierpolicy::FlatPolicy::parity_with(&spec, 3).unwrap()),
            p_min: 1,
            p_max: 1,
            repeat: 1,
        },
    ]
}

#[test]
fn zero_magnitude_suite_changes_nothing() {
    let ps = eval_policies();
    let t = zero_shot_eval(&ps, "gather", &env(), &standard_suite(0.0), 5, 9).unwrap();
    assert_eq!(t.cells.len(), 3 * 5);
    assert!(t.cells.iter().all(|c| c.pct_change == 0.0));
    assert_eq!(t.win_count("random_p", "p10"), (4, 4));
}

#[test]
fn transfer_is_reproducible_and_read_only() {
    let ps = eval_policies();
    let before: Vec<u64> = ps.iter().map(|p| p.policy.params().checksum()).collect();
    let a = zero_shot_eval(&ps, "gather", &env(), &standard_suite(0.3), 4, 5).unwrap();
    let b = zero_shot_eval(&ps, "gather", &env(), &standard_suite(0.3), 4, 5).unwrap();
    assert_eq!(a, b);
    let after: Vec<u64> = ps.iter().map(|p| p.policy.params().checksum()).collect();
    assert_eq!(before, after);
    let dir = tempfile::tempdir().unwrap();
    a.write_csv(&dir.path().join("t.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(text.starts_with("algo,env,perturbation,return_mean,return_std,pct_change"));
    assert_eq!(text.lines().count(), 1 + 15);
}

#[test]
fn transfer_rejects_mismatched_env() {
    let ps = eval_policies();
    let blocks = EnvConfig::blocks();
    assert!(matches!(
        zero_shot_eval(&ps, "blocks", &blocks, &standard_suite(0.2), 2, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn win_count_on_a_hand_table() {
    let cell = |algo: &str, env: &str, pert: &str, pct: f64| TransferCell {
        algo: algo.into(),
        env: env.into(),
        perturbation: pert.into(),
        return_mean: 0.0,
        return_std: 0.0,
        pct_change: pct,
    };
    let t = TransferTable {
        cells: vec![
            cell("a", "g", "initial", 0.0),
            cell("a", "g", "mass", -0.1),
            cell("a", "g", "friction", -0.5),
            cell("a", "b", "mass", -0.2),
            cell("b", "g", "initial", 0.0),
            cell("b", "g", "mass", -0.3),
            cell("b", "g", "friction", -0.4),
            cell("b", "b", "mass", -0.2),
        ],
    };
    assert_eq!(t.win_count("a", "b"), (2, 3));
    assert_eq!(t.win_count("b", "a"), (2, 3));
}

#[test]
fn variance_modes_share_trajectories() {
    let e = env();
    let p = scripted_policy(3, 3.0);
    let settings = VarianceSettings {
        horizon: 48,
        fit_trajectories: 20,
        ..VarianceSettings::default()
    };
    let modes = [BaselineMode::None, BaselineMode::StateOnly, BaselineMode::Latent];
    let rows = estimator_variance(&p, &e, &modes, 30, &settings).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.trace > 0.0 && r.samples == 30));
    assert_eq!(rows, estimator_variance(&p, &e, &modes, 30, &settings).unwrap());
    assert!(estimator_variance(&p, &e, &modes, 1, &settings).is_err());
}

#[test]
fn sweep_echoes_axis_and_records_failures() {
    let base = TrainConfig {
        env: env(),
        iterations: 1,
        min_steps: 100,
        epochs_per_iter: 1,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(&base, &SweepAxis::SkillCount(vec![2, 0, 4]), &[0], Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.axis == "n"));
    assert_eq!(
        rows.iter().map(|r| r.value.as_str()).collect::<Vec<_>>(),
        ["2", "0", "4"]
    );
    assert!(rows[0].ok && !rows[1].ok && rows[2].ok);
    assert!(dir.path().join("n=2/seed0/summary.json").exists());
    write_sweep_csv(&dir.path().join("s.csv"), &rows).unwrap();
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.starts_with("n,")));

    let tc = sweep(&base, &SweepAxis::TimeCommitment(vec![(1, 1), (5, 15)]), &[0, 1], None).unwrap();
    assert_eq!(tc.len(), 4);
    assert_eq!(tc[3].value, "5-15");
    assert!(sweep(&base, &SweepAxis::SkillCount(vec![]), &[0], None).is_err());
}

#[test]
fn random_baselines_have_zero_mean_terms() {
    let e = env();
    let p = scripted_policy(3, 2.0);
    let cfg = crate::grads::BaselineConfig::default();
    let b = crate::grads::BaselineSet::new(BaselineMode::Latent, e.obs_dim(), 3, 15.0, &cfg, 77).unwrap();
    let stats = baseline_zero_mean(&p, &e, &b, 400, &DiversityProbe::default()).unwrap();
    assert_eq!(stats.len(), 2);
    for s in &stats {
        assert!(s.std_err > 0.0, "{s:?}");
        assert!(s.z_score() < 3.0, "{s:?}");
    }
    let none = crate::grads::BaselineSet::new(BaselineMode::None, e.obs_dim(), 3, 15.0, &cfg, 77).unwrap();
    let zero = baseline_zero_mean(&p, &e, &none, 10, &DiversityProbe::default()).unwrap();
    assert!(zero.iter().all(|s| s.mean == 0.0 && s.z_score() == 0.0));
}
