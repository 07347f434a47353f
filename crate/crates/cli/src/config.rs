//! The run configuration file: `[train]`, `[env]` and `[eval]` tables.

use std::path::Path;

use hippo_core::envs::{EnvConfig, PerturbationSpec};
use hippo_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Rollouts per transfer cell.
    pub n_rollouts: usize,
    /// Perturbations as `name` or `name:magnitude`.
    pub perturbations: Vec<String>,
    pub seeds: Vec<u64>,
    pub probe_trajectories: usize,
    pub probe_horizon: usize,
    /// Fixed time-commitment of gradient-check probes.
    pub probe_p: usize,
    pub baseline_mc_trajectories: usize,
    pub fd_step: f64,
    pub fd_tol: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 25,
            perturbations: ["mass", "dampening", "inertia", "friction"].map(String::from).to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            probe_trajectories: 200,
            probe_horizon: 32,
            probe_p: 8,
            baseline_mc_trajectories: 2000,
            fd_step: 1e-5,
            fd_tol: 1e-4,
        }
    }
}

impl EvalConfig {
    pub fn suite(&self) -> Result<Vec<PerturbationSpec>, CliError> {
        self.perturbations
            .iter()
            .map(|s| PerturbationSpec::parse(s).map_err(|e| CliError::config(format!("eval.perturbations: {e}"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Training settings; its `env` always mirrors the `[env]` table.
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            env: train.env.clone(),
            train,
            eval: EvalConfig::default(),
        }
    }
}

const SECTIONS: [&str; 3] = ["train", "env", "eval"];

impl RunConfig {
    /// Parses a config document and applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(format!("config: {e}")))?;
        if doc.get("train").and_then(|t| t.get("env")).is_some() {
            return Err(CliError::config(
                "config: environment settings belong in the [env] table, not [train.env]",
            ));
        }
        // Deserializing the raw text keeps line and column in the diagnostic.
        toml::from_str::<RunConfig>(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(format!("config: {e}")))?;
        cfg.train.env = cfg.env.clone();
        cfg.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        cfg.eval.suite()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    /// The document form written next to every run's outputs.
    pub fn to_toml(&self) -> String {
        let mut v = Value::try_from(self).expect("config serializes to TOML");
        if let Some(t) = v.get_mut("train").and_then(Value::as_table_mut) {
            t.remove("env");
        }
        toml::to_string(&v).expect("config serializes to TOML")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }
}

fn defaults_table() -> Table {
    match Value::try_from(RunConfig::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!(),
    }
}

/// Resolves a bare key to the one section that defines it.
fn resolve_key(key: &str) -> Result<Vec<String>, CliError> {
    if key.contains('.') {
        let path: Vec<String> = key.split('.').map(String::from).collect();
        if path.len() > 1 && path[0] == "train" && path[1] == "env" {
            return Err(CliError::config(format!(
                "override `{key}`: use env.{}",
                path[2..].join(".")
            )));
        }
        return Ok(path);
    }
    let defaults = defaults_table();
    let hits: Vec<&str> = SECTIONS
        .into_iter()
        .filter(|s| {
            defaults
                .get(*s)
                .and_then(Value::as_table)
                .is_some_and(|t| t.contains_key(key) && !(*s == "train" && key == "env"))
        })
        .collect();
    match hits.as_slice() {
        [one] => Ok(vec![one.to_string(), key.to_string()]),
        [] => Err(CliError::config(format!("override: unknown key `{key}`"))),
        many => Err(CliError::config(format!(
            "override: key `{key}` is ambiguous, write one of {}",
            many.iter().map(|s| format!("{s}.{key}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn apply_override(doc: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{spec}` is not key=value")))?;
    let path = resolve_key(key.trim())?;
    let mut value = parse_value(raw.trim());
    // Integers given for float fields (`gamma=1`) are widened.
    let mut probe = Some(&Value::Table(defaults_table()));
    for p in &path {
        probe = probe.and_then(|v| v.get(p));
    }
    if let (Some(Value::Float(_)), Value::Integer(i)) = (probe.cloned().as_ref(), &value) {
        value = Value::Float(*i as f64);
    }
    let mut cur = doc;
    for p in &path[..path.len() - 1] {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{spec}`: `{p}` is not a table")))?;
    }
    cur.insert(path[path.len() - 1].clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hippo_core::trainer::Algorithm;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let text = "[train]\nlr = 0.001\nalgorithm = \"flat_ppo_repeat\"\n[env]\nsize = 9\n[env.dynamics]\ndrift_prob = 0.1\n[eval]\nseeds = [3]\n";
        let cfg = RunConfig::parse(text, &[]).unwrap();
        assert_eq!(cfg.train.algorithm, Algorithm::FlatPpoRepeat);
        assert_eq!(cfg.train.env.size, 9);
        let again = RunConfig::parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(again, cfg);
        assert!(!cfg.to_toml().contains("[train.env"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let e = RunConfig::parse("[train]\nlr = 0.1\nlearning_rate = 2\n", &[]).unwrap_err();
        assert_eq!(e.code, crate::EXIT_CONFIG);
        assert!(
            e.message.contains("learning_rate") && e.message.contains("line"),
            "{}",
            e.message
        );
        assert!(RunConfig::parse("[trian]\n", &[]).is_err());
        assert!(RunConfig::parse("[train.env]\nsize = 3\n", &[]).is_err());
    }

    #[test]
    fn overrides_resolve_bare_and_dotted_keys() {
        let o = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let c = RunConfig::parse(
            "",
            &o(&[
                "lr=1e-3",
                "env.size=10",
                "n_rollouts=5",
                "gamma=1",
                "algorithm=hier_vpg",
            ]),
        )
        .unwrap();
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!((c.env.size, c.train.env.size), (10, 10));
        assert_eq!(c.eval.n_rollouts, 5);
        assert_eq!(c.train.gamma, 1.0);
        assert_eq!(c.train.algorithm, Algorithm::HierVpg);
        let amb = RunConfig::parse("", &o(&["horizon=10"])).unwrap_err();
        assert!(amb.message.contains("ambiguous"));
        assert!(RunConfig::parse("", &o(&["nope=1"])).is_err());
        assert!(RunConfig::parse("", &o(&["lr"])).is_err());
        assert!(RunConfig::parse("", &o(&["eps_clip=1.5"])).is_err());
    }

    #[test]
    fn perturbation_list_is_validated() {
        let c = RunConfig::parse("[eval]\nperturbations = [\"mass:0.3\", \"friction\"]\n", &[]).unwrap();
        assert_eq!(c.eval.suite().unwrap().len(), 2);
        assert!(RunConfig::parse("[eval]\nperturbations = [\"gravity\"]\n", &[]).is_err());
    }
}
