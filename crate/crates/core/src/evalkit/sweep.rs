use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csv_err;
use crate::trainer::{train_with, RunOptions, Start, TrainConfig};
use crate::{Error, Result};

/// The hyperparameter varied by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `(p_min, p_max)` bounds.
    TimeCommitment(Vec<(usize, usize)>),
    SkillCount(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TimeCommitment(_) => "time_commitment",
            Self::SkillCount(_) => "n",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::TimeCommitment(v) => v.len(),
            Self::SkillCount(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label and config of the `i`-th value.
    fn apply(&self, i: usize, base: &TrainConfig) -> (String, TrainConfig) {
        let mut c = base.clone();
        let label = match self {
            Self::TimeCommitment(v) => {
                (c.p_min, c.p_max) = v[i];
                format!("{}-{}", v[i].0, v[i].1)
            }
            Self::SkillCount(v) => {
                c.n = v[i];
                v[i].to_string()
            }
        };
        (label, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub ok: bool,
    pub final_return_mean: f64,
    pub final_return_std: f64,
    pub final_return_window5: f64,
    pub error: String,
}

/// Trains one run per (axis value, seed). Failed runs are recorded with
/// `ok = false` and the sweep continues. With `out_dir`, each run writes to
/// `out_dir/<axis>=<value>/seed<seed>`.
pub fn sweep(base: &TrainConfig, axis: &SweepAxis, seeds: &[u64], out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    if axis.is_empty() || seeds.is_empty() {
        return Err(Error::Argument("sweep needs at least one value and one seed".into()));
    }
    let mut rows = Vec::new();
    for i in 0..axis.len() {
        let (value, cfg) = axis.apply(i, base);
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let opts = RunOptions {
                out_dir: out_dir.map(|d| d.join(format!("{}={value}", axis.name())).join(format!("seed{seed}"))),
                ..RunOptions::default()
            };
            let mut row = SweepRow {
                axis: axis.name().to_string(),
                value: value.clone(),
                seed,
                ok: false,
                final_return_mean: f64::NAN,
                final_return_std: f64::NAN,
                final_return_window5: f64::NAN,
                error: String::new(),
            };
            match train_with(&cfg, &opts, &Start::Scratch) {
                Ok(r) => {
                    let s = r.report.summary();
                    row.ok = true;
                    row.final_return_mean = s.final_return_mean;
                    row.final_return_std = s.final_return_std;
                    row.final_return_window5 = s.final_return_window5;
                }
                Err(e) => row.error = e.to_string(),
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
