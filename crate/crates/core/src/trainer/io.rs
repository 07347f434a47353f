use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::{IterationRow, TrainConfig, TrainReport};
use crate::diffcore::{Checkpoint, Optimizer, ParamVector};
use crate::grads::BaselineSet;
use crate::{Error, Result};

pub const TRAIN_STATE_FILE: &str = "train_state.ckpt";
pub(super) const POLICY_FILE: &str = "policy.ckpt";

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

pub fn write_metrics_csv(path: &Path, rows: &[IterationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<IterationRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|x| x.map_err(csv_err)).collect()
}

pub(super) fn write_outputs(dir: &Path, report: &TrainReport, policy: &Checkpoint) -> Result<()> {
    write_metrics_csv(&dir.join("metrics.csv"), &report.rows)?;
    let mut w = csv::Writer::from_path(dir.join("epochs.csv")).map_err(csv_err)?;
    for e in &report.epochs {
        w.serialize(e).map_err(csv_err)?;
    }
    w.flush()?;
    let f = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(f, &report.summary()).map_err(|e| Error::Format(e.to_string()))?;
    policy.save(dir.join(POLICY_FILE))
}

pub(super) fn save_state(
    dir: &Path,
    config: &TrainConfig,
    params: &ParamVector,
    opt: &Optimizer,
    baselines: &BaselineSet,
    report: &TrainReport,
) -> Result<()> {
    let header = serde_json::json!({
        "config": config,
        "opt_steps": opt.steps,
        "rows": report.rows,
        "epochs": report.epochs,
        "fit_h": baselines.fit_h,
        "fit_l": baselines.fit_l,
    });
    let mut ck = Checkpoint::new(config.seed, header);
    ck.push_params("policy/", params);
    ck.push_raw("opt/m", &opt.m);
    ck.push_raw("opt/v", &opt.v);
    ck.push_params("b_h/", &baselines.b_h.params);
    ck.push_params("b_l/", &baselines.b_l.params);
    // Write-then-rename so an interrupted save never clobbers the last state.
    let tmp = dir.join(format!("{TRAIN_STATE_FILE}.tmp"));
    ck.save(&tmp)?;
    std::fs::rename(tmp, dir.join(TRAIN_STATE_FILE))?;
    Ok(())
}

pub(super) fn restore(
    dir: &Path,
    config: &TrainConfig,
    params: &mut ParamVector,
    opt: &mut Optimizer,
    baselines: &mut BaselineSet,
    report: &mut TrainReport,
) -> Result<()> {
    let path = dir.join(TRAIN_STATE_FILE);
    if !path.exists() {
        return Ok(());
    }
    let ck = Checkpoint::load(&path)?;
    let bad = |e: serde_json::Error| Error::Format(format!("bad training state header: {e}"));
    let saved: TrainConfig = serde_json::from_value(ck.header["config"].clone()).map_err(bad)?;
    let comparable = |c: &TrainConfig| TrainConfig {
        iterations: 0,
        workers: 1,
        ..c.clone()
    };
    if comparable(&saved) != comparable(config) {
        return Err(Error::Config(
            "resume config differs from the saved run (only iterations and workers may change)".into(),
        ));
    }
    *params = ck.params("policy/", params.layout())?;
    let raw = |name: &str| -> Result<Vec<f64>> {
        ck.entry(name)
            .map(|e| e.values.clone())
            .ok_or_else(|| Error::Format(format!("missing entry `{name}`")))
    };
    opt.m = raw("opt/m")?;
    opt.v = raw("opt/v")?;
    opt.steps = ck.header["opt_steps"].as_u64().unwrap_or(0);
    baselines.b_h.params = ck.params("b_h/", baselines.b_h.params.layout())?;
    baselines.b_l.params = ck.params("b_l/", baselines.b_l.params.layout())?;
    baselines.fit_h = serde_json::from_value(ck.header["fit_h"].clone()).map_err(bad)?;
    baselines.fit_l = serde_json::from_value(ck.header["fit_l"].clone()).map_err(bad)?;
    report.rows = serde_json::from_value(ck.header["rows"].clone()).map_err(bad)?;
    report.epochs = serde_json::from_value(ck.header["epochs"].clone()).map_err(bad)?;
    Ok(())
}
