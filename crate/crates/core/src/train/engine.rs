use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schedule::{Schedule, StageKind, TrainStage};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::param::ParamStore;
use crate::pipeline::write_arch;
use crate::tensor::Tensor;

/// A model the staged trainer can drive.
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Architecture written next to every checkpoint.
    fn arch_json(&self) -> serde_json::Value;
    /// Structural changes a stage needs before its namespaces are frozen.
    fn prepare_stage(&mut self, kind: StageKind) -> Result<()>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counted across the whole schedule.
    pub epoch: usize,
    pub train_loss: f32,
    pub val_metric: Option<f32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: TrainStage,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    /// Written when the stage ran at least one epoch.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub val_metric_name: String,
    pub initial_val_metric: Option<f32>,
    pub initial_checkpoint: PathBuf,
    pub stages: Vec<StageReport>,
    pub final_checkpoint: PathBuf,
}

impl TrainingReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Validation metric after the last epoch of the named stage.
    pub fn val_after(&self, kind: StageKind) -> Option<f32> {
        self.stages.iter().rev().find(|s| s.stage.kind == kind)?.epochs.last()?.val_metric
    }

    pub fn final_val(&self) -> Option<f32> {
        self.stages.iter().rev().find_map(|s| s.epochs.last()).and_then(|e| e.val_metric).or(self.initial_val_metric)
    }

    pub fn checkpoints(&self) -> Vec<&Path> {
        std::iter::once(self.initial_checkpoint.as_path())
            .chain(self.stages.iter().filter_map(|s| s.checkpoint.as_deref()))
            .collect()
    }
}

/// Loss and auxiliary curves of one epoch.
#[derive(Clone, Debug, Default)]
pub struct EpochStats {
    pub loss: f32,
    pub steps: usize,
    pub extra: BTreeMap<String, f32>,
}

/// Running means over the batches of an epoch.
#[derive(Default)]
pub struct Accumulator {
    sums: BTreeMap<String, (f64, usize)>,
    steps: usize,
}

impl Accumulator {
    pub fn add(&mut self, key: &str, value: f32) {
        let e = self.sums.entry(key.to_string()).or_default();
        e.0 += f64::from(value);
        e.1 += 1;
    }

    pub fn step(&mut self) {
        self.steps += 1;
    }

    pub fn finish(mut self) -> EpochStats {
        let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { (s / n as f64) as f32 };
        let loss = self.sums.remove("loss").map(mean).unwrap_or(0.0);
        EpochStats { loss, steps: self.steps, extra: self.sums.into_iter().map(|(k, v)| (k, mean(v))).collect() }
    }
}

/// Backpropagates `loss` and applies one optimizer step. Returns the loss
/// value. A non-finite loss aborts before any parameter changes.
pub fn backward_step(loss: &Tensor, adam: &mut Adam, store: &mut ParamStore) -> Result<f32> {
    let v = loss.item()?;
    if !v.is_finite() {
        return Err(Error::NanLoss { last_good: PathBuf::new() });
    }
    if loss.requires_grad() {
        loss.backward()?;
        adam.step(store)?;
    }
    Ok(v)
}

fn save_checkpoint<M: Trainable>(model: &M, dir: &Path, file: &str) -> Result<PathBuf> {
    let path = dir.join(file);
    model.store().save_checkpoint(&path)?;
    write_arch(&path, &model.arch_json())?;
    Ok(path)
}

/// Applies a stage's frozen namespaces after unfreezing everything.
pub fn apply_freeze(store: &mut ParamStore, stage: &TrainStage) -> Result<()> {
    store.set_all_frozen(false);
    for prefix in &stage.frozen_prefixes {
        store.freeze_prefix(prefix, true)?;
    }
    Ok(())
}

/// Runs every stage in order: structural preparation, freezing, fresh Adam
/// moments for parameters that just became trainable, the epochs, and a
/// checkpoint at the end of each non-empty stage.
pub fn run_stages<M, E, V>(
    model: &mut M,
    schedule: &Schedule,
    val_metric_name: &str,
    mut run_epoch: E,
    mut validate: V,
) -> Result<TrainingReport>
where
    M: Trainable,
    E: FnMut(&mut M, &mut Adam, &TrainStage, usize) -> Result<EpochStats>,
    V: FnMut(&M, &TrainStage) -> Result<Option<f32>>,
{
    schedule.validate()?;
    let dir = &schedule.checkpoint_dir;
    std::fs::create_dir_all(dir)?;
    let initial = save_checkpoint(model, dir, "initial.lfck")?;
    let initial_val_metric = validate(model, &schedule.stages[0])?;
    let mut last_good = initial.clone();
    let mut adam = Adam::new(AdamConfig::with_lr(schedule.stages[0].lr))?;
    let mut trainable: HashSet<String> = HashSet::new();
    let mut epoch = 0usize;
    let mut stages = Vec::with_capacity(schedule.stages.len());

    for (si, stage) in schedule.stages.iter().enumerate() {
        model.prepare_stage(stage.kind)?;
        apply_freeze(model.store_mut(), stage)?;
        let now: HashSet<String> = model
            .store()
            .params()
            .filter(|p| !p.is_frozen())
            .map(|p| p.name().to_string())
            .collect();
        for name in now.difference(&trainable) {
            adam.reset(name);
        }
        trainable = now;
        adam.set_lr(stage.lr)?;

        let range = if stage.epochs == 0 {
            "none".to_string()
        } else {
            format!("{}-{}", epoch + 1, epoch + stage.epochs)
        };
        log::info!("STAGE {} BEGIN {range}", stage.kind);
        let mut records = Vec::with_capacity(stage.epochs);
        let mut steps = 0;
        for _ in 0..stage.epochs {
            epoch += 1;
            let stats = match run_epoch(model, &mut adam, stage, epoch) {
                Err(Error::NanLoss { .. }) => return Err(Error::NanLoss { last_good }),
                other => other?,
            };
            if !stats.loss.is_finite() {
                return Err(Error::NanLoss { last_good });
            }
            steps += stats.steps;
            let val = validate(model, stage)?;
            log::info!(
                "epoch {epoch} {} loss {:.5}{}",
                stage.kind,
                stats.loss,
                val.map(|v| format!(" {val_metric_name} {v:.4}")).unwrap_or_default()
            );
            records.push(EpochRecord { epoch, train_loss: stats.loss, val_metric: val, extra: stats.extra });
        }
        let checkpoint = if stage.epochs > 0 {
            let p = save_checkpoint(model, dir, &format!("stage{}_{}.lfck", si + 1, stage.kind))?;
            last_good = p.clone();
            Some(p)
        } else {
            None
        };
        log::info!("STAGE {} END {range}", stage.kind);
        stages.push(StageReport { stage: stage.clone(), steps, epochs: records, checkpoint });
    }
    model.store_mut().set_all_frozen(false);
    let report = TrainingReport {
        val_metric_name: val_metric_name.to_string(),
        initial_val_metric,
        initial_checkpoint: initial,
        stages,
        final_checkpoint: last_good,
    };
    report.save(&dir.join("report.json"))?;
    Ok(report)
}
