//! Stage-1 data-driven pre-training, Stage-2 physics-informed fine-tuning
//! with alpha annealing, and the naive joint-training diagnostic.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetManifest};
use crate::evaluator;
use crate::fea::MaterialModel;
use crate::geometry::fnv1a_bytes;
use crate::gnn::{load_checkpoint, GraphBatch, GraphData, Model, ModelConfig};
use crate::nn::{Activation, Adam, PlateauScheduler};
use crate::physics::{
    alpha_schedule, physics_loss, physics_loss_with_latent, sample_collocation, LossWeights,
};
use crate::tape::Tape;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Pretrain,
    Finetune,
    NaiveJoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub weights: LossWeights,
    /// Collocation points per sample per epoch (physics modes only).
    pub collocation: usize,
    /// Plateau-scheduler patience in epochs.
    pub patience: usize,
    /// Adam second-moment decay.
    pub beta2: f64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, seed: u64) -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 1e-5,
            seed,
            mode,
            weights: LossWeights::default(),
            collocation: 128,
            patience: 10,
            beta2: 0.999,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigMismatch(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::ConfigMismatch("lr/weight_decay out of range".into()));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_rel_l2: f64,
    pub alpha: f64,
    pub lr: f64,
    pub physics_share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<EpochRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epoch,train_loss,val_loss,val_rel_l2,alpha,lr,physics_share\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_rel_l2, r.alpha, r.lr, r.physics_share
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_val_rel_l2: f64,
}

fn subseed(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a_bytes(&bytes)
}

/// Stage-1 pre-training: data loss only, best checkpoint by validation
/// relative-L2.
pub fn pretrain(
    model_cfg: ModelConfig,
    ds: &Dataset,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.mode = TrainMode::Pretrain;
    let model = Model::new(model_cfg, cfg.seed)?;
    run(model, ds, manifest, &cfg)
}

/// Stage-2 curriculum fine-tuning from a saved checkpoint.
pub fn finetune(
    ckpt: &Path,
    ds: &Dataset,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (model, header) = load_checkpoint(ckpt)?;
    if header.norm_stats_hash != manifest.stats.hash() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint normalization stats hash {:#018x} does not match dataset {:#018x}",
            header.norm_stats_hash,
            manifest.stats.hash()
        )));
    }
    finetune_model(model, ds, manifest, cfg)
}

/// Fine-tune an already-loaded model (the hash check lives in [`finetune`]).
pub fn finetune_model(
    model: Model,
    ds: &Dataset,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if model.config.task != ds.spec.task {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint task {:?} does not match dataset task {:?}",
            model.config.task, ds.spec.task
        )));
    }
    if model.config.activation != Activation::Silu {
        return Err(Error::ConfigMismatch(format!(
            "fine-tuning requires SiLU activation for C² jets, checkpoint has {:?}",
            model.config.activation
        )));
    }
    let mut cfg = cfg.clone();
    cfg.mode = TrainMode::Finetune;
    run(model, ds, manifest, &cfg)
}

/// Joint training from scratch with fixed alpha; diagnostic only. Must run
/// to completion even if it diverges.
pub fn naive_joint(
    model_cfg: ModelConfig,
    ds: &Dataset,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.mode = TrainMode::NaiveJoint;
    let model = Model::new(model_cfg, cfg.seed)?;
    run(model, ds, manifest, &cfg)
}

/// Shared training loop. Per-sample micro-batches with gradient accumulation
/// give one optimizer step per batch while keeping tape memory bounded; the
/// encoder pass is shared between the data and physics terms.
pub fn run(
    mut model: Model,
    ds: &Dataset,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config.in_width != model.config.task.feature_width() {
        return Err(Error::ConfigMismatch("model input width".into()));
    }
    let stats = &manifest.stats;
    let topo = &ds.topo;
    let graphs: Vec<GraphData> = ds
        .samples
        .iter()
        .map(|s| GraphData::from_sample(ds.spec.task, s, stats))
        .collect();
    let batches: Vec<GraphBatch> = graphs
        .iter()
        .map(|g| GraphBatch::single(topo, g))
        .collect::<Result<_>>()?;
    let mats: Vec<MaterialModel> = ds
        .samples
        .iter()
        .map(|s| MaterialModel::new(s.params.youngs_modulus, s.params.poissons_ratio))
        .collect::<Result<_>>()?;
    let train_idx = &manifest.splits.train;
    let val_idx = &manifest.splits.val;

    let mut adam = Adam::new(&model.store, cfg.lr, cfg.weight_decay);
    adam.beta2 = cfg.beta2;
    let mut sched = PlateauScheduler::new();
    sched.patience = cfg.patience.max(1);
    let mut lr = cfg.lr;
    let mut history = TrainHistory::default();
    let mut best: Option<(Vec<Array2<f64>>, usize, f64)> = None;
    let tolerant = cfg.mode == TrainMode::NaiveJoint;

    for epoch in 0..cfg.epochs {
        let alpha = match cfg.mode {
            TrainMode::Pretrain => 0.0,
            TrainMode::Finetune => alpha_schedule(epoch, cfg.epochs, &cfg.weights),
            TrainMode::NaiveJoint => cfg.weights.alpha_target,
        };
        let mut perm: Vec<u32> = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(&[cfg.seed, epoch as u64, 0xB4]));
        perm.shuffle(&mut rng);

        adam.lr = lr;
        let mut data_sum = 0.0;
        let mut phys_sum = 0.0;
        for (bi, chunk) in perm.chunks(cfg.batch_size).enumerate() {
            let inv = 1.0 / chunk.len() as f64;
            let mut grads = model.store.zero_grads();
            for &si in chunk {
                let si = si as usize;
                let sample = &ds.samples[si];
                let mut tape = Tape::new();
                let latent = model.encode_process(&mut tape, &batches[si]);
                let x = tape.constant(batches[si].features.clone());
                let pos = tape.slice_cols(x, 0, 3);
                let pred = model.decode(&mut tape, latent, pos);
                let target = tape.constant(batches[si].targets.clone());
                let diff = tape.sub(pred, target);
                let sq = tape.mul(diff, diff);
                let data = tape.mean(sq);
                let loss = if alpha > 0.0 {
                    let colloc = sample_collocation(
                        &sample.coords,
                        &topo.tets,
                        cfg.collocation,
                        subseed(&[cfg.seed, epoch as u64, si as u64, 0xC0]),
                    );
                    let phys = physics_loss_with_latent(
                        &mut tape,
                        &model,
                        latent,
                        &sample.coords,
                        &topo.tets,
                        &colloc,
                        &mats[si],
                        stats,
                        sample.params.length,
                    )?;
                    phys_sum += tape.value(phys)[[0, 0]];
                    let scaled = tape.scale(phys, alpha);
                    tape.add(data, scaled)
                } else {
                    data
                };
                data_sum += tape.value(data)[[0, 0]];
                let lv = tape.value(loss)[[0, 0]];
                if !lv.is_finite() {
                    if tolerant {
                        continue; // diagnostic mode: record and move on
                    }
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                let scaled_loss = tape.scale(loss, inv);
                tape.backward(scaled_loss, &mut grads);
            }
            match adam.step(&mut model.store, &grads) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { .. }) if tolerant => {}
                Err(e) => return Err(e),
            }
        }
        let n_train = train_idx.len().max(1) as f64;
        let data_mean = data_sum / n_train;
        let phys_mean = phys_sum / n_train;
        let train_loss = data_mean + alpha * phys_mean;
        let physics_share = if train_loss > 0.0 {
            alpha * phys_mean / train_loss
        } else {
            0.0
        };

        let (val_loss, val_rel_l2) = validate(&model, stats, &graphs, &batches, val_idx)?;
        history.rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            val_rel_l2,
            alpha,
            lr,
            physics_share,
        });
        // No validation split: schedule on train loss instead.
        let sched_metric = if val_idx.is_empty() { train_loss } else { val_loss };
        lr = sched.step(sched_metric, lr);
        let improved = best
            .as_ref()
            .map(|(_, _, b)| val_rel_l2 < *b)
            .unwrap_or(true);
        if improved {
            best = Some((model.store.values.clone(), epoch, val_rel_l2));
        }
    }

    let (values, best_epoch, best_val_rel_l2) =
        best.unwrap_or((model.store.values.clone(), 0, f64::INFINITY));
    model.store.values = values;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_rel_l2,
    })
}

/// Normalized data MSE and physical relative-L2 (%) over a split.
fn validate(
    model: &Model,
    stats: &crate::dataset::NormalizationStats,
    graphs: &[GraphData],
    batches: &[GraphBatch],
    idx: &[u32],
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(idx.len());
    let mut truths = Vec::with_capacity(idx.len());
    for &si in idx {
        let si = si as usize;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batches[si]);
        let pred = tape.value(out).clone();
        let target = &graphs[si].targets;
        loss_sum += pred
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / target.len() as f64;
        preds.push(evaluator::denormalize_targets(&pred, stats));
        truths.push(evaluator::denormalize_targets(target, stats));
    }
    let rel = evaluator::rel_l2(&preds, &truths)?;
    Ok((loss_sum / idx.len() as f64, rel))
}

/// Mean collocation-residual loss of a model over given samples with a
/// pinned seed — the paired comparison used by the fine-tuning gate.
pub fn mean_collocation_residual(
    model: &Model,
    ds: &Dataset,
    manifest: &DatasetManifest,
    idx: &[u32],
    q: usize,
    seed: u64,
) -> Result<f64> {
    let stats = &manifest.stats;
    let mut sum = 0.0;
    for &si in idx {
        let si = si as usize;
        let sample = &ds.samples[si];
        let gd = GraphData::from_sample(ds.spec.task, sample, stats);
        let batch = GraphBatch::single(&ds.topo, &gd)?;
        let colloc = sample_collocation(
            &sample.coords,
            &ds.topo.tets,
            q,
            subseed(&[seed, si as u64, 0xC0]),
        );
        let mat = MaterialModel::new(sample.params.youngs_modulus, sample.params.poissons_ratio)?;
        let mut tape = Tape::new();
        let phys = physics_loss(
            &mut tape,
            model,
            &batch,
            &sample.coords,
            &ds.topo.tets,
            &colloc,
            &mat,
            stats,
            sample.params.length,
        )?;
        sum += tape.value(phys)[[0, 0]];
    }
    Ok(sum / idx.len().max(1) as f64)
}
