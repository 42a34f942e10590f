//! Optimization: Adam, the warmup + step schedule, the seeded split, and the
//! per-task training loops with early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clinical::{fit_schema, ClinicalRecord, ClinicalSchema};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::io::{BestEpoch, Checkpoint, Dataset, RunConfig, Sample};
use crate::metrics::{accuracy_from_logits, auc_roc, c_index};
use crate::model::{Model, SampleInput, HEAD_PREFIX};
use crate::numkit::{Ctx, Matrix, ParameterStore, Real, Tape};
use crate::objectives::{classification_loss, cox_value_and_grad, total_loss, SurvivalLabel, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub step_size: usize,
    pub gamma: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub seed: u64,
    pub split: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Survival only: patients per Cox risk set. Unset means the whole
    /// training split, one optimizer step per epoch.
    pub cox_batch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            base_lr: 1e-4,
            weight_decay: 1e-5,
            warmup_epochs: 5,
            step_size: 2,
            gamma: 0.6,
            min_lr: 1e-8,
            patience: 10,
            seed: 42,
            split: 0.8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cox_batch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("train.gamma must lie in (0, 1)");
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return bad("train.min_lr must lie in [0, base_lr]");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("train.split must lie in (0, 1)");
        }
        if self.step_size == 0 {
            return bad("train.step_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("train Adam constants out of range");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("train.weight_decay must be nonnegative");
        }
        if self.cox_batch.is_some_and(|b| b < 2) {
            return bad("train.cox_batch must be at least 2");
        }
        Ok(())
    }
}

/// Adam with bias correction. Weight decay is added to the gradient (L2 form),
/// not decoupled. Gradients are cleared afterwards.
pub fn adam_step<T: Real>(store: &mut ParameterStore<T>, lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) {
    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (_, e) in store.iter_mut() {
        let n = e.value.len();
        for i in 0..n {
            let p = e.value.data()[i].as_f64();
            let g = e.grad.data()[i].as_f64() + weight_decay * p;
            let m = b1 * e.m.data()[i].as_f64() + (1.0 - b1) * g;
            let v = b2 * e.v.data()[i].as_f64() + (1.0 - b2) * g * g;
            e.m.data_mut()[i] = T::lit(m);
            e.v.data_mut()[i] = T::lit(v);
            if lr != 0.0 {
                let upd = (m / c1) / ((v / c2).sqrt() + eps);
                e.value.data_mut()[i] = T::lit(p - lr * upd);
            }
        }
    }
    store.zero_grads();
}

/// Linear warmup to `base_lr`, then step decay floored at `min_lr`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.warmup_epochs {
        return cfg.base_lr * (epoch + 1) as f64 / cfg.warmup_epochs as f64;
    }
    let k = ((epoch - cfg.warmup_epochs) / cfg.step_size) as i32;
    (cfg.base_lr * cfg.gamma.powi(k)).max(cfg.min_lr)
}

/// Seeded shuffle; the first `⌈fraction·n⌉` (at most `n − 1`) go to training.
pub fn split_dataset(ids: &[String], seed: u64, fraction: f64) -> Result<(Vec<String>, Vec<String>)> {
    if ids.len() < 2 {
        return Err(Error::InvalidArgument("split needs at least 2 samples".into()));
    }
    let mut ids = ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * ids.len() as f64).ceil() as usize).clamp(1, ids.len() - 1);
    let val = ids.split_off(n_train);
    Ok((ids, val))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::from(e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::from(e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A sample with its graph built and clinical record encoded.
pub struct Prepared<'a> {
    pub sample: &'a Sample,
    pub graph: Option<SpatialGraph>,
    pub clinical: Option<ClinicalRecord>,
}

impl Prepared<'_> {
    pub fn input(&self) -> SampleInput<'_> {
        SampleInput { bag: &self.sample.bag, graph: self.graph.as_ref(), clinical: self.clinical.as_ref() }
    }
}

pub fn prepare<'a>(model: &Model, schema: Option<&ClinicalSchema>, samples: &[&'a Sample]) -> Result<Vec<Prepared<'a>>> {
    samples
        .iter()
        .map(|&s| {
            let clinical = match schema.filter(|_| model.cde.is_some()) {
                Some(sc) => {
                    let raw = s
                        .clinical
                        .as_ref()
                        .ok_or_else(|| Error::Schema(format!("sample {} has no clinical record", s.id)))?;
                    Some(sc.encode(raw)?)
                }
                None => None,
            };
            Ok(Prepared { sample: s, graph: model.build_graph(&s.bag)?, clinical })
        })
        .collect()
}

/// Validation metric: AUC for classification, C-index for survival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub c_index: Option<f64>,
    /// One prediction per sample, in input order.
    pub predictions: Vec<f64>,
}

impl EvalReport {
    pub fn metric(&self) -> f64 {
        self.auc.or(self.c_index).unwrap_or(f64::NAN)
    }
}

pub fn evaluate<T: Real>(model: &Model, store: &ParameterStore<T>, data: &[Prepared<'_>]) -> Result<EvalReport> {
    let predictions = data.iter().map(|p| model.predict(store, &p.input())).collect::<Result<Vec<_>>>()?;
    let task = model.config.task;
    let mut r = EvalReport { task, n: data.len(), accuracy: None, auc: None, c_index: None, predictions };
    match task {
        Task::Classification => {
            let labels = data.iter().map(|p| class_of(p.sample)).collect::<Result<Vec<_>>>()?;
            r.accuracy = Some(accuracy_from_logits(&r.predictions, &labels)?);
            r.auc = Some(auc_roc(&r.predictions, &labels)?);
        }
        Task::Survival => {
            let labels = data.iter().map(|p| survival_of(p.sample)).collect::<Result<Vec<_>>>()?;
            r.c_index = Some(c_index(&r.predictions, &labels)?);
        }
    }
    Ok(r)
}

fn class_of(s: &Sample) -> Result<bool> {
    s.target.class().ok_or_else(|| Error::InvalidArgument(format!("sample {} has no class label", s.id)))
}

fn survival_of(s: &Sample) -> Result<SurvivalLabel> {
    s.target.survival().ok_or_else(|| Error::InvalidArgument(format!("sample {} has no survival label", s.id)))
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
    pub stopped_early: bool,
}

/// Training and validation samples under the configured seeded split.
pub fn split_samples<'a>(data: &'a Dataset, cfg: &TrainConfig) -> Result<(Vec<&'a Sample>, Vec<&'a Sample>)> {
    let ids: Vec<String> = data.samples.iter().map(|s| s.id.clone()).collect();
    let (tr, va) = split_dataset(&ids, cfg.seed, cfg.split)?;
    let pick = |set: Vec<String>| {
        let set: std::collections::BTreeSet<String> = set.into_iter().collect();
        data.samples.iter().filter(|s| set.contains(&s.id)).collect::<Vec<_>>()
    };
    Ok((pick(tr), pick(va)))
}

/// Trains the configured task and returns the best-epoch checkpoint.
pub fn train(data: &Dataset, run: &RunConfig) -> Result<TrainOutcome> {
    run.validate()?;
    if data.task != run.task {
        return Err(Error::Config(format!("dataset task {:?} does not match config task {:?}", data.task, run.task)));
    }
    let cfg = &run.train;
    let (train_s, val_s) = split_samples(data, cfg)?;
    if train_s.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let d_patch = train_s[0].bag.dim();
    let schema = if run.clinical.enabled {
        let raws = train_s
            .iter()
            .map(|s| s.clinical.clone().ok_or_else(|| Error::Schema(format!("sample {} has no clinical record", s.id))))
            .collect::<Result<Vec<_>>>()?;
        Some(fit_schema(&raws, &run.clinical.fields)?)
    } else {
        None
    };
    let model = Model::new(run.model_config(), d_patch, schema.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParameterStore::<f32>::new();
    model.init_params(&mut store, &mut rng)?;
    let train_p = prepare(&model, schema.as_ref(), &train_s)?;
    let val_p = prepare(&model, schema.as_ref(), &val_s)?;

    let mut history = Vec::new();
    // Classification ties on AUC are broken by accuracy.
    let mut best: Option<(BestEpoch, f64, ParameterStore<f32>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let lambda_l2 = run.loss.l2_ramp.at(epoch, cfg.epochs);
        let train_loss = match run.task {
            Task::Classification => classification_epoch(&model, &mut store, &train_p, run, lr, lambda_l2, &mut rng)?,
            Task::Survival => survival_epoch(&model, &mut store, &train_p, run, lr, lambda_l2, &mut rng)?,
        };
        let report = evaluate(&model, &store, &val_p)?;
        let (val_metric, tie) = (report.metric(), report.accuracy.unwrap_or(0.0));
        history.push(HistoryRow { epoch, lr, train_loss, val_metric });
        let better = best.as_ref().is_none_or(|(b, t, _)| val_metric > b.metric || (val_metric == b.metric && tie > *t));
        if better {
            best = Some((BestEpoch { epoch, metric: val_metric }, tie, store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    let (best, _, store) = best.expect("at least one epoch ran");
    let checkpoint = Checkpoint { config: run.clone(), schema, d_patch, best: Some(best), store };
    Ok(TrainOutcome { checkpoint, history, stopped_early })
}

fn classification_epoch(
    model: &Model,
    store: &mut ParameterStore<f32>,
    data: &[Prepared<'_>],
    run: &RunConfig,
    lr: f64,
    lambda_l2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let cfg = &run.train;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut sum = 0.0;
    for i in order {
        let p = &data[i];
        let label = class_of(p.sample)?;
        let mut tape = Tape::<f32>::new();
        let bound = store.bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &p.input(), &mut Ctx::Train(rng))?;
        let (bag, inst) = out.bag_logit.zip(out.instance_logits).ok_or_else(|| Error::Shape("classification outputs missing".into()))?;
        let task = classification_loss(&mut tape, bag, inst, label)?;
        let loss = total_loss(&mut tape, task, out.clinical_loss, run.loss.recon_weight, lambda_l2, &out.penalized);
        sum += tape.scalar(loss).as_f64();
        let grads = tape.backward(loss);
        store.accumulate(&bound, &grads);
        adam_step(store, lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay);
    }
    Ok(sum / data.len() as f64)
}

/// Forwards every patient of a risk set on its own tape, applies one Cox loss
/// over the collected risks, and seeds each tape with its share of the gradient.
fn survival_epoch(
    model: &Model,
    store: &mut ParameterStore<f32>,
    data: &[Prepared<'_>],
    run: &RunConfig,
    lr: f64,
    lambda_l2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let cfg = &run.train;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.cox_batch.unwrap_or(data.len()).min(data.len());
    if batch < data.len() {
        order.shuffle(rng);
    }
    let labels_all = data.iter().map(|p| survival_of(p.sample)).collect::<Result<Vec<_>>>()?;
    if !labels_all.iter().any(|l| l.event) {
        return Err(Error::NoEvents("no events in the training split".into()));
    }
    let head = format!("{HEAD_PREFIX}.w");
    let mut total = 0.0;
    let mut steps = 0;
    for chunk in order.chunks(batch) {
        let labels: Vec<SurvivalLabel> = chunk.iter().map(|&i| labels_all[i]).collect();
        if !labels.iter().any(|l| l.event) {
            continue;
        }
        let n = chunk.len() as f64;
        let mut runs = Vec::with_capacity(chunk.len());
        let mut risks = Vec::with_capacity(chunk.len());
        let mut recon = 0.0;
        for &i in chunk {
            let mut tape = Tape::<f32>::new();
            let bound = store.bind(&mut tape);
            let out = model.forward(&mut tape, &bound, &data[i].input(), &mut Ctx::Train(rng))?;
            risks.push(tape.scalar(out.prediction).as_f64());
            if let Some(c) = out.clinical_loss {
                recon += tape.scalar(c).as_f64();
            }
            runs.push((tape, bound, out.prediction, out.clinical_loss));
        }
        let cox = cox_value_and_grad(&risks, &labels, run.loss.lambda_reg)?;
        let w = store.value(&head)?.clone();
        let l2 = lambda_l2 * w.sum_squares().as_f64();
        total += cox.loss + run.loss.recon_weight * recon / n + l2;
        steps += 1;
        for ((tape, bound, risk, clin), g) in runs.iter().zip(&cox.grad) {
            let mut seeds = vec![(*risk, Matrix::scalar(f32::lit(*g)))];
            if let Some(c) = clin {
                seeds.push((*c, Matrix::scalar(f32::lit(run.loss.recon_weight / n))));
            }
            let grads = tape.backward_seeded(&seeds);
            store.accumulate(bound, &grads);
        }
        if lambda_l2 != 0.0 {
            let e = store.get_mut(&head).expect("head weights exist");
            for (g, v) in e.grad.data_mut().iter_mut().zip(w.data()) {
                *g += f32::lit(2.0 * lambda_l2) * *v;
            }
        }
        adam_step(store, lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay);
    }
    Ok(if steps == 0 { f64::NAN } else { total / steps as f64 })
}
