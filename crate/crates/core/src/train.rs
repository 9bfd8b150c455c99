//! Training: Adam with cosine annealing, self-supervised pretraining with a
//! detached outcome probe, and transfer-and-freeze fine-tuning.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::data::hawkes::derive_seed;
use crate::data::{Dataset, Record, Split};
use crate::decoder::Integration;
use crate::error::{ConfigError, TrainError};
use crate::loss::{
    bce_from_logit, evaluate_record, outcome_logit, record_loss, LossOptions, LossReport, Objective, OutcomeHead,
};
use crate::metrics::{auroc, binary_metrics, ClassificationMetrics};
use crate::model::{Model, ModelConfig};
use crate::nn::Group;
use crate::scalar::{sigmoid, Scalar};

const SHUFFLE_SALT: u64 = 0x5348_5546;

/// Validation quantity watched by early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StopMetric {
    /// Validation objective per event (BCE per record for supervised runs).
    #[default]
    Loss,
    /// Validation AUROC of the outcome head (classifier or probe).
    Auroc,
    /// Train for the full budget and keep the last parameters.
    Off,
}

impl std::str::FromStr for StopMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss" => Ok(StopMetric::Loss),
            "auroc" => Ok(StopMetric::Auroc),
            "off" | "none" => Ok(StopMetric::Off),
            _ => Err(format!("unknown early-stopping metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Initial learning rate.
    pub lr: f64,
    #[serde(default)]
    pub lr_min: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Cosine annealing period in epochs; defaults to `epochs`.
    #[serde(default)]
    pub period: Option<usize>,
    #[serde(default)]
    pub freeze: Vec<Group>,
    #[serde(default)]
    pub stop_metric: StopMetric,
    pub patience: usize,
    /// Integration points per interval during training.
    pub n_mc: usize,
    pub integration: Integration,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Train the detached outcome probe when labels are present.
    #[serde(default = "yes")]
    pub probe: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            lr: 1e-3,
            lr_min: 0.0,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            period: None,
            freeze: Vec::new(),
            stop_metric: StopMetric::Loss,
            patience: 10,
            n_mc: LossOptions::TRAIN_N_MC,
            integration: Integration::Stratified,
            grad_clip: None,
            probe: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(ConfigError::Invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return Err(ConfigError::Invalid(format!(
                "minimum learning rate {} must lie in [0, {}]",
                self.lr_min, self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch size must be positive".into()));
        }
        if self.n_mc == 0 && self.objective.has_likelihood() {
            return Err(ConfigError::Invalid("need at least one integration point".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(ConfigError::Invalid(format!("gradient clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn period(&self) -> usize {
        self.period.unwrap_or(self.epochs)
    }

    fn loss_options(&self, epoch: usize) -> LossOptions {
        LossOptions {
            n_mc: self.n_mc,
            integration: self.integration,
            seed: derive_seed(self.seed, epoch as u64),
        }
    }
}

/// `lr_min + (lr0 - lr_min) * (1 + cos(pi * epoch / period)) / 2`.
pub fn cosine_lr(lr0: f64, lr_min: f64, epoch: usize, period: usize) -> f64 {
    if period == 0 || epoch == 0 {
        return lr0;
    }
    if epoch == period {
        return lr_min;
    }
    let c = (std::f64::consts::PI * epoch as f64 / period as f64).cos();
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + c)
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: model.store.zeros_like(),
            v: model.store.zeros_like(),
            step: 0,
        }
    }

    /// One update; parameters with `skip[i]` set are left untouched.
    pub fn update(&mut self, model: &mut Model<T>, grads: &[Option<Array2<T>>], lr: f64, skip: &[bool]) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for (i, p) in model.store.iter_mut().enumerate() {
            if skip[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match &grads[i] {
                Some(g) => {
                    m.zip_mut_with(g, |m, &g| *m = b1 * *m + (T::one() - b1) * g);
                    v.zip_mut_with(g, |v, &g| *v = b2 * *v + (T::one() - b2) * g * g);
                }
                None => {
                    m.mapv_inplace(|m| b1 * m);
                    v.mapv_inplace(|v| b2 * v);
                }
            }
            ndarray::Zip::from(&mut p.value).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Training objective per event (per labelled record when supervised).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_auroc: Option<f64>,
    /// Mean probe BCE over labelled training records.
    pub probe_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub probe: Option<ClassificationMetrics>,
}

/// Events a record contributes to the objective's normaliser.
pub fn objective_events(record: &Record, objective: Objective) -> usize {
    match objective {
        Objective::Ae => record.events.len().saturating_sub(1),
        Objective::SupervisedBce => usize::from(record.label().is_some()),
        _ => record.events.len(),
    }
}

struct RecordPass<T> {
    grads: Vec<Option<Array2<T>>>,
    report: LossReport,
    probe: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn record_pass<T: Scalar>(
    model: &Model<T>,
    record: &Record,
    objective: Objective,
    opts: &LossOptions,
    w_loss: f64,
    w_probe: f64,
    frozen: &[Group],
    probe: bool,
) -> Result<RecordPass<T>, ConfigError> {
    let mut tape = Tape::new();
    let bound = model.store.bind_frozen(&mut tape, frozen);
    let tr = model.embed(&mut tape, &bound, record)?;
    let (total, report, probe_loss) = if objective == Objective::SupervisedBce {
        let label = record.label().expect("supervised batches hold labelled records");
        let logit = outcome_logit(model, &mut tape, &bound, tr.z, OutcomeHead::Classifier, false);
        let bce = bce_from_logit(&mut tape, logit, label);
        let v = tape.scalar(bce).as_f64();
        let report = LossReport {
            ll: -v,
            num_events: 1,
            num_records: 1,
            ..LossReport::default()
        };
        (tape.scale(bce, T::of(w_loss)), report, None)
    } else {
        let rl = record_loss(model, &mut tape, &bound, tr.z, &record.events, objective, opts);
        let report = LossReport::record(&tape, &rl);
        let mut total = tape.scale(rl.loss, T::of(w_loss));
        let mut probe_loss = None;
        if let (true, Some(label)) = (probe, record.label()) {
            let logit = outcome_logit(model, &mut tape, &bound, tr.z, OutcomeHead::Probe, true);
            let bce = bce_from_logit(&mut tape, logit, label);
            probe_loss = Some(tape.scalar(bce).as_f64());
            let b = tape.scale(bce, T::of(w_probe));
            total = tape.add(total, b);
        }
        (total, report, probe_loss)
    };
    let mut g = tape.backward(total);
    let grads: Vec<Option<Array2<T>>> = bound.vars().iter().map(|&v| g.take(v)).collect();
    for ((_, p), gr) in model.store.iter().zip(&grads) {
        assert!(
            !frozen.contains(&p.group) || gr.is_none(),
            "frozen parameter {} received a gradient",
            p.name
        );
    }
    Ok(RecordPass {
        grads,
        report,
        probe: probe_loss,
    })
}

/// Probability from an outcome head for one record.
pub fn outcome_probability<T: Scalar>(model: &Model<T>, record: &Record, head: OutcomeHead) -> Result<f64, ConfigError> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let tr = model.embed(&mut tape, &bound, record)?;
    let logit = outcome_logit(model, &mut tape, &bound, tr.z, head, false);
    Ok(sigmoid(tape.scalar(logit).as_f64()))
}

/// Outcome probabilities and labels of the labelled records among `records`.
pub fn outcome_scores<'a, T: Scalar>(
    model: &Model<T>,
    records: impl IntoIterator<Item = &'a Record>,
    head: OutcomeHead,
) -> Result<(Vec<f64>, Vec<u8>), ConfigError> {
    let labelled: Vec<&Record> = records.into_iter().filter(|r| r.label().is_some()).collect();
    let probs = labelled
        .par_iter()
        .map(|r| outcome_probability(model, r, head))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((probs, labelled.iter().map(|r| r.label().unwrap_or(0)).collect()))
}

/// Objective over `records` with evaluation-grade integration.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    records: &[&Record],
    objective: Objective,
    opts: &LossOptions,
) -> Result<LossReport, ConfigError> {
    if objective == Objective::SupervisedBce {
        let mut rep = LossReport::default();
        let (p, y) = outcome_scores(model, records.iter().copied(), OutcomeHead::Classifier)?;
        for (p, y) in p.iter().zip(&y) {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            rep.ll += if *y != 0 { p.ln() } else { (1.0 - p).ln() };
            rep.num_events += 1;
            rep.num_records += 1;
        }
        return Ok(rep);
    }
    let parts = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| evaluate_record(model, r, objective, &opts.for_record(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rep = LossReport::default();
    for p in &parts {
        rep.merge(p);
    }
    Ok(rep)
}

fn outcome_head(objective: Objective) -> OutcomeHead {
    if objective == Objective::SupervisedBce {
        OutcomeHead::Classifier
    } else {
        OutcomeHead::Probe
    }
}

fn validation_auroc<T: Scalar>(model: &Model<T>, val: &[&Record], objective: Objective) -> Option<f64> {
    let (p, y) = outcome_scores(model, val.iter().copied(), outcome_head(objective)).ok()?;
    let t: Vec<bool> = y.iter().map(|&l| l != 0).collect();
    auroc(&p, &t).ok()
}

fn grad_norm<T: Scalar>(grads: &[Option<Array2<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Train `model` in place on the training split.
pub fn fit<T: Scalar>(model: &mut Model<T>, dataset: &Dataset, cfg: &TrainConfig) -> Result<FitSummary, TrainError> {
    cfg.validate()?;
    let declared = model.store.groups();
    if let Some(g) = cfg.freeze.iter().find(|g| !declared.contains(g)) {
        return Err(ConfigError::Invalid(format!("cannot freeze {g}: the model has no such group")).into());
    }
    let supervised = cfg.objective == Objective::SupervisedBce;
    let train: Vec<&Record> = dataset
        .split(Split::Train)
        .filter(|r| !supervised || r.label().is_some())
        .collect();
    if train.is_empty() {
        return Err(TrainError::EmptySplit(if supervised { "labelled training" } else { "training" }));
    }
    let val: Vec<&Record> = dataset.split(Split::Validation).collect();
    let probe = cfg.probe && !supervised && train.iter().any(|r| r.label().is_some());
    let skip: Vec<bool> = model.store.iter().map(|(_, p)| cfg.freeze.contains(&p.group)).collect();
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut stale = 0;
    let eval_opts = LossOptions::evaluation();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, cfg.lr_min, epoch, cfg.period());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_SALT, epoch as u64));
        order.shuffle(&mut rng);
        let opts = cfg.loss_options(epoch);
        let mut epoch_report = LossReport::default();
        let (mut probe_sum, mut probe_n) = (0.0, 0usize);

        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let events: usize = chunk.iter().map(|&i| objective_events(train[i], cfg.objective)).sum();
            let labelled = chunk.iter().filter(|&&i| train[i].label().is_some()).count();
            let w_loss = if events > 0 { 1.0 / events as f64 } else { 0.0 };
            let w_probe = if labelled > 0 { 1.0 / labelled as f64 } else { 0.0 };
            let model_ref: &Model<T> = model;
            let passes = chunk
                .par_iter()
                .map(|&i| {
                    record_pass(
                        model_ref,
                        train[i],
                        cfg.objective,
                        &opts.for_record(i),
                        w_loss,
                        w_probe,
                        &cfg.freeze,
                        probe,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;

            let mut grads: Vec<Option<Array2<T>>> = vec![None; skip.len()];
            let mut bad = Vec::new();
            for (&i, p) in chunk.iter().zip(passes) {
                if !p.report.ll.is_finite() || p.probe.is_some_and(|x| !x.is_finite()) {
                    bad.push(train[i].id.clone());
                }
                epoch_report.merge(&p.report);
                if let Some(x) = p.probe {
                    probe_sum += x;
                    probe_n += 1;
                }
                for (acc, g) in grads.iter_mut().zip(p.grads) {
                    if let Some(g) = g {
                        match acc {
                            Some(a) => *a += &g,
                            None => *acc = Some(g),
                        }
                    }
                }
            }
            let norm = grad_norm(&grads);
            if !bad.is_empty() || !norm.is_finite() {
                if bad.is_empty() {
                    bad = chunk.iter().map(|&i| train[i].id.clone()).collect();
                }
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    records: bad,
                });
            }
            if let Some(c) = cfg.grad_clip {
                if norm > c {
                    let k = T::of(c / norm);
                    for g in grads.iter_mut().flatten() {
                        g.mapv_inplace(|x| x * k);
                    }
                }
            }
            adam.update(model, &grads, lr, &skip);
        }

        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate(model, &val, cfg.objective, &eval_opts)?.loss_per_event())
        };
        let val_auroc = if val.is_empty() || !(supervised || probe) {
            None
        } else {
            validation_auroc(model, &val, cfg.objective)
        };
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: epoch_report.loss_per_event(),
            val_loss,
            val_auroc,
            probe_loss: (probe_n > 0).then(|| probe_sum / probe_n as f64),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train {:.5} val {:?} auroc {:?}",
            stats.train_loss,
            stats.val_loss,
            stats.val_auroc
        );
        history.push(stats);

        let score = match cfg.stop_metric {
            StopMetric::Off => None,
            StopMetric::Loss => val_loss,
            StopMetric::Auroc => val_auroc.map(|a| -a),
        };
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(b, _, _)| s < *b) {
                best = Some((s, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log::info!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, e, m)) => {
            *model = m;
            Some(e)
        }
        None => history.last().map(|s| s.epoch),
    };
    let probe_metrics = if probe {
        probe_metrics(model, dataset)
    } else {
        None
    };
    Ok(FitSummary {
        history,
        best_epoch,
        probe: probe_metrics,
    })
}

/// Probe metrics on the first split that has labels of both classes,
/// searching test, validation, then train.
pub fn probe_metrics<T: Scalar>(model: &Model<T>, dataset: &Dataset) -> Option<ClassificationMetrics> {
    head_metrics(model, dataset, OutcomeHead::Probe)
}

fn head_metrics<T: Scalar>(model: &Model<T>, dataset: &Dataset, head: OutcomeHead) -> Option<ClassificationMetrics> {
    [Split::Test, Split::Validation, Split::Train].into_iter().find_map(|s| {
        let (p, y) = outcome_scores(model, dataset.split(s), head).ok()?;
        binary_metrics(&p, &y).ok()
    })
}

/// Trained model together with its serialisable checkpoint.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: Model<T>,
    pub checkpoint: Checkpoint,
}

/// Build a model from `model_cfg` and train it.
pub fn train<T: Scalar>(dataset: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Trained<T>, TrainError> {
    let mut model = Model::new(model_cfg.clone())?;
    let summary = fit(&mut model, dataset, cfg)?;
    let checkpoint = Checkpoint::from_model(&model, cfg, summary);
    Ok(Trained { model, checkpoint })
}

/// Self-supervised pretraining with the detached probe; the probe is
/// skipped when the dataset has no labels.
pub fn train_selfsupervised_with_probe<T: Scalar>(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Trained<T>, TrainError> {
    if cfg.objective == Objective::SupervisedBce {
        return Err(ConfigError::Invalid("pretraining needs a self-supervised objective".into()).into());
    }
    let cfg = TrainConfig {
        probe: true,
        ..cfg.clone()
    };
    train(dataset, model_cfg, &cfg)
}

/// Copy the parameters of `groups` from `source` into `model`. Every group
/// is checked before anything is copied.
pub fn transfer_groups<T: Scalar>(model: &mut Model<T>, source: &Checkpoint, groups: &[Group]) -> Result<(), TrainError> {
    let mut bad = Vec::new();
    let mut details = Vec::new();
    for &g in groups {
        let mut ok = true;
        let mut any = false;
        for (_, p) in model.store.iter().filter(|(_, p)| p.group == g) {
            any = true;
            match source.params.iter().find(|s| s.name == p.name) {
                None => {
                    ok = false;
                    details.push(format!("{} missing", p.name));
                }
                Some(s) if s.group != g || (s.shape[0], s.shape[1]) != p.value.dim() => {
                    ok = false;
                    details.push(format!("{} is {:?}, expected {:?}", p.name, s.shape, p.value.dim()));
                }
                Some(_) => {}
            }
        }
        if !any {
            ok = false;
            details.push(format!("model has no {g} parameters"));
        }
        if !ok {
            bad.push(g.name().to_string());
        }
    }
    if !bad.is_empty() {
        return Err(TrainError::Transfer {
            groups: bad,
            detail: details.join("; "),
        });
    }
    for p in model.store.iter_mut().filter(|p| groups.contains(&p.group)) {
        let s = source.params.iter().find(|s| s.name == p.name).expect("checked above");
        p.value = Array2::from_shape_fn(p.value.dim(), |(i, j)| T::of(s.data[i * s.shape[1] + j]));
    }
    Ok(())
}

/// Supervised fine-tuning on the outcome with binary cross-entropy.
///
/// With a checkpoint, `transfer` groups are loaded from it first; freezing
/// follows `cfg.freeze`. Without one the model trains from scratch.
pub fn finetune_supervised<T: Scalar>(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    pretrained: Option<&Checkpoint>,
    transfer: &[Group],
    cfg: &TrainConfig,
) -> Result<Trained<T>, TrainError> {
    let cfg = TrainConfig {
        objective: Objective::SupervisedBce,
        ..cfg.clone()
    };
    let mut model = Model::new(model_cfg.clone())?;
    if let Some(ck) = pretrained {
        transfer_groups(&mut model, ck, transfer)?;
    } else if !transfer.is_empty() {
        return Err(TrainError::Transfer {
            groups: transfer.iter().map(|g| g.name().to_string()).collect(),
            detail: "no pretrained checkpoint given".into(),
        });
    }
    let mut summary = fit(&mut model, dataset, &cfg)?;
    summary.probe = head_metrics(&model, dataset, OutcomeHead::Classifier);
    let mut checkpoint = Checkpoint::from_model(&model, &cfg, summary);
    checkpoint.transferred = transfer.to_vec();
    Ok(Trained { model, checkpoint })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub group: Group,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub fingerprint: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Vec<StoredParam>,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    /// Probe metrics for pretraining runs, classifier metrics for
    /// fine-tuning runs.
    pub outcome: Option<ClassificationMetrics>,
    #[serde(default)]
    pub transferred: Vec<Group>,
}

pub const CHECKPOINT_FORMAT: &str = "teehr-checkpoint-1";

/// SHA-256 over the JSON of the model and training configuration.
pub fn fingerprint(model: &ModelConfig, train: &TrainConfig) -> String {
    let json = serde_json::json!({ "model": model, "train": train });
    hex::encode(Sha256::digest(json.to_string().as_bytes()))
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, cfg: &TrainConfig, summary: FitSummary) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            fingerprint: fingerprint(&model.cfg, cfg),
            model: model.cfg.clone(),
            train: cfg.clone(),
            params: model
                .store
                .iter()
                .map(|(_, p)| StoredParam {
                    name: p.name.clone(),
                    group: p.group,
                    shape: [p.value.nrows(), p.value.ncols()],
                    data: p.value.iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
            history: summary.history,
            best_epoch: summary.best_epoch,
            outcome: summary.probe,
            transferred: Vec::new(),
        }
    }

    /// Rebuild the model, checking every parameter's name and shape.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>, ConfigError> {
        let mut model = Model::new(self.model.clone())?;
        if model.store.len() != self.params.len() {
            return Err(ConfigError::Invalid(format!(
                "checkpoint holds {} parameters, configuration declares {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in model.store.iter_mut() {
            let s = self
                .params
                .iter()
                .find(|s| s.name == p.name)
                .ok_or_else(|| ConfigError::Missing(p.name.clone()))?;
            let shape = (s.shape[0], s.shape[1]);
            if shape != p.value.dim() || s.data.len() != shape.0 * shape.1 {
                return Err(ConfigError::Shape {
                    name: p.name.clone(),
                    expected: p.value.dim(),
                    found: shape,
                });
            }
            p.value = Array2::from_shape_fn(shape, |(i, j)| T::of(s.data[i * shape.1 + j]));
        }
        Ok(model)
    }

    /// Parameters of one group, in store order.
    pub fn group(&self, g: Group) -> impl Iterator<Item = &StoredParam> {
        self.params.iter().filter(move |p| p.group == g)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let err = |msg: String| TrainError::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let err = |msg: String| TrainError::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(err(format!("unsupported format {:?}", ck.format)));
        }
        Ok(ck)
    }

    /// Training history as comma-separated text with a fingerprint comment.
    pub fn history_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        let mut out = format!(
            "# fingerprint={} seed={}\nepoch,lr,train_loss,val_loss,val_auroc,probe_loss\n",
            self.fingerprint, self.train.seed
        );
        for h in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                h.epoch,
                h.lr,
                h.train_loss,
                opt(h.val_loss),
                opt(h.val_auroc),
                opt(h.probe_loss)
            ));
        }
        out
    }
}
