use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use teehr::data::{Dataset, MarkMode, Record, Split};
use teehr::train::{evaluate, finetune_supervised, train, train_selfsupervised_with_probe, Trained};
use teehr::{Checkpoint, DamConfig, Group, LossOptions, ModelConfig, Objective, Scalar, TeeConfig, TrainConfig};

use crate::args::{FinetuneArgs, ModelArgs, OptimArgs, TrainArgs};
use crate::common::{load_data, parse, say, write_json, write_text, Precision};
use crate::exit::{Invalid, Numerical};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Train,
    Pretrain,
}

pub fn model_config(args: &ModelArgs, data: &Dataset, seed: u64) -> anyhow::Result<ModelConfig> {
    let tee = (!args.no_tee)
        .then(|| -> anyhow::Result<TeeConfig> {
            Ok(TeeConfig {
                num_marks: data.num_marks,
                d_emb: args.d_emb,
                d_time: args.d_time,
                time_scale: args.time_scale,
                n_layers: args.layers,
                n_heads: args.heads,
                time_mode: parse(&args.time_mode)?,
                shift: args.shift,
                d_ff: args.d_ff,
            })
        })
        .transpose()?;
    let has_obs = data.num_vars > 0 && data.records.iter().any(|r| r.observations.is_some());
    let dam = (has_obs && !args.no_dam).then_some(DamConfig {
        num_vars: data.num_vars,
        num_statics: data.num_statics,
        d_time: args.dam_d_time,
        time_scale: args.time_scale,
        hidden: args.dam_hidden,
        d_hprime: args.d_hprime,
        d_gprime: args.d_gprime,
        d_prod: args.d_prod,
        n_heads: args.dam_heads,
        d_h: args.dam_d_h,
        d_g: args.dam_d_g,
        d_static: args.d_static,
    });
    if tee.is_none() && dam.is_none() {
        return Err(Invalid("--no-tee needs a dataset with observations and the attention module enabled".into()).into());
    }
    Ok(ModelConfig {
        num_marks: data.num_marks,
        mode: data.mode,
        tee,
        dam,
        head_hidden: args.head_hidden,
        pooling: parse(&args.pooling)?,
        init_seed: args.init_seed.unwrap_or(seed),
    })
}

pub fn groups(names: &[String]) -> anyhow::Result<Vec<Group>> {
    names
        .iter()
        .filter(|n| !n.is_empty())
        .map(|n| Group::parse(n).ok_or_else(|| Invalid(format!("unknown parameter group {n:?}")).into()))
        .collect()
}

pub fn train_config(args: &OptimArgs, objective: Objective) -> anyhow::Result<TrainConfig> {
    let cfg = TrainConfig {
        objective,
        lr: args.lr,
        lr_min: args.lr_min,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        period: args.period,
        freeze: groups(&args.freeze)?,
        stop_metric: parse(&args.stop_metric)?,
        patience: args.patience,
        n_mc: args.n_mc,
        integration: parse(&args.integration)?,
        grad_clip: args.grad_clip,
        probe: !args.no_probe,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn objective(loss: &str, mode: MarkMode) -> anyhow::Result<Objective> {
    match loss {
        "auto" => Ok(match mode {
            MarkMode::MultiClass => Objective::PpMc,
            MarkMode::MultiLabel => Objective::PpMl,
        }),
        other => parse(other),
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    fingerprint: &'a str,
    seed: u64,
    command: &'a str,
    data: &'a Path,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    from: Option<&'a Path>,
    transfer: &'a [Group],
}

#[derive(Serialize)]
struct Summary {
    fingerprint: String,
    seed: u64,
    objective: Objective,
    epochs_run: usize,
    best_epoch: Option<usize>,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
    test_ll_per_event: Option<f64>,
    outcome: Option<teehr::ClassificationMetrics>,
}

fn write_outputs<T: Scalar>(
    trained: &Trained<T>,
    data: &Dataset,
    out: &Path,
    record: &RunRecord,
) -> anyhow::Result<()> {
    let ck = &trained.checkpoint;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    ck.save(&out.join("checkpoint.json"))?;
    write_text(&out.join("history.csv"), &ck.history_csv())?;
    write_json(&out.join("run.json"), record)?;
    let test: Vec<&Record> = data.split(Split::Test).collect();
    let test_ll = if ck.train.objective.has_likelihood() && !test.is_empty() {
        let rep = evaluate(&trained.model, &test, ck.train.objective, &LossOptions::evaluation())?;
        let v = rep.ll / rep.num_events.max(1) as f64;
        if !v.is_finite() {
            return Err(Numerical(format!("test log-likelihood is {v}")).into());
        }
        Some(v)
    } else {
        None
    };
    let last = ck.history.last();
    let summary = Summary {
        fingerprint: ck.fingerprint.clone(),
        seed: ck.train.seed,
        objective: ck.train.objective,
        epochs_run: ck.history.len(),
        best_epoch: ck.best_epoch,
        final_train_loss: last.map(|h| h.train_loss),
        final_val_loss: last.and_then(|h| h.val_loss),
        test_ll_per_event: test_ll,
        outcome: ck.outcome,
    };
    write_json(&out.join("metrics.json"), &summary)?;
    say(&serde_json::to_string(&summary)?);
    Ok(())
}

fn fit_generic<T: Scalar>(
    kind: Kind,
    data: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> anyhow::Result<Trained<T>> {
    Ok(match kind {
        Kind::Train => train::<T>(data, model, cfg)?,
        Kind::Pretrain => train_selfsupervised_with_probe::<T>(data, model, cfg)?,
    })
}

pub fn run_train(kind: Kind, args: &TrainArgs) -> anyhow::Result<()> {
    let data = load_data(&args.data)?;
    let model = model_config(&args.model, &data, args.optim.seed)?;
    let cfg = train_config(&args.optim, objective(&args.loss, data.mode)?)?;
    let name = match kind {
        Kind::Train => "train",
        Kind::Pretrain => "pretrain",
    };
    let fingerprint = teehr::train::fingerprint(&model, &cfg);
    let record = RunRecord {
        fingerprint: &fingerprint,
        seed: cfg.seed,
        command: name,
        data: &args.data.data,
        model: &model,
        train: &cfg,
        from: None,
        transfer: &[],
    };
    match parse::<Precision>(&args.optim.precision)? {
        Precision::F64 => write_outputs(&fit_generic::<f64>(kind, &data, &model, &cfg)?, &data, &args.out, &record),
        Precision::F32 => write_outputs(&fit_generic::<f32>(kind, &data, &model, &cfg)?, &data, &args.out, &record),
    }
}

pub fn run_finetune(args: &FinetuneArgs) -> anyhow::Result<()> {
    let data = load_data(&args.data)?;
    let source = args
        .from
        .as_ref()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()?;
    let model = match &source {
        Some(ck) => ModelConfig {
            init_seed: args.model.init_seed.unwrap_or(args.optim.seed),
            ..ck.model.clone()
        },
        None => model_config(&args.model, &data, args.optim.seed)?,
    };
    let transfer = groups(&args.transfer)?;
    let cfg = train_config(&args.optim, Objective::SupervisedBce)?;
    let fingerprint = teehr::train::fingerprint(&model, &cfg);
    let record = RunRecord {
        fingerprint: &fingerprint,
        seed: cfg.seed,
        command: "finetune",
        data: &args.data.data,
        model: &model,
        train: &cfg,
        from: args.from.as_deref(),
        transfer: &transfer,
    };
    match parse::<Precision>(&args.optim.precision)? {
        Precision::F64 => {
            let t = finetune_supervised::<f64>(&data, &model, source.as_ref(), &transfer, &cfg)?;
            write_outputs(&t, &data, &args.out, &record)
        }
        Precision::F32 => {
            let t = finetune_supervised::<f32>(&data, &model, source.as_ref(), &transfer, &cfg)?;
            write_outputs(&t, &data, &args.out, &record)
        }
    }
}
