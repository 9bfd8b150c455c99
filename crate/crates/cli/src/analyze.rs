use std::collections::HashMap;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};
use teehr::analysis::{
    aggregate_attention, attention_records, export_embeddings, knn_pattern_similarity, measurement_density,
    model_knn_ps, KnnReport,
};
use teehr::data::{Dataset, MarkMode, Record};
use teehr::error::AnalysisError;
use teehr::loss::{predict_next_marks, MarkPrediction, OutcomeHead, EVAL_SEED};
use teehr::metrics::{binary_metrics, classification_metrics};
use teehr::train::{evaluate, outcome_scores};
use teehr::{Checkpoint, LossOptions, Model, Objective, Scalar};

use crate::args::{AggregateArgs, EmbedArgs, EvaluateArgs, KnnArgs};
use crate::common::{load_data, parse, parse_split, say, select, write_json, write_text, Precision, Provenance};
use crate::exit::{Invalid, Numerical};

const NOT_APPLICABLE: &str = "not-applicable";

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn provenance(command: &str, args: &impl Serialize, ck: &Checkpoint) -> Provenance {
    Provenance::new(
        command,
        &json!({ "args": args, "checkpoint": ck.fingerprint }),
        Some(ck.train.seed),
    )
}

/// Head that scores the outcome for this checkpoint, if it has one.
fn outcome_head(ck: &Checkpoint) -> Option<OutcomeHead> {
    if ck.train.objective == Objective::SupervisedBce {
        Some(OutcomeHead::Classifier)
    } else if ck.train.probe && ck.outcome.is_some() {
        Some(OutcomeHead::Probe)
    } else {
        None
    }
}

fn eval_generic<T: Scalar>(
    model: &Model<T>,
    ck: &Checkpoint,
    records: &[&Record],
    mode: MarkMode,
    opts: &LossOptions,
) -> anyhow::Result<Value> {
    let objective = ck.train.objective;
    let ll = if objective.has_likelihood() {
        let rep = evaluate(model, records, objective, opts)?;
        let v = rep.ll / rep.num_events.max(1) as f64;
        if !v.is_finite() {
            return Err(Numerical(format!("log-likelihood per event is {v}")).into());
        }
        json!(v)
    } else {
        json!(NOT_APPLICABLE)
    };

    let next_mark = if objective == Objective::SupervisedBce {
        json!(NOT_APPLICABLE)
    } else {
        let mut pred = MarkPrediction::default();
        for r in records {
            pred.extend(predict_next_marks(model, r, objective)?);
        }
        match classification_metrics(&pred.scores, &pred.targets, mode) {
            Ok(m) => {
                let (metric, value) = match mode {
                    MarkMode::MultiClass => ("weighted-f1", m.f1),
                    MarkMode::MultiLabel => ("auroc", m.auroc),
                };
                json!({ "metric": metric, "value": value, "all": m, "predictions": pred.scores.len() })
            }
            Err(e) => json!({ "metric": NOT_APPLICABLE, "reason": e.to_string() }),
        }
    };

    let outcome = match outcome_head(ck) {
        None => json!(NOT_APPLICABLE),
        Some(head) => {
            let (p, y) = outcome_scores(model, records.iter().copied(), head)?;
            match binary_metrics(&p, &y) {
                Ok(m) => json!({ "head": format!("{head:?}").to_lowercase(), "metrics": m, "records": p.len() }),
                Err(e) => json!({ "metric": NOT_APPLICABLE, "reason": e.to_string() }),
            }
        }
    };
    Ok(json!({ "ll_per_event": ll, "next_mark": next_mark, "outcome": outcome }))
}

pub fn run_evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.data)?;
    check_marks(&ck, &data)?;
    let records = select(&data, parse_split(&args.split)?);
    if records.is_empty() {
        anyhow::bail!("split {:?} of {} has no records", args.split, args.data.data.display());
    }
    let opts = LossOptions {
        n_mc: args.n_mc,
        integration: parse(&args.integration)?,
        seed: EVAL_SEED,
    };
    if opts.n_mc == 0 {
        return Err(Invalid("--n-mc must be positive".into()).into());
    }
    let body = match parse::<Precision>(&args.precision)? {
        Precision::F64 => eval_generic(&ck.to_model::<f64>()?, &ck, &records, data.mode, &opts)?,
        Precision::F32 => eval_generic(&ck.to_model::<f32>()?, &ck, &records, data.mode, &opts)?,
    };
    let prov = provenance("evaluate", args, &ck);
    let mut report = json!({
        "fingerprint": prov.fingerprint,
        "seed": prov.seed,
        "checkpoint_fingerprint": ck.fingerprint,
        "objective": ck.train.objective,
        "split": args.split,
        "records": records.len(),
        "n_mc": opts.n_mc,
        "eval_seed": opts.seed,
    });
    report.as_object_mut().unwrap().extend(body.as_object().unwrap().clone());
    emit(&report, args.out.as_deref())
}

fn emit(report: &Value, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            write_json(p, report)?;
            say(&format!("wrote {}", p.display()));
        }
        None => say(&serde_json::to_string_pretty(report)?),
    }
    Ok(())
}

fn check_marks(ck: &Checkpoint, data: &Dataset) -> anyhow::Result<()> {
    if ck.model.num_marks != data.num_marks {
        return Err(Invalid(format!(
            "checkpoint expects {} marks, dataset has {}",
            ck.model.num_marks, data.num_marks
        ))
        .into());
    }
    Ok(())
}

fn id_filter(spec: &str) -> anyhow::Result<Vec<String>> {
    let text = match spec.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading id list {path}"))?,
        None => spec.replace(',', "\n"),
    };
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn run_aggregate(args: &AggregateArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.data)?;
    check_marks(&ck, &data)?;
    let model = ck.to_model::<f64>()?;
    let mut records = select(&data, parse_split(&args.split)?);
    if let Some(l) = args.label {
        records.retain(|r| r.label() == Some(l));
    }
    if let Some(spec) = &args.ids {
        let ids = id_filter(spec)?;
        records.retain(|r| ids.contains(&r.id));
    }
    let groups: Vec<(String, Vec<&Record>)> = match args.group_by.as_str() {
        "all" => vec![("all".to_string(), records)],
        "label" => [0u8, 1]
            .into_iter()
            .map(|l| (format!("label{l}"), records.iter().copied().filter(|r| r.label() == Some(l)).collect()))
            .collect(),
        "predicted" => {
            let head = outcome_head(&ck)
                .ok_or_else(|| Invalid("--group-by predicted needs a checkpoint with an outcome head".into()))?;
            let mut split: [Vec<&Record>; 2] = [Vec::new(), Vec::new()];
            for r in records {
                let p = teehr::train::outcome_probability(&model, r, head)?;
                split[usize::from(p >= 0.5)].push(r);
            }
            let [g0, g1] = split;
            vec![("predicted0".to_string(), g0), ("predicted1".to_string(), g1)]
        }
        other => return Err(Invalid(format!("unknown grouping {other:?}; use all, label or predicted")).into()),
    };
    let prov = provenance("aggregate", args, &ck);
    for (name, members) in &groups {
        let attn = attention_records(&model, members.iter().copied())?;
        let report = aggregate_attention(&attn, data.num_marks, name, args.epsilon).map_err(|e| match e {
            AnalysisError::EmptyGroup => anyhow::anyhow!("group {name:?} has no records"),
            e => e.into(),
        })?;
        let head = format!("# {} group={name} epsilon={}\n", prov.header(), args.epsilon);
        let (c, i) = report.to_csv();
        write_text(&args.out.join(format!("c_agg_{name}.csv")), &(head.clone() + &c))?;
        write_text(&args.out.join(format!("i_agg_{name}.csv")), &(head + &i))?;
        write_json(
            &args.out.join(format!("influence_{name}.json")),
            &json!({
                "fingerprint": prov.fingerprint,
                "seed": prov.seed,
                "checkpoint_fingerprint": ck.fingerprint,
                "report": report,
            }),
        )?;
        say(&format!("group {name}: {} records", report.num_records));
    }
    Ok(())
}

pub fn run_embed(args: &EmbedArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.data)?;
    check_marks(&ck, &data)?;
    let prov = provenance("embed", args, &ck);
    let header = prov.header();
    let n = match parse::<Precision>(&args.precision)? {
        Precision::F64 => export_embeddings(&ck.to_model::<f64>()?, &data, &args.out, Some(&header))?,
        Precision::F32 => export_embeddings(&ck.to_model::<f32>()?, &data, &args.out, Some(&header))?,
    };
    say(&format!("wrote {n} embeddings to {}", args.out.display()));
    Ok(())
}

struct EmbeddingFile {
    rows: HashMap<String, Vec<f64>>,
    seed: Option<u64>,
}

fn read_embeddings(path: &Path) -> anyhow::Result<EmbeddingFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let seed = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .flat_map(str::split_whitespace)
        .find_map(|w| w.strip_prefix("seed=").and_then(|s| s.parse().ok()));
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut rows = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {} has a non-numeric entry", path.display(), i + 1))?;
        rows.insert(id, values);
    }
    Ok(EmbeddingFile { rows, seed })
}

fn from_embeddings(path: &Path, records: &[&Record], k: usize) -> anyhow::Result<(KnnReport, Option<u64>)> {
    let file = read_embeddings(path)?;
    let mut emb = Vec::with_capacity(records.len());
    let mut dens = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let e = file
            .rows
            .get(&r.id)
            .with_context(|| format!("record {} has no embedding in {}", r.id, path.display()))?;
        emb.push(e.clone());
        dens.push(measurement_density(&r.id, &r.events)?.density);
        labels.push(r.label().ok_or_else(|| AnalysisError::Unlabelled(r.id.clone()))?);
    }
    Ok((knn_pattern_similarity(&emb, &dens, &labels, k)?, file.seed))
}

pub fn run_knnps(args: &KnnArgs) -> anyhow::Result<()> {
    let data = load_data(&args.data)?;
    let records = select(&data, parse_split(&args.split)?);
    let (report, prov) = match (&args.checkpoint, &args.embeddings) {
        (Some(path), _) => {
            let ck = load_checkpoint(path)?;
            check_marks(&ck, &data)?;
            let model = ck.to_model::<f64>()?;
            (model_knn_ps(&model, records.iter().copied(), args.k)?, provenance("knnps", args, &ck))
        }
        (None, Some(path)) => {
            let (report, seed) = from_embeddings(path, &records, args.k)?;
            (report, Provenance::new("knnps", args, seed))
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let per_record: Vec<Value> = report
        .per_record
        .iter()
        .map(|&(i, cs)| json!({ "id": records[i].id, "cs_avg": cs }))
        .collect();
    let out = json!({
        "fingerprint": prov.fingerprint,
        "seed": prov.seed,
        "k": report.k,
        "value": report.value,
        "zero_norm_pairs": report.zero_norm_pairs,
        "per_record": per_record,
    });
    match &args.out {
        Some(p) => {
            write_json(p, &out)?;
            say(&format!("{}nn-ps = {}", report.k, report.value));
        }
        None => say(&serde_json::to_string_pretty(&out)?),
    }
    Ok(())
}
