//! Attention aggregation, measurement density, 10nn pattern similarity and
//! embedding export.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EventSequence, Record};
use crate::error::{AnalysisError, DataError};
use crate::model::Model;
use crate::scalar::Scalar;

/// Default significance threshold on rescaled attention.
pub const DEFAULT_EPSILON: f64 = 1.0;

/// One record's attention matrix with the marks of its events.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub id: String,
    /// `L x L`, row `j` is the query event.
    pub attention: Array2<f64>,
    pub marks: Vec<Vec<u8>>,
    /// Masking shift used by the encoder.
    pub shift: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub group: String,
    pub epsilon: f64,
    pub num_records: usize,
    /// `c_agg[m][n]`: average count of key events of mark `n` attended from
    /// query events of mark `m`.
    pub c_agg: Vec<Vec<f64>>,
    /// Fraction of those with rescaled attention above `epsilon`; `None`
    /// where `c_agg` is zero.
    pub i_agg: Vec<Vec<Option<f64>>>,
}

/// Aggregate attention over a group of records.
///
/// Each row `j` is rescaled by its unmasked key count `max(0, j - w)`
/// (1-based). Entries with attention above zero count towards `c_agg`,
/// rescaled entries strictly above `epsilon` towards `i_agg`.
pub fn aggregate_attention(
    records: &[AttentionRecord],
    num_marks: usize,
    group: &str,
    epsilon: f64,
) -> Result<InfluenceReport, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    if !(epsilon > 0.0) {
        return Err(AnalysisError::Epsilon(epsilon));
    }
    let mut c = vec![vec![0.0; num_marks]; num_marks];
    let mut i_cnt = vec![vec![0.0; num_marks]; num_marks];
    for r in records {
        let len = r.marks.len();
        if r.attention.dim() != (len, len) {
            return Err(AnalysisError::Mismatch(format!(
                "record {}: attention {:?} for {len} events",
                r.id,
                r.attention.dim()
            )));
        }
        for j in 0..len {
            let keys = (j + 1).saturating_sub(r.shift);
            if keys == 0 {
                continue;
            }
            for k in 0..=j {
                let a = r.attention[[j, k]];
                if !(a > 0.0) {
                    continue;
                }
                let significant = a * keys as f64 > epsilon;
                for m in (0..num_marks).filter(|&m| r.marks[j][m] != 0) {
                    for n in (0..num_marks).filter(|&n| r.marks[k][n] != 0) {
                        c[m][n] += 1.0;
                        if significant {
                            i_cnt[m][n] += 1.0;
                        }
                    }
                }
            }
        }
    }
    let n = records.len() as f64;
    let c_agg: Vec<Vec<f64>> = c.iter().map(|row| row.iter().map(|v| v / n).collect()).collect();
    let i_agg = c_agg
        .iter()
        .zip(&i_cnt)
        .map(|(cr, ir)| {
            cr.iter()
                .zip(ir)
                .map(|(&cv, &iv)| (cv > 0.0).then(|| iv / (n * cv)))
                .collect()
        })
        .collect();
    Ok(InfluenceReport {
        group: group.to_string(),
        epsilon,
        num_records: records.len(),
        c_agg,
        i_agg,
    })
}

impl InfluenceReport {
    /// Both matrices as comma-separated text; absent entries are `NA`.
    pub fn to_csv(&self) -> (String, String) {
        let c = self
            .c_agg
            .iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n");
        let i = self
            .i_agg
            .iter()
            .map(|r| {
                r.iter()
                    .map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join("\n");
        (c + "\n", i + "\n")
    }
}

/// Head-averaged last-layer TEE attention of each record.
pub fn attention_records<'a, T: Scalar>(
    model: &Model<T>,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<Vec<AttentionRecord>, AnalysisError> {
    let tee = model
        .tee
        .as_ref()
        .ok_or_else(|| AnalysisError::Mismatch("model has no event encoder".into()))?;
    records
        .into_iter()
        .map(|r| {
            let enc = tee.encode(&model.store, &r.events)?;
            Ok(AttentionRecord {
                id: r.id.clone(),
                attention: enc.last_layer_mean().mapv(|x| x.as_f64()),
                marks: r.events.marks().to_vec(),
                shift: tee.cfg.shift,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub id: String,
    /// Events of each mark per unit time up to the last event.
    pub density: Vec<f64>,
}

pub fn measurement_density(id: &str, seq: &EventSequence) -> Result<DensityProfile, AnalysisError> {
    let t_last = seq.last_time().unwrap_or(0.0);
    if !(t_last > 0.0) {
        return Err(AnalysisError::UndefinedDensity(id.to_string()));
    }
    let mut counts = vec![0.0; seq.num_marks()];
    for mark in seq.marks() {
        for (m, &b) in mark.iter().enumerate() {
            if b != 0 {
                counts[m] += 1.0;
            }
        }
    }
    Ok(DensityProfile {
        id: id.to_string(),
        density: counts.into_iter().map(|c| c / t_last).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub k: usize,
    pub value: f64,
    /// `(record index, CS_avg)` for every positive record.
    pub per_record: Vec<(usize, f64)>,
    /// Neighbour pairs where a density vector had zero norm (scored 0).
    pub zero_norm_pairs: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Mean over positive records of the average cosine similarity between a
/// record's density vector and those of its `k` nearest embeddings
/// (Euclidean; ties broken by record index).
pub fn knn_pattern_similarity(
    embeddings: &[Vec<f64>],
    densities: &[Vec<f64>],
    labels: &[u8],
    k: usize,
) -> Result<KnnReport, AnalysisError> {
    let n = embeddings.len();
    if densities.len() != n || labels.len() != n {
        return Err(AnalysisError::Mismatch(format!(
            "{n} embeddings, {} densities, {} labels",
            densities.len(),
            labels.len()
        )));
    }
    if k == 0 || n < k + 1 {
        return Err(AnalysisError::TooFewRecords { needed: k + 1, got: n });
    }
    let mut per_record = Vec::new();
    let mut zero_norm_pairs = 0;
    for i in (0..n).filter(|&i| labels[i] != 0) {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d2: f64 = embeddings[i]
                    .iter()
                    .zip(&embeddings[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let total: f64 = others[..k]
            .iter()
            .map(|&(_, j)| {
                cosine(&densities[i], &densities[j]).unwrap_or_else(|| {
                    zero_norm_pairs += 1;
                    0.0
                })
            })
            .sum();
        per_record.push((i, total / k as f64));
    }
    if per_record.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let value = per_record.iter().map(|p| p.1).sum::<f64>() / per_record.len() as f64;
    Ok(KnnReport {
        k,
        value,
        per_record,
        zero_norm_pairs,
    })
}

/// Pooled embeddings of `records`, in order.
pub fn record_embeddings<'a, T: Scalar>(
    model: &Model<T>,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    records
        .into_iter()
        .map(|r| Ok(model.record_embedding(r)?.into_iter().map(|x| x.as_f64()).collect()))
        .collect()
}

/// 10nn-ps (or any `k`) of a model over labelled records: pooled
/// embeddings, measurement densities of the event sequences and outcome
/// labels.
pub fn model_knn_ps<'a, T: Scalar>(
    model: &Model<T>,
    records: impl IntoIterator<Item = &'a Record>,
    k: usize,
) -> Result<KnnReport, AnalysisError> {
    let records: Vec<&Record> = records.into_iter().collect();
    let labels = records
        .iter()
        .map(|r| r.label().ok_or_else(|| AnalysisError::Unlabelled(r.id.clone())))
        .collect::<Result<Vec<u8>, _>>()?;
    let densities = records
        .iter()
        .map(|r| measurement_density(&r.id, &r.events).map(|d| d.density))
        .collect::<Result<Vec<_>, _>>()?;
    let embeddings = record_embeddings(model, records.iter().copied())?;
    knn_pattern_similarity(&embeddings, &densities, &labels, k)
}

/// Write `id,label,e0,e1,...` rows, one per record. A `#` comment line
/// carries `header` (e.g. a fingerprint) when given.
pub fn export_embeddings<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    path: &Path,
    header: Option<&str>,
) -> Result<usize, AnalysisError> {
    let rows = record_embeddings(model, &dataset.records)?;
    let width = model.cfg.d_z();
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&format!("# {h}\n"));
    }
    out.push_str("id,label");
    for c in 0..width {
        out.push_str(&format!(",e{c}"));
    }
    out.push('\n');
    for (r, e) in dataset.records.iter().zip(&rows) {
        let label = r.label().map_or_else(String::new, |l| l.to_string());
        out.push_str(&r.id);
        out.push(',');
        out.push_str(&label);
        for v in e {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| DataError::io(path, e))?;
    Ok(rows.len())
}
