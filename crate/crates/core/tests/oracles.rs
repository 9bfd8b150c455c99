//! Independent scalar re-implementations checked against the library.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;
use teehr::analysis::{knn_pattern_similarity, measurement_density};
use teehr::dam::Dam;
use teehr::data::{simulate_ehr_like, EhrConfig, EventSequence, MarkMode, Observation, ObservationSet, Record, Split};
use teehr::loss::{evaluate_record, predict_next_marks, LossOptions, Objective};
use teehr::metrics::auroc;
use teehr::nn::ParamStore;
use teehr::tee::{time_encode, Tee};
use teehr::{DamConfig, Integration, Model, ModelConfig, TeeConfig, TimeMode};

type Rows = Vec<Vec<f64>>;

fn param(store: &ParamStore<f64>, name: &str) -> Rows {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.value(id).rows().into_iter().map(|r| r.to_vec()).collect()
}

fn randomise(store: &mut ParamStore<f64>, seed: u64, spread: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        p.value.mapv_inplace(|x| x + rng.random_range(-spread..spread));
    }
}

fn vecmat(x: &[f64], w: &Rows) -> Vec<f64> {
    (0..w[0].len()).map(|c| x.iter().zip(w).map(|(a, r)| a * r[c]).sum()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

fn layer_norm(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let g = &param(store, &format!("{name}.gain"))[0];
    let b = &param(store, &format!("{name}.shift"))[0];
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i])
        .collect()
}

fn mlp(store: &ParamStore<f64>, name: &str, layers: usize, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    for l in 0..layers {
        let w = param(store, &format!("{name}.{l}.weight"));
        let b = &param(store, &format!("{name}.{l}.bias"))[0];
        x = add(&vecmat(&x, &w), b);
        if l + 1 < layers {
            x = x.into_iter().map(gelu).collect();
        }
    }
    x
}

fn encoding(t: f64, d_time: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(d_time);
    for d in 1..=d_time {
        let (exponent, odd) = if d % 2 == 1 { (d - 1, true) } else { (d, false) };
        let arg = t / scale.powf(exponent as f64 / d_time as f64);
        out.push(if odd { arg.cos() } else { arg.sin() });
    }
    out
}

fn softmax_mix(scores: &[f64], values: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    let a: Vec<f64> = e.iter().map(|x| x / z).collect();
    let mut out = vec![0.0; values[0].len()];
    for (w, v) in a.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    (a, out)
}

/// Step-by-step encoder evaluation for one sequence.
fn tee_oracle(store: &ParamStore<f64>, cfg: &TeeConfig, marks: &Rows, times: &[f64]) -> Rows {
    let len = times.len();
    let emb = param(store, "tee.embedding");
    let dm = cfg.d_model();
    let dh = dm / cfg.n_heads;
    let mut x = Vec::new();
    let mut stream = Vec::new();
    for j in 0..len {
        let e = vecmat(&marks[j], &emb);
        let te = encoding(times[j], cfg.d_time, cfg.time_scale);
        match cfg.time_mode {
            TimeMode::Concatenate => {
                x.push([e.clone(), te.clone()].concat());
                stream.push(if cfg.shift == 0 {
                    [e, te].concat()
                } else {
                    [vec![0.0; cfg.d_emb], te].concat()
                });
            }
            TimeMode::Sum => {
                x.push(add(&e, &te));
                stream.push(if cfg.shift == 0 { add(&e, &te) } else { te });
            }
        }
    }
    for l in 0..cfg.n_layers {
        let p = format!("tee.layer{l}");
        let q_in: Rows = stream.iter().map(|s| layer_norm(store, &format!("{p}.norm_attn"), s)).collect();
        let kv_in: Rows = if l == 0 && cfg.shift > 0 {
            x.iter().map(|s| layer_norm(store, &format!("{p}.norm_attn"), s)).collect()
        } else {
            q_in.clone()
        };
        let (wq, wk, wv, wo) = (
            param(store, &format!("{p}.wq")),
            param(store, &format!("{p}.wk")),
            param(store, &format!("{p}.wv")),
            param(store, &format!("{p}.wo")),
        );
        let q: Rows = q_in.iter().map(|r| vecmat(r, &wq)).collect();
        let k: Rows = kv_in.iter().map(|r| vecmat(r, &wk)).collect();
        let v: Rows = kv_in.iter().map(|r| vecmat(r, &wv)).collect();
        for j in 0..len {
            let mut merged = vec![0.0; dm];
            let keys: Vec<usize> = (0..len).filter(|&kk| kk + cfg.shift <= j).collect();
            if !keys.is_empty() {
                for hd in 0..cfg.n_heads {
                    let cols = hd * dh..(hd + 1) * dh;
                    let scores: Vec<f64> = keys
                        .iter()
                        .map(|&kk| cols.clone().map(|c| q[j][c] * k[kk][c]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let vals: Vec<&[f64]> = keys.iter().map(|&kk| &v[kk][cols.clone()]).collect();
                    let (_, out) = softmax_mix(&scores, &vals);
                    merged[cols].copy_from_slice(&out);
                }
            }
            stream[j] = add(&stream[j], &vecmat(&merged, &wo));
            let normed = layer_norm(store, &format!("{p}.norm_ff"), &stream[j]);
            stream[j] = add(&stream[j], &mlp(store, &format!("{p}.ff"), 2, &normed));
        }
    }
    stream.iter().map(|s| layer_norm(store, "tee.norm_out", s)).collect()
}

fn build_tee(cfg: TeeConfig, seed: u64) -> (Tee, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tee = Tee::new(&mut store, cfg, &mut rng).unwrap();
    randomise(&mut store, seed + 1, 0.2);
    (tee, store)
}

/// The oracle's erf is accurate to about 5e-11, which bounds how closely
/// GELU-based paths can agree.
const GELU_TOL: f64 = 1e-9;

fn assert_close(a: &Array2<f64>, b: &Rows, tol: f64) {
    assert_eq!(a.nrows(), b.len());
    for (i, row) in b.iter().enumerate() {
        for (c, &x) in row.iter().enumerate() {
            assert!((a[[i, c]] - x).abs() < tol, "row {i} col {c}: {} vs {x}", a[[i, c]]);
        }
    }
}

fn tee_cfg(m: usize, layers: usize, heads: usize, mode: TimeMode, shift: usize) -> TeeConfig {
    TeeConfig {
        num_marks: m,
        d_emb: 4,
        d_time: 4,
        time_scale: 20.0,
        n_layers: layers,
        n_heads: heads,
        time_mode: mode,
        shift,
        d_ff: 5,
    }
}

#[test]
fn time_encoding_matches_formula() {
    for &(t, d, s) in &[(0.0, 4, 10.0), (2.0 * std::f64::consts::PI * 10.0, 2, 10.0), (3.7, 8, 1e4), (123.4, 6, 50.0)] {
        let lib = time_encode(t, d, s);
        let oracle = encoding(t, d, s);
        for (a, b) in lib.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
    }
    assert_eq!(time_encode(0.0, 4, 10.0), vec![1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn nearby_distinct_times_have_distinct_encodings() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scale = 100.0;
    for _ in 0..1000 {
        let a = rng.random_range(0.0..scale);
        let b = a + rng.random_range(1e-6..scale) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        if a == b {
            continue;
        }
        let (ea, eb) = (time_encode(a, 8, scale), time_encode(b, 8, scale));
        assert!(ea.iter().zip(&eb).any(|(x, y)| x != y), "{a} and {b} collide");
    }
}

#[test]
fn single_head_two_events_by_hand() {
    for shift in [0, 1] {
        let cfg = tee_cfg(2, 1, 1, TimeMode::Concatenate, shift);
        let (tee, store) = build_tee(cfg.clone(), 17);
        let seq = EventSequence::from_indices(vec![0.4, 1.9], &[0, 1], 2).unwrap();
        let h = tee.encode(&store, &seq).unwrap().h;
        let marks = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_close(&h, &tee_oracle(&store, &cfg, &marks, seq.times()), GELU_TOL);
    }
}

#[test]
fn deep_multi_head_encoder_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (mode, shift) in [(TimeMode::Concatenate, 2), (TimeMode::Sum, 0), (TimeMode::Sum, 1), (TimeMode::Concatenate, 3)] {
        let cfg = tee_cfg(3, 2, 2, mode, shift);
        let (tee, store) = build_tee(cfg.clone(), 40 + shift as u64);
        let mut t = 0.0;
        let times: Vec<f64> = (0..6)
            .map(|_| {
                t += rng.random_range(0.1..3.0);
                t
            })
            .collect();
        let idx: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let seq = EventSequence::from_indices(times.clone(), &idx, 3).unwrap();
        let marks: Rows = idx.iter().map(|&i| (0..3).map(|m| f64::from(u8::from(m == i))).collect()).collect();
        let h = tee.encode(&store, &seq).unwrap().h;
        assert_close(&h, &tee_oracle(&store, &cfg, &marks, &times), GELU_TOL);
    }
}

#[test]
fn single_event_with_shift_depends_only_on_its_time() {
    let cfg = tee_cfg(3, 2, 2, TimeMode::Concatenate, 1);
    let (tee, store) = build_tee(cfg, 5);
    let a = EventSequence::from_indices(vec![1.5], &[0], 3).unwrap();
    let b = EventSequence::from_indices(vec![1.5], &[2], 3).unwrap();
    let ea = tee.encode(&store, &a).unwrap();
    assert_eq!(ea.h, tee.encode(&store, &b).unwrap().h);
    assert!(ea.attention.iter().flatten().all(|m| m.iter().all(|&x| x == 0.0)));
}

struct DamOracle {
    y_prime: Rows,
    summary: Rows,
    attention: Vec<Rows>,
    y: Rows,
}

fn dam_oracle(store: &ParamStore<f64>, cfg: &DamConfig, obs: &ObservationSet, events: &[f64]) -> DamOracle {
    let u: Rows = obs
        .observations
        .iter()
        .map(|o| {
            let mut onehot = vec![0.0; cfg.num_vars];
            onehot[o.variable - 1] = 1.0;
            [encoding(o.time, cfg.d_time, cfg.time_scale), onehot, vec![o.value]].concat()
        })
        .collect();
    let np = u.len();
    let hp: Rows = u.iter().map(|x| mlp(store, "dam.h_prime", 2, x)).collect();
    let summary: Rows = (0..np)
        .map(|p| {
            let mut mean = vec![0.0; cfg.d_hprime];
            for row in &hp[..=p] {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x / (p + 1) as f64;
                }
            }
            mlp(store, "dam.g_prime", 2, &mean)
        })
        .collect();
    let hv: Rows = u.iter().map(|x| mlp(store, "dam.h", 2, x)).collect();
    let mut attention = vec![vec![vec![0.0; np]; np]; cfg.n_heads];
    let mut y_prime = Vec::new();
    for p in 0..np {
        let mut merged = Vec::new();
        for (i, att) in attention.iter_mut().enumerate() {
            let wk = param(store, &format!("dam.head{i}.key"));
            let wq: Vec<f64> = param(store, &format!("dam.head{i}.query")).into_iter().map(|r| r[0]).collect();
            let scores: Vec<f64> = (0..=p)
                .map(|k| {
                    let key = vecmat(&[summary[p].clone(), u[k].clone()].concat(), &wk);
                    key.iter().zip(&wq).map(|(a, b)| a * b).sum::<f64>() / (cfg.d_prod as f64).sqrt()
                })
                .collect();
            let vals: Vec<&[f64]> = hv[..=p].iter().map(|v| v.as_slice()).collect();
            let (a, out) = softmax_mix(&scores, &vals);
            att[p][..=p].copy_from_slice(&a);
            merged.extend(out);
        }
        y_prime.push(mlp(store, "dam.g", 2, &merged));
    }
    let mut statics = vec![0.0; cfg.num_statics + 1];
    if let Some(s) = &obs.statics {
        statics[..s.len()].copy_from_slice(s);
        statics[cfg.num_statics] = 1.0;
    }
    let emb = mlp(store, "dam.statics", 2, &statics);
    let y = events
        .iter()
        .map(|&t| {
            let last = obs.observations.iter().rposition(|o| o.time <= t);
            let dynamic = last.map_or_else(|| vec![0.0; cfg.d_g], |p| y_prime[p].clone());
            [dynamic, emb.clone()].concat()
        })
        .collect();
    DamOracle {
        y_prime,
        summary,
        attention,
        y,
    }
}

fn dam_cfg() -> DamConfig {
    DamConfig {
        num_vars: 3,
        num_statics: 2,
        d_time: 4,
        time_scale: 30.0,
        hidden: 5,
        d_hprime: 3,
        d_gprime: 4,
        d_prod: 3,
        n_heads: 2,
        d_h: 3,
        d_g: 4,
        d_static: 2,
    }
}

fn obs(entries: &[(f64, usize, f64)], statics: Option<Vec<f64>>) -> ObservationSet {
    let o = entries
        .iter()
        .map(|&(time, variable, value)| Observation { time, variable, value })
        .collect();
    ObservationSet::new("r", o, statics, None, 3).unwrap()
}

#[test]
fn dam_matches_composed_scalar_oracle() {
    let cfg = dam_cfg();
    let mut store = ParamStore::new();
    let dam = Dam::new(&mut store, cfg.clone(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    randomise(&mut store, 9, 0.3);
    let cases = [
        (obs(&[(0.5, 2, 1.0), (1.0, 1, -0.4), (2.5, 3, 0.8)], Some(vec![0.3, -1.0])), vec![0.2, 1.0, 2.0, 4.0]),
        (obs(&[(0.1, 1, 0.0)], None), vec![0.1, 3.0]),
        (obs(&[(1.0, 1, 0.5), (1.0, 3, -2.0), (1.5, 2, 0.2), (3.0, 1, 1.1), (3.2, 2, 0.0)], Some(vec![1.0, 0.0])), vec![1.0, 3.1]),
    ];
    for (o, events) in cases {
        let want = dam_oracle(&store, &cfg, &o, &events);
        let st = dam.encode(&store, &o, &events).unwrap();
        assert_close(&st.y_prime, &want.y_prime, GELU_TOL);
        assert_close(&st.y, &want.y, GELU_TOL);
        assert_close(&dam.set_summary(&store, &o).unwrap(), &want.summary, GELU_TOL);
        for (a, b) in dam.attention(&store, &o).unwrap().iter().zip(&want.attention) {
            assert_close(a, b, GELU_TOL);
            for (p, row) in a.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-6, "prefix {p}");
            }
        }
    }
}

#[test]
fn equal_keys_split_attention_evenly() {
    let cfg = dam_cfg();
    let mut store = ParamStore::new();
    let dam = Dam::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    randomise(&mut store, 10, 0.3);
    // Identical (t, k, v) content gives identical keys.
    let o = obs(&[(2.0, 1, 0.7), (2.0, 1, 0.7)], None);
    for a in dam.attention(&store, &o).unwrap() {
        assert_eq!(a[[0, 0]], 1.0);
        assert!((a[[1, 0]] - 0.5).abs() < 1e-15 && (a[[1, 1]] - 0.5).abs() < 1e-15);
    }
}

fn constant_model(mode: MarkMode, rates: &[f64]) -> Model<f64> {
    let m = rates.len();
    let mut tee = TeeConfig::new(m);
    tee.d_emb = 4;
    tee.d_time = 4;
    tee.d_ff = 4;
    let mut model = Model::new(ModelConfig {
        tee: Some(tee),
        ..ModelConfig::tee_only(m, mode)
    })
    .unwrap();
    let scale = model.store.find("decoder.log_scale").unwrap();
    let ground = model.store.find("ground.log_scale").unwrap();
    for (i, &r) in rates.iter().enumerate() {
        model.store.value_mut(scale)[[0, i]] = (r / std::f64::consts::LN_2).ln();
    }
    model.store.value_mut(ground)[[0, 0]] = (rates.iter().sum::<f64>() / std::f64::consts::LN_2).ln();
    model
}

fn record(seq: EventSequence) -> Record {
    Record {
        id: "r".into(),
        events: seq,
        observations: None,
        split: Split::Test,
    }
}

fn exact() -> LossOptions {
    LossOptions {
        n_mc: 8,
        integration: Integration::Trapezoid,
        seed: 0,
    }
}

#[test]
fn constant_intensity_gives_poisson_likelihood() {
    let c = 0.37;
    let model = constant_model(MarkMode::MultiClass, &[c]);
    let times = vec![0.3, 1.0, 2.2, 5.9, 6.0];
    let rec = record(EventSequence::from_indices(times.clone(), &[0; 5], 1).unwrap());
    let rep = evaluate_record(&model, &rec, Objective::PpMc, &exact()).unwrap();
    let closed = 5.0 * c.ln() - c * 6.0;
    assert!((rep.ll - closed).abs() < 1e-6, "{} vs {closed}", rep.ll);
    let single = record(EventSequence::from_indices(vec![0.0], &[0], 1).unwrap());
    let rep = evaluate_record(&model, &single, Objective::PpMc, &exact()).unwrap();
    assert_eq!(rep.integral_term, 0.0);
    assert!((rep.ll - c.ln()).abs() < 1e-12);
}

#[test]
fn multilabel_terms_by_hand() {
    let (a, b) = (0.8, 1.7);
    let model = constant_model(MarkMode::MultiLabel, &[a, b]);
    let seq = EventSequence::new("r", vec![0.5, 1.25], vec![vec![1, 0], vec![1, 1]], 2, MarkMode::MultiLabel).unwrap();
    let rep = evaluate_record(&model, &record(seq), Objective::PpMl, &exact()).unwrap();
    let event = a.ln() + a.ln() + b.ln();
    let integral = (a + b) * 1.25;
    let p = (b * (-(a + b) * 0.5f64).exp()).clamp(1e-6, 1.0 - 1e-6);
    let complement = (1.0 - p).ln();
    assert!((rep.event_term - event).abs() < 1e-12);
    assert!((rep.integral_term - integral).abs() < 1e-12);
    assert!((rep.complement_term - complement).abs() < 1e-12);
    assert!((rep.ll - (event - integral + complement)).abs() < 1e-12);
}

#[test]
fn saturated_complement_stays_finite() {
    let model = constant_model(MarkMode::MultiLabel, &[50.0, 50.0]);
    let seq = EventSequence::new("r", vec![1e-4], vec![vec![1, 0]], 2, MarkMode::MultiLabel).unwrap();
    let rep = evaluate_record(&model, &record(seq), Objective::PpMl, &exact()).unwrap();
    assert!(rep.ll.is_finite());
    assert!((rep.complement_term - 1e-6f64.ln()).abs() < 1e-8);
}

#[test]
fn single_mark_multilabel_equals_multiclass() {
    let model = constant_model(MarkMode::MultiLabel, &[0.6]);
    let seq = EventSequence::new("r", vec![0.2, 0.9, 3.0], vec![vec![1]; 3], 1, MarkMode::MultiLabel).unwrap();
    let rec = record(seq);
    let ml = evaluate_record(&model, &rec, Objective::PpMl, &exact()).unwrap();
    let mc = evaluate_record(&model, &rec, Objective::PpMc, &exact()).unwrap();
    assert_eq!(ml.complement_term, 0.0);
    assert!((ml.ll - mc.ll).abs() < 1e-15);
}

#[test]
fn marked_objective_with_uniform_head_and_constant_ground() {
    let mut model = constant_model(MarkMode::MultiClass, &[0.1, 0.2, 0.3, 0.4]);
    for name in ["mark_head.weight", "mark_head.bias"] {
        let id = model.store.find(name).unwrap();
        model.store.value_mut(id).fill(0.0);
    }
    let times = vec![0.5, 1.5, 1.75, 4.0];
    let rec = record(EventSequence::from_indices(times, &[0, 3, 1, 1], 4).unwrap());
    let rep = evaluate_record(&model, &rec, Objective::PpMarked, &exact()).unwrap();
    assert!((rep.mark_term - 4.0 * 0.25f64.ln()).abs() < 1e-12);
    // Ground rate is the summed rate, 1.0.
    assert!((rep.event_term - rep.integral_term - (4.0 * 1.0f64.ln() - 4.0)).abs() < 1e-12);
}

#[test]
fn marked_time_term_ignores_mark_order() {
    let cfg = ModelConfig {
        tee: None,
        dam: Some(dam_cfg()),
        ..ModelConfig::tee_only(3, MarkMode::MultiClass)
    };
    let mut model = Model::<f64>::new(cfg).unwrap();
    randomise(&mut model.store, 12, 0.4);
    let o = obs(&[(0.2, 1, 0.3), (0.9, 2, -0.5), (1.4, 3, 1.2), (2.8, 1, 0.1)], Some(vec![0.5, 0.5]));
    let times = vec![0.3, 1.0, 1.5, 3.0];
    let make = |idx: &[usize]| Record {
        id: "r".into(),
        events: EventSequence::from_indices(times.clone(), idx, 3).unwrap(),
        observations: Some(o.clone()),
        split: Split::Test,
    };
    let opts = LossOptions::training(4);
    let a = evaluate_record(&model, &make(&[0, 1, 2, 2]), Objective::PpMarked, &opts).unwrap();
    let b = evaluate_record(&model, &make(&[2, 0, 2, 1]), Objective::PpMarked, &opts).unwrap();
    assert_eq!(a.event_term, b.event_term);
    assert_eq!(a.integral_term, b.integral_term);
    assert_ne!(a.mark_term, b.mark_term);
}

#[test]
fn autoencoder_uniform_and_perfect_predictions() {
    let mut model = constant_model(MarkMode::MultiClass, &[0.5, 0.5]);
    let rec = record(EventSequence::from_indices(vec![1.0, 2.0, 3.0, 4.0], &[0, 0, 0, 0], 2).unwrap());
    let w = model.store.find("ae_head.weight").unwrap();
    model.store.value_mut(w).fill(0.0);
    let rep = evaluate_record(&model, &rec, Objective::Ae, &exact()).unwrap();
    assert!((rep.loss_per_event() - std::f64::consts::LN_2).abs() < 1e-12);
    let b = model.store.find("ae_head.bias").unwrap();
    model.store.value_mut(b)[[0, 0]] = 40.0;
    model.store.value_mut(b)[[0, 1]] = -40.0;
    let rep = evaluate_record(&model, &rec, Objective::Ae, &exact()).unwrap();
    assert!(rep.loss_per_event() < 1e-30);
}

#[test]
fn event_term_splits_into_mark_cross_entropy_and_total_intensity() {
    let mut tee = TeeConfig::new(3);
    tee.d_emb = 4;
    tee.d_time = 4;
    tee.d_ff = 4;
    tee.shift = 0;
    let mut model = Model::<f64>::new(ModelConfig {
        tee: Some(tee),
        ..ModelConfig::tee_only(3, MarkMode::MultiClass)
    })
    .unwrap();
    randomise(&mut model.store, 31, 0.5);
    let rec = record(EventSequence::from_indices(vec![0.4, 1.1, 1.3, 2.9, 3.3], &[2, 0, 0, 1, 2], 3).unwrap());
    let rep = evaluate_record(&model, &rec, Objective::PpMc, &exact()).unwrap();
    let pred = predict_next_marks(&model, &rec, Objective::PpMc).unwrap();

    // Totals at each event from the preceding state; the first event uses
    // the zero-history state.
    let z = model.embeddings(&rec).unwrap();
    let zero = Array2::zeros((1, z.ncols()));
    let first = model.decoder.decode(&model.store, &zero);
    let total_first: f64 = first.intensities(0, rec.events.times()[0]).iter().sum();
    let p_first = first.intensity(0, 2, rec.events.times()[0]) / total_first;
    let mut log_totals = total_first.ln();
    let mut cross_entropy = p_first.ln();
    for j in 1..rec.events.len() {
        let st = model.decoder.decode(&model.store, &z.slice(ndarray::s![j - 1..j, ..]).to_owned());
        let dt = rec.events.times()[j] - rec.events.times()[j - 1];
        log_totals += st.intensities(0, dt).iter().sum::<f64>().ln();
        let target = rec.events.class_of(j);
        cross_entropy += pred.scores[j - 1][target].ln();
    }
    assert!((rep.event_term - (cross_entropy + log_totals)).abs() < 1e-10);
}

#[test]
fn intensity_scores_normalise_for_multiclass() {
    let model = constant_model(MarkMode::MultiClass, &[0.2, 0.6]);
    let rec = record(EventSequence::from_indices(vec![1.0, 2.0], &[0, 1], 2).unwrap());
    let p = predict_next_marks(&model, &rec, Objective::PpMc).unwrap();
    assert!((p.scores[0][0] - 0.25).abs() < 1e-12 && (p.scores[0][1] - 0.75).abs() < 1e-12);
    let one = constant_model(MarkMode::MultiClass, &[0.9]);
    let rec = record(EventSequence::from_indices(vec![1.0, 2.0, 2.5], &[0, 0, 0], 1).unwrap());
    for s in predict_next_marks(&one, &rec, Objective::PpMc).unwrap().scores {
        assert_eq!(s, vec![1.0]);
    }
}

#[test]
fn decoder_state_matches_formula() {
    let mut tee = TeeConfig::new(2);
    tee.d_emb = 4;
    tee.d_time = 4;
    tee.d_ff = 4;
    let mut model = Model::<f64>::new(ModelConfig {
        tee: Some(tee),
        ..ModelConfig::tee_only(2, MarkMode::MultiClass)
    })
    .unwrap();
    randomise(&mut model.store, 2, 0.6);
    let z = Array2::from_shape_fn((3, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).sin());
    let st = model.decoder.decode(&model.store, &z);
    let w = param(&model.store, "decoder.w_h");
    let s = &param(&model.store, "decoder.log_scale")[0];
    for r in 0..3 {
        let pre = vecmat(&z.row(r).to_vec(), &w);
        for m in 0..2 {
            let (mu, eta, gamma) = (gelu(pre[m]), gelu(pre[2 + m]), gelu(pre[4 + m]));
            for dt in [0.0, 0.3, 2.0] {
                let want = s[m].exp() * softplus(mu + (eta - mu) * (-gamma * dt).exp());
                assert!((st.intensity(r, m, dt) - want).abs() < GELU_TOL);
            }
        }
    }
}

fn brute_knn(emb: &[Vec<f64>], dens: &[Vec<f64>], labels: &[u8], k: usize) -> f64 {
    let mut totals = Vec::new();
    for i in 0..emb.len() {
        if labels[i] == 0 {
            continue;
        }
        // Full pairwise distance matrix row, then k passes of minimum
        // selection with index tie-break.
        let dist: Vec<f64> = emb
            .iter()
            .map(|e| e.iter().zip(&emb[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect();
        let mut taken = vec![false; emb.len()];
        taken[i] = true;
        let mut sum = 0.0;
        for _ in 0..k {
            let mut best = None;
            for j in 0..emb.len() {
                if !taken[j] && best.is_none_or(|b: usize| dist[j] < dist[b]) {
                    best = Some(j);
                }
            }
            let j = best.unwrap();
            taken[j] = true;
            let dot: f64 = dens[i].iter().zip(&dens[j]).map(|(a, b)| a * b).sum();
            let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            sum += dot / (n(&dens[i]) * n(&dens[j]));
        }
        totals.push(sum / k as f64);
    }
    totals.iter().sum::<f64>() / totals.len() as f64
}

#[test]
fn knn_two_clusters_match_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut dens = Vec::new();
    let mut labels = Vec::new();
    for i in 0..30 {
        let c = i % 2;
        let centre = if c == 0 { [1.0, 0.2, 0.1] } else { [0.1, 0.3, 1.2] };
        dens.push(centre.iter().map(|x| x + rng.random_range(0.0..0.3)).collect::<Vec<f64>>());
        labels.push(c as u8);
    }
    let got = knn_pattern_similarity(&dens, &dens, &labels, 10).unwrap();
    assert!((got.value - brute_knn(&dens, &dens, &labels, 10)).abs() < 1e-9);
    assert_eq!(got.per_record.len(), 15);
}

#[test]
fn multi_hot_density_matches_naive_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let len = rng.random_range(1..20);
        let mut t = 0.0;
        let times: Vec<f64> = (0..len)
            .map(|_| {
                t += rng.random_range(0.01..2.0);
                t
            })
            .collect();
        let marks: Vec<Vec<u8>> = (0..len)
            .map(|_| {
                let mut v: Vec<u8> = (0..4).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
                v[rng.random_range(0..4)] = 1;
                v
            })
            .collect();
        let seq = EventSequence::new("r", times.clone(), marks.clone(), 4, MarkMode::MultiLabel).unwrap();
        let d = measurement_density("r", &seq).unwrap();
        for m in 0..4 {
            let mut count = 0;
            for row in &marks {
                if row[m] == 1 {
                    count += 1;
                }
            }
            assert_eq!(d.density[m], count as f64 / times[len - 1]);
        }
    }
}

#[test]
fn density_logistic_probe_separates_ehr_classes() {
    let data = simulate_ehr_like(&EhrConfig::new(400, 5, 13)).unwrap();
    let features = |s: Split| -> (Vec<Vec<f64>>, Vec<u8>) {
        data.split(s)
            .filter_map(|r| {
                let d = measurement_density(&r.id, &r.events).ok()?;
                Some((d.density, r.label()?))
            })
            .unzip()
    };
    let (x, y) = features(Split::Train);
    let dim = x[0].len();
    let mut w = vec![0.0; dim + 1];
    for _ in 0..2000 {
        let mut g = vec![0.0; dim + 1];
        for (xi, &yi) in x.iter().zip(&y) {
            let z = w[dim] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - f64::from(yi);
            for (gj, xj) in g.iter_mut().zip(xi) {
                *gj += err * xj;
            }
            g[dim] += err;
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= 0.5 * gj / x.len() as f64;
        }
    }
    let (xt, yt) = features(Split::Test);
    let scores: Vec<f64> = xt.iter().map(|xi| w[dim] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
    let t: Vec<bool> = yt.iter().map(|&l| l == 1).collect();
    let a = auroc(&scores, &t).unwrap();
    assert!(a > 0.5, "held-out AUROC {a}");
}
