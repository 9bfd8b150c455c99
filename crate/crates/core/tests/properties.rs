use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teehr::analysis::{aggregate_attention, knn_pattern_similarity, measurement_density, AttentionRecord};
use teehr::dam::Dam;
use teehr::data::io::{event_line, load_event_file, LoadOptions};
use teehr::data::{
    build_pattern_vocab, extract_lab_events, simulate_hawkes, Dataset, EventSequence, EventVocabulary, HawkesSpec,
    MarkMode, Observation, ObservationSet, Record, Split,
};
use teehr::loss::{evaluate_record, LossOptions, Objective};
use teehr::metrics::auroc;
use teehr::nn::ParamStore;
use teehr::tee::Tee;
use teehr::train::cosine_lr;
use teehr::{DamConfig, IntensityState, Integration, Model, ModelConfig, TeeConfig, TimeMode};

fn times_from(gaps: &[f64]) -> Vec<f64> {
    gaps.iter()
        .scan(0.0, |t, g| {
            *t += g;
            Some(*t)
        })
        .collect()
}

fn multi_hot(m: usize) -> impl Strategy<Value = Vec<u8>> {
    (prop::collection::vec(0u8..2, m), 0..m).prop_map(|(mut v, forced)| {
        v[forced] = 1;
        v
    })
}

fn ml_sequence(m: usize, max_len: usize) -> impl Strategy<Value = EventSequence> {
    (1..=max_len).prop_flat_map(move |len| {
        (prop::collection::vec(0.01f64..3.0, len), prop::collection::vec(multi_hot(m), len)).prop_map(
            move |(gaps, marks)| EventSequence::new("p", times_from(&gaps), marks, m, MarkMode::MultiLabel).unwrap(),
        )
    })
}

fn observations(v: usize, max_len: usize) -> impl Strategy<Value = ObservationSet> {
    prop::collection::vec((0.0f64..2.0, 1..=v, -2.0f64..2.0), 0..=max_len).prop_map(move |raw| {
        // Quantised gaps so that tied times occur.
        let mut t = 0.0;
        let obs = raw
            .into_iter()
            .map(|(g, variable, value)| {
                t += (g * 2.0).floor() / 2.0;
                Observation { time: t, variable, value }
            })
            .collect();
        ObservationSet::new("p", obs, Some(vec![0.5]), None, v).unwrap()
    })
}

fn small_tee(m: usize, layers: usize, heads: usize, mode: TimeMode, shift: usize) -> TeeConfig {
    TeeConfig {
        num_marks: m,
        d_emb: 4,
        d_time: 4,
        time_scale: 30.0,
        n_layers: layers,
        n_heads: heads,
        time_mode: mode,
        shift,
        d_ff: 5,
    }
}

fn small_dam(v: usize) -> DamConfig {
    DamConfig {
        num_vars: v,
        num_statics: 1,
        d_time: 4,
        time_scale: 30.0,
        hidden: 4,
        d_hprime: 3,
        d_gprime: 3,
        d_prod: 3,
        n_heads: 2,
        d_h: 3,
        d_g: 3,
        d_static: 2,
    }
}

fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        p.value.mapv_inplace(|x| x + rng.random_range(-0.5..0.5));
    }
}

fn mann_whitney(scores: &[f64], targets: &[bool]) -> f64 {
    let mut u = 0.0;
    let (mut pos, mut neg) = (0.0, 0.0);
    for (i, &ti) in targets.iter().enumerate() {
        if !ti {
            neg += 1.0;
            continue;
        }
        pos += 1.0;
        for (j, &tj) in targets.iter().enumerate() {
            if !tj {
                u += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    u / (pos * neg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auroc_is_the_mann_whitney_statistic(
        pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..60)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 5.0).collect();
        let targets: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(targets.iter().any(|&t| t) && targets.iter().any(|&t| !t));
        let a = auroc(&scores, &targets).unwrap();
        prop_assert!((a - mann_whitney(&scores, &targets)).abs() < 1e-12);
    }

    #[test]
    fn knn_ps_ignores_density_scale(
        seed in any::<u64>(),
        n in 12usize..40,
        c in 1e-3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let dens: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        labels[0] = 1;
        let scaled: Vec<Vec<f64>> = dens.iter().map(|d| d.iter().map(|x| x * c).collect()).collect();
        let a = knn_pattern_similarity(&emb, &dens, &labels, 10).unwrap().value;
        let b = knn_pattern_similarity(&emb, &scaled, &labels, 10).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn density_adds_over_mark_disjoint_parts(seq in ml_sequence(5, 25), split in 1usize..5) {
        // The last event carries a mark from each side so both parts share t_L.
        let len = seq.len();
        let mut marks = seq.marks().to_vec();
        marks[len - 1][0] = 1;
        marks[len - 1][4] = 1;
        let whole = seq.with_marks(marks.clone()).unwrap();
        let part = |keep: &dyn Fn(usize) -> bool| {
            let (t, mk): (Vec<f64>, Vec<Vec<u8>>) = whole
                .times()
                .iter()
                .zip(&marks)
                .map(|(&t, row)| (t, row.iter().enumerate().map(|(m, &b)| if keep(m) { b } else { 0 }).collect::<Vec<u8>>()))
                .filter(|(_, row)| row.contains(&1))
                .unzip();
            EventSequence::new("p", t, mk, 5, MarkMode::MultiLabel).unwrap()
        };
        let a = part(&|m| m < split);
        let b = part(&|m| m >= split);
        let (dw, da, db) = (
            measurement_density("w", &whole).unwrap().density,
            measurement_density("a", &a).unwrap().density,
            measurement_density("b", &b).unwrap().density,
        );
        for m in 0..5 {
            prop_assert!((dw[m] - (da[m] + db[m])).abs() < 1e-12);
        }
    }

    #[test]
    fn tee_attention_rows_are_stochastic_or_empty(
        seed in any::<u64>(),
        len in 1usize..9,
        shift in 0usize..4,
        layers in 1usize..3,
        heads in prop::sample::select(vec![1usize, 2, 4]),
        sum in any::<bool>(),
    ) {
        let mode = if sum { TimeMode::Sum } else { TimeMode::Concatenate };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tee = Tee::new(&mut store, small_tee(3, layers, heads, mode, shift), &mut rng).unwrap();
        let times: Vec<f64> = times_from(&(0..len).map(|_| rng.random_range(0.0..4.0)).collect::<Vec<_>>());
        let idx: Vec<usize> = (0..len).map(|_| rng.random_range(0..3)).collect();
        let enc = tee.encode::<f64>(&store, &EventSequence::from_indices(times, &idx, 3).unwrap()).unwrap();
        for layer in &enc.attention {
            for a in layer {
                for (j, row) in a.rows().into_iter().enumerate() {
                    if j < shift {
                        prop_assert!(row.iter().all(|&x| x == 0.0));
                    } else {
                        prop_assert!((row.sum() - 1.0).abs() < 1e-5);
                        prop_assert!(row.iter().skip(j + 1 - shift).all(|&x| x == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn dam_is_causal_stochastic_and_tie_invariant(o in observations(3, 10), seed in any::<u64>(), cut in 0.0f64..6.0) {
        let mut store = ParamStore::new();
        let dam = Dam::new(&mut store, small_dam(3), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        jitter(&mut store, seed ^ 1);
        let events = vec![0.0, cut, cut + 1.0, 10.0];

        for a in dam.attention(&store, &o).unwrap() {
            for row in a.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }

        // Observations after an event never reach it.
        let base = dam.encode(&store, &o, &events).unwrap().y;
        let mut later = o.clone();
        for ob in later.observations.iter_mut().filter(|ob| ob.time > cut) {
            ob.value += 1.0;
            ob.variable = ob.variable % 3 + 1;
        }
        let moved = dam.encode(&store, &later, &events).unwrap().y;
        let visible = events.iter().filter(|&&t| t <= cut).count();
        for j in 0..visible {
            prop_assert_eq!(base.row(j), moved.row(j));
        }

        // Reordering observations that share a timestamp leaves event-time
        // states unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = o.clone();
        let obs = &mut shuffled.observations;
        let mut i = 0;
        while i < obs.len() {
            let j = obs[i..].iter().position(|x| x.time != obs[i].time).map_or(obs.len(), |d| i + d);
            obs[i..j].shuffle(&mut rng);
            i = j;
        }
        let permuted = dam.encode(&store, &shuffled, &events).unwrap().y;
        for (a, b) in base.iter().zip(permuted.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn intensity_is_positive(
        mu in -30.0f64..30.0,
        eta in -30.0f64..30.0,
        gamma in 0.0f64..20.0,
        s in -5.0f64..5.0,
        dt in 0.0f64..50.0,
    ) {
        let st = IntensityState {
            mu: Array2::from_elem((1, 1), mu),
            eta: Array2::from_elem((1, 1), eta),
            gamma: Array2::from_elem((1, 1), gamma),
            scale: vec![s.exp()],
        };
        let l = st.intensity(0, 0, dt);
        prop_assert!(l > 0.0 && l.is_finite());
    }

    #[test]
    fn multilabel_loss_dominates_multiclass_loss(seq in ml_sequence(3, 8), seed in any::<u64>()) {
        let mut tee = TeeConfig::new(3);
        tee.d_emb = 4;
        tee.d_time = 4;
        tee.d_ff = 4;
        tee.n_layers = 1;
        let mut model = Model::<f64>::new(ModelConfig { tee: Some(tee), ..ModelConfig::tee_only(3, MarkMode::MultiLabel) }).unwrap();
        jitter(&mut model.store, seed);
        let rec = Record { id: "p".into(), events: seq, observations: None, split: Split::Test };
        let opts = LossOptions::training(seed);
        let ml = evaluate_record(&model, &rec, Objective::PpMl, &opts).unwrap();
        let mc = evaluate_record(&model, &rec, Objective::PpMc, &opts).unwrap();
        prop_assert!(ml.complement_term <= 0.0);
        prop_assert!(-ml.ll >= -mc.ll);
    }

    #[test]
    fn canonical_event_files_round_trip(seqs in prop::collection::vec(ml_sequence(4, 6), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let text: String = seqs.iter().enumerate().map(|(i, s)| event_line(&format!("r{i}"), s) + "\n").collect();
        std::fs::write(&path, &text).unwrap();
        let ds = load_event_file(&path, LoadOptions::new(MarkMode::MultiLabel)).unwrap();
        let again: String = ds.records.iter().map(|r| event_line(&r.id, &r.events) + "\n").collect();
        prop_assert_eq!(again, text);
    }

    #[test]
    fn lab_events_ignore_order_within_a_bin(o in observations(4, 15), seed in any::<u64>()) {
        let vocab = EventVocabulary::Patterns(vec![vec![1], vec![1, 2], vec![3, 4]]);
        let base = extract_lab_events(&o, &vocab, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = o.clone();
        let obs = &mut shuffled.observations;
        let mut i = 0;
        while i < obs.len() {
            let bin = obs[i].time.floor();
            let j = obs[i..].iter().position(|x| x.time.floor() != bin).map_or(obs.len(), |d| i + d);
            // Only equal-time entries may be reordered without breaking time order.
            let mut k = i;
            while k < j {
                let e = obs[k..j].iter().position(|x| x.time != obs[k].time).map_or(j, |d| k + d);
                obs[k..e].shuffle(&mut rng);
                k = e;
            }
            i = j;
        }
        prop_assert_eq!(extract_lab_events(&shuffled, &vocab, 1.0), base);
        let per_var = EventVocabulary::PerVariable(vec![1, 3]);
        prop_assert_eq!(extract_lab_events(&shuffled, &per_var, 1.0), extract_lab_events(&o, &per_var, 1.0));
    }

    #[test]
    fn pattern_vocabulary_ignores_record_order(sets in prop::collection::vec(observations(4, 12), 1..12), seed in any::<u64>()) {
        let mut records: Vec<Record> = sets
            .into_iter()
            .enumerate()
            .map(|(i, o)| Record {
                id: format!("r{i}"),
                events: EventSequence::empty(1, MarkMode::MultiLabel),
                observations: Some(o),
                split: Split::Train,
            })
            .collect();
        let make = |records: Vec<Record>| Dataset { records, num_marks: 1, num_vars: 4, num_statics: 1, mode: MarkMode::MultiLabel };
        let a = build_pattern_vocab(&make(records.clone()), 5, 1.0);
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = build_pattern_vocab(&make(records), 5, 1.0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn aggregation_bounds_and_replication(seed in any::<u64>(), n in 1usize..6, copies in 1usize..4, eps in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<AttentionRecord> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..7);
                let shift = rng.random_range(0..3);
                let mut a = Array2::zeros((len, len));
                for j in 0..len {
                    let keys = (j + 1).saturating_sub(shift);
                    if keys == 0 {
                        continue;
                    }
                    let w: Vec<f64> = (0..keys).map(|_| rng.random_range(0.0..1.0)).collect();
                    let z: f64 = w.iter().sum();
                    for (k, x) in w.iter().enumerate() {
                        a[[j, k]] = x / z;
                    }
                }
                AttentionRecord {
                    id: format!("r{i}"),
                    attention: a,
                    marks: (0..len).map(|_| { let mut v = vec![0u8; 3]; v[rng.random_range(0..3)] = 1; v }).collect(),
                    shift,
                }
            })
            .collect();
        let rep = aggregate_attention(&recs, 3, "g", eps).unwrap();
        for m in 0..3 {
            for k in 0..3 {
                prop_assert!(rep.c_agg[m][k] >= 0.0);
                match rep.i_agg[m][k] {
                    Some(v) => prop_assert!((0.0..=1.0).contains(&v) && rep.c_agg[m][k] > 0.0),
                    None => prop_assert_eq!(rep.c_agg[m][k], 0.0),
                }
            }
        }
        let many: Vec<AttentionRecord> = recs.iter().cycle().take(n * copies).cloned().collect();
        let rep2 = aggregate_attention(&many, 3, "g", eps).unwrap();
        for m in 0..3 {
            for k in 0..3 {
                prop_assert!((rep.c_agg[m][k] - rep2.c_agg[m][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_schedule_endpoints_are_exact(lr0 in 1e-6f64..1.0, frac in 0.0f64..1.0, period in 1usize..500) {
        let lr_min = lr0 * frac;
        prop_assert_eq!(cosine_lr(lr0, lr_min, 0, period), lr0);
        prop_assert_eq!(cosine_lr(lr0, lr_min, period, period), lr_min);
        let mid = cosine_lr(lr0, lr_min, period / 2, period);
        prop_assert!(mid >= lr_min && mid <= lr0);
    }

    #[test]
    fn simulation_and_integration_are_deterministic(seed in any::<u64>(), span in 0.1f64..3.0) {
        let spec = HawkesSpec::univariate(0.5, 0.4, 2.0, 20.0);
        prop_assert_eq!(simulate_hawkes(&spec, seed).unwrap(), simulate_hawkes(&spec, seed).unwrap());
        let st = IntensityState {
            mu: Array2::from_elem((1, 1), 0.3),
            eta: Array2::from_elem((1, 1), 1.2),
            gamma: Array2::from_elem((1, 1), 0.7),
            scale: vec![1.0],
        };
        for scheme in [Integration::Stratified, Integration::Uniform] {
            prop_assert_eq!(st.integral(0, 0, span, 20, scheme, seed), st.integral(0, 0, span, 20, scheme, seed));
        }
    }
}
