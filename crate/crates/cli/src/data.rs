use anyhow::Context;
use teehr::data::adapters::{from_multilabel_json, from_thp_json};
use teehr::data::{save_dataset_dir_annotated, simulate_ehr_like, simulate_hawkes_dataset, Dataset, EhrConfig, HawkesSpec, Split};

use crate::args::{ConvertArgs, EhrArgs, HawkesArgs};
use crate::common::{save_meta, say, write_json, Provenance};
use crate::exit::Invalid;

fn parse_list(text: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Invalid(format!("{what}: {v:?} is not a number")).into())
        })
        .collect()
}

/// `m x m` matrix from `a,b;c,d`; a single value fills every entry.
pub fn parse_matrix(text: &str, m: usize, what: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    let rows = text
        .split(';')
        .map(|r| parse_list(r, what))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if rows.len() == 1 && rows[0].len() == 1 {
        return Ok(vec![vec![rows[0][0]; m]; m]);
    }
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Invalid(format!("{what} must be {m}x{m} to match --mu")).into());
    }
    Ok(rows)
}

fn save(data: &Dataset, out: &std::path::Path, prov: &Provenance) -> anyhow::Result<()> {
    save_dataset_dir_annotated(out, data, Some(&prov.header()))
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    save_meta(out, data, prov)
}

pub fn simulate_hawkes(args: &HawkesArgs) -> anyhow::Result<()> {
    let mu = parse_list(&args.mu, "--mu")?;
    let m = mu.len();
    let spec = HawkesSpec {
        alpha: parse_matrix(&args.alpha, m, "--alpha")?,
        beta: parse_matrix(&args.beta, m, "--beta")?,
        mu,
        t_max: args.tmax,
    };
    if let Some(w) = args.group_width {
        if !(w > 0.0) {
            return Err(Invalid(format!("--group-width must be positive, got {w}")).into());
        }
    }
    let prov = Provenance::new("simulate hawkes", args, Some(args.seed));
    let mut data = simulate_hawkes_dataset(&spec, args.n, args.seed)?;
    if let Some(w) = args.group_width {
        data.group_within(w);
    }
    save(&data, &args.out, &prov)?;
    let truth = serde_json::json!({
        "fingerprint": prov.fingerprint,
        "seed": prov.seed,
        "spec": spec,
        "spectral_radius": spec.spectral_radius(),
        "stationary_rates": spec.stationary_rates(),
        "group_width": args.group_width,
    });
    write_json(&args.out.join("truth.json"), &truth)?;
    say(&format!("wrote {} sequences to {}", data.records.len(), args.out.display()));
    Ok(())
}

pub fn simulate_ehr(args: &EhrArgs) -> anyhow::Result<()> {
    let rates = parse_list(&args.panel_rate, "--panel-rate")?;
    let [r0, r1] = rates[..] else {
        return Err(Invalid("--panel-rate takes two values".into()).into());
    };
    let cfg = EhrConfig {
        n_patients: args.n,
        num_vars: args.vars,
        horizon: args.horizon,
        prevalence: args.prevalence,
        panel_rate: [r0, r1],
        frailty_shape: args.frailty_shape,
        value_shift: args.value_shift,
        seed: args.seed,
    };
    if args.n == 0 || args.vars == 0 || !(args.horizon > 0.0) || !(0.0..=1.0).contains(&args.prevalence) {
        return Err(Invalid("need --n > 0, --vars > 0, --horizon > 0 and --prevalence in [0, 1]".into()).into());
    }
    let prov = Provenance::new("simulate ehr", args, Some(args.seed));
    let data = simulate_ehr_like(&cfg)?;
    save(&data, &args.out, &prov)?;
    let truth = serde_json::json!({
        "fingerprint": prov.fingerprint,
        "seed": prov.seed,
        "config": cfg,
        "truth": cfg.truth(),
    });
    write_json(&args.out.join("truth.json"), &truth)?;
    say(&format!("wrote {} patients to {}", data.records.len(), args.out.display()));
    Ok(())
}

pub fn convert(args: &ConvertArgs) -> anyhow::Result<()> {
    let files: Vec<_> = [(&args.train, Split::Train), (&args.dev, Split::Validation), (&args.test, Split::Test)]
        .into_iter()
        .filter_map(|(p, s)| p.as_ref().map(|p| (p, s)))
        .collect();
    if files.is_empty() {
        return Err(Invalid("give at least one of --train, --dev, --test".into()).into());
    }
    let mut all: Option<Dataset> = None;
    for (path, split) in files {
        let part = match args.format.as_str() {
            "thp" => from_thp_json(path)?,
            "multilabel" => from_multilabel_json(path, all.as_ref().map(|d| d.num_marks).or(args.num_marks), split)?,
            other => return Err(Invalid(format!("unknown format {other:?}")).into()),
        };
        match &mut all {
            None => all = Some(part),
            Some(d) if d.num_marks != part.num_marks => {
                anyhow::bail!(
                    "{} has {} marks but earlier files have {}",
                    path.display(),
                    part.num_marks,
                    d.num_marks
                )
            }
            Some(d) => d.records.extend(part.records),
        }
    }
    let mut data = all.expect("at least one file");
    if let Some(w) = args.group_width {
        if !(w > 0.0) {
            return Err(Invalid(format!("--group-width must be positive, got {w}")).into());
        }
        data.group_within(w);
    }
    let prov = Provenance::new("convert", args, None);
    save(&data, &args.out, &prov)?;
    say(&format!("wrote {} records to {}", data.records.len(), args.out.display()));
    Ok(())
}
