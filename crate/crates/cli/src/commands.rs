use std::path::PathBuf;

use camsynth::analysis::{fit_outcome_chain, fit_weight_chain, max_time, prepare, resample_size, run_power, stage_seed, two_step_km, two_step_lm};
use camsynth::data::{write_csv, MixedDataset, OutcomeColumns, OutcomeMode, StudyData};
use camsynth::effect::{posterior_effect, quantile, time_grid};
use camsynth::equivalence::cv_classifier_auc;
use camsynth::gof::{gof_sample, qq_export, qq_max_deviation};
use camsynth::rng::rng_from_seed;
use camsynth::simgen::{gen_registry, gen_selection, generate, hr_transform_dataset, RegistrySpec, ScenarioKind, ScenarioSpec, SelectionMode};
use camsynth::weights::{compute_weights, resample_uniform, ImportanceWeightSet};
use serde_json::{json, Value};

use crate::artifacts::{csv_provenance, Out};
use crate::config::{DataSection, Loaded, OutcomeSection, StudyConfig};
use crate::error::CliError;

pub const WEIGHT_DRAWS: &str = "chain_weights.jsonl";
pub const OUTCOME_DRAWS: &str = "chain_outcomes.jsonl";

type Written = Result<Vec<PathBuf>, CliError>;

fn out<'a>(loaded: &'a Loaded, command: &'static str) -> Out<'a> {
    Out { loaded, command }
}

fn with_outcomes(loaded: &Loaded, study: &StudyData) -> Result<(), CliError> {
    if loaded.pipeline().mode == OutcomeMode::None || !study.has_outcomes() {
        return Err(CliError::Config("this command needs an outcome: set [data.outcome] mode".into()));
    }
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

fn dataset_csv(ds: &MixedDataset, outcome: Option<&OutcomeColumns>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_csv(ds, outcome, &mut buf).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(buf)
}

pub fn fit(loaded: &Loaded) -> Written {
    let o = out(loaded, "fit");
    let study = loaded.study()?;
    let cfg = loaded.pipeline();
    let data = prepare(&study, cfg.standardize);
    let wchain = fit_weight_chain(&data, &cfg, loaded.seed)?;
    let mut written = vec![o.draws(WEIGHT_DRAWS, &wchain)?];
    let mut diag = json!({"weight_chain": {"draws": wchain.draws.len(), "diagnostics": wchain.diagnostics}});
    if cfg.mode != OutcomeMode::None && study.has_outcomes() {
        let ochain = fit_outcome_chain(&data, &cfg, loaded.seed)?;
        written.push(o.draws(OUTCOME_DRAWS, &ochain)?);
        diag["outcome_chain"] = json!({"draws": ochain.draws.len(), "diagnostics": ochain.diagnostics});
    }
    written.push(o.json("fit.json", &diag)?);
    Ok(written)
}

fn load_weights(o: &Out, study: &StudyData) -> Result<ImportanceWeightSet, CliError> {
    let draws = o.read_draws(WEIGHT_DRAWS)?;
    compute_weights(&draws, &study.rwd.provenance).map_err(|e| CliError::analysis("weights", e))
}

pub fn weights(loaded: &Loaded) -> Written {
    let o = out(loaded, "weights");
    let study = loaded.study()?;
    let ws = load_weights(&o, &study)?;
    let size = resample_size(study.treatment.len(), loaded.cfg.analysis.resample_ratio);
    let rows = ws.w.iter().zip(&ws.provenance).enumerate().map(|(i, (w, p))| vec![i.to_string(), p.source.clone(), p.row.to_string(), format!("{w:?}")]);
    let body = csv_bytes(&["index", "source", "source_row", "weight"], rows)?;
    Ok(vec![
        o.csv("weights.csv", &body)?,
        o.json("weights.json", &json!({"draws": ws.draws, "n2": ws.w.len(), "diagnostics": ws.diagnostics(size)}))?,
    ])
}

pub fn resample(loaded: &Loaded) -> Written {
    let o = out(loaded, "resample");
    let study = loaded.study()?;
    let ws = load_weights(&o, &study)?;
    let size = resample_size(study.treatment.len(), loaded.cfg.analysis.resample_ratio);
    let mut rng = rng_from_seed(stage_seed(loaded.seed, "resample"));
    let (idx, synth) = ws.resample(&study.rwd, size, &mut rng).map_err(|e| CliError::analysis("resample", e))?;
    let body = dataset_csv(&synth, loaded.outcome_columns()?.as_ref())?;
    Ok(vec![o.csv("synthetic_control.csv", &body)?, o.json("resample.json", &json!({"size": size, "indices": idx}))?])
}

fn load_indices(o: &Out, n2: usize) -> Result<Vec<usize>, CliError> {
    let v = o.read_json("resample.json", "resample")?;
    let idx: Vec<usize> = serde_json::from_value(v["indices"].clone()).map_err(|e| CliError::Input(format!("resample.json: {e}")))?;
    if idx.iter().any(|&i| i >= n2) {
        return Err(CliError::Input("resample.json indexes rows outside the RWD".into()));
    }
    Ok(idx)
}

pub fn validate(loaded: &Loaded) -> Written {
    let o = out(loaded, "validate");
    let study = loaded.study()?;
    let cfg = loaded.pipeline();
    let idx = load_indices(&o, study.rwd.len())?;
    let data = prepare(&study, cfg.standardize);
    let fail = |e| CliError::analysis("validate", e);
    let report = cv_classifier_auc(&data.treatment, &data.rwd.select(&idx), &cfg.equivalence, stage_seed(loaded.seed, "validate")).map_err(fail)?;
    let random = if cfg.compare_random {
        let mut rng = rng_from_seed(stage_seed(loaded.seed, "resample-random"));
        let ridx = resample_uniform(study.rwd.len(), idx.len(), &mut rng);
        Some(cv_classifier_auc(&data.treatment, &data.rwd.select(&ridx), &cfg.equivalence, stage_seed(loaded.seed, "validate-random")).map_err(fail)?)
    } else {
        None
    };
    Ok(vec![o.json("equivalence.json", &json!({"importance_resampled": report, "random": random}))?])
}

pub fn effect(loaded: &Loaded) -> Written {
    let o = out(loaded, "effect");
    let study = loaded.study()?;
    with_outcomes(loaded, &study)?;
    let cfg = loaded.pipeline();
    let draws = o.read_draws(OUTCOME_DRAWS)?;
    let survival = cfg.mode == OutcomeMode::Survival;
    let grid = if survival { time_grid(2.0 * max_time(&study), cfg.grid_points) } else { vec![] };
    let summary = posterior_effect(&draws, cfg.effect_mode(), &grid, cfg.level).map_err(|e| CliError::analysis("effect", e))?;
    let synth = study.rwd.select(&load_indices(&o, study.rwd.len())?);
    let mut result = json!({"CA-PPMx": summary});
    if survival {
        result["IS-KM"] = json!(two_step_km(&study.treatment, &synth)?);
    } else {
        result["IS-LM"] = json!(two_step_lm(&study.treatment, &synth)?);
    }
    let mut written = vec![o.json("effect.json", &result)?];
    if let Some(curve) = &summary.hr_curve {
        let rows = curve.iter().map(|p| vec![format!("{:?}", p.t), format!("{:?}", p.median), format!("{:?}", p.lo), format!("{:?}", p.hi)]);
        written.push(o.csv("hr_curve.csv", &csv_bytes(&["t", "median", "lo", "hi"], rows)?)?);
    }
    Ok(written)
}

pub fn gof(loaded: &Loaded) -> Written {
    let o = out(loaded, "gof");
    let study = loaded.study()?;
    with_outcomes(loaded, &study)?;
    let draws = o.read_draws(OUTCOME_DRAWS)?;
    let want = loaded.cfg.analysis.gof_draws.clamp(1, draws.len().max(1));
    let picked: Vec<_> = (0..want).map(|i| draws[i * draws.len() / want].clone()).collect();
    let data = prepare(&study, loaded.cfg.analysis.standardize);
    let mut rng = rng_from_seed(stage_seed(loaded.seed, "gof"));
    let fail = |e| CliError::analysis("gof", e);
    let sample = gof_sample(&picked, &data, &mut rng).map_err(fail)?;
    let mut qq = Vec::new();
    qq_export(&sample, &mut qq).map_err(fail)?;
    let p: Vec<f64> = sample.ks.iter().map(|k| k.p_value).collect();
    let dev: Vec<f64> = sample.u.iter().map(|u| qq_max_deviation(u)).collect();
    let result = json!({
        "draws_used": picked.len(),
        "median_ks_p": quantile(&p, 0.5),
        "share_ks_p_below_0_05": p.iter().filter(|&&x| x < 0.05).count() as f64 / p.len() as f64,
        "median_qq_max_deviation": quantile(&dev, 0.5),
        "ks": sample.ks,
    });
    Ok(vec![o.csv("qq.csv", &qq)?, o.json("gof.json", &result)?])
}

pub fn simulate(loaded: &Loaded) -> Written {
    let o = out(loaded, "simulate");
    let sec = loaded.cfg.simulate.clone().ok_or_else(|| CliError::Config("config has no [simulate] section".into()))?;
    let spec = ScenarioSpec { seed: stage_seed(loaded.seed, "simulate"), ..sec.scenario };
    let fail = |e| CliError::analysis("simulate", e);
    let (sim, outcome) = if sec.survival {
        let mode = match spec.kind {
            ScenarioKind::Interaction => SelectionMode::Interaction,
            ScenarioKind::Oracle => SelectionMode::Oracle,
            k => return Err(CliError::Config(format!("survival outcomes need a registry scenario, not {k:?}"))),
        };
        let mut rng = rng_from_seed(spec.seed);
        let reg = gen_registry(&RegistrySpec { size: spec.registry_size, ..Default::default() }, &mut rng).map_err(fail)?;
        let mut sim = gen_selection(&reg, mode, spec.n1, spec.n2, &mut rng).map_err(fail)?;
        if sec.hazard_ratio != 1.0 {
            sim.study.treatment = hr_transform_dataset(&sim.study.treatment, sec.hazard_ratio).map_err(fail)?;
        }
        (sim, OutcomeSection { mode: OutcomeMode::Survival, time: Some("os".into()), status: Some("event".into()), value: None })
    } else {
        (generate(&spec).map_err(fail)?, OutcomeSection { mode: OutcomeMode::Continuous, time: None, status: None, value: Some("y".into()) })
    };
    let cols = match outcome.mode {
        OutcomeMode::Survival => OutcomeColumns::Survival { time: "os".into(), status: "event".into() },
        _ => OutcomeColumns::Continuous { value: "y".into() },
    };
    let study_cfg = StudyConfig {
        seed: Some(loaded.seed),
        output_dir: "analysis".into(),
        data: Some(DataSection {
            treatment: "treatment.csv".into(),
            rwd: vec!["rwd.csv".into()],
            schema: sim.study.schema().columns().to_vec(),
            outcome,
            missing_tokens: None,
        }),
        chain: loaded.cfg.chain.clone(),
        analysis: loaded.cfg.analysis.clone(),
        simulate: None,
        power: None,
    };
    let toml_text = toml::to_string(&study_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(vec![
        o.csv("treatment.csv", &dataset_csv(&sim.study.treatment, Some(&cols))?)?,
        o.csv("rwd.csv", &dataset_csv(&sim.study.rwd, Some(&cols))?)?,
        o.json("simulate.json", &json!({"scenario": spec, "survival": sec.survival, "hazard_ratio": sec.hazard_ratio, "truth": sim.diagnostics}))?,
        o.write("study.toml", toml_text.as_bytes())?,
    ])
}

pub fn power(loaded: &Loaded) -> Written {
    let o = out(loaded, "power");
    let sec = loaded.cfg.power.clone().ok_or_else(|| CliError::Config("config has no [power] section".into()))?;
    let cfg = camsynth::analysis::PipelineConfig { mode: OutcomeMode::Continuous, ..loaded.pipeline() };
    let res = run_power(&sec.cell, sec.null_replicates, sec.alt_replicates, &cfg, &sec.methods, stage_seed(loaded.seed, "power"))?;
    let rows = res.rows.iter().map(|r| {
        vec![
            json!(r.scenario).as_str().unwrap_or_default().to_string(),
            r.n1.to_string(),
            r.p.to_string(),
            format!("{:?}", r.delta),
            r.method.label().to_string(),
            format!("{:?}", r.power),
            format!("{:?}", r.null_rejection),
            r.null_replicates.to_string(),
            r.alt_replicates.to_string(),
            format!("{:?}", r.lower),
            format!("{:?}", r.upper),
            r.note.clone().unwrap_or_default(),
        ]
    });
    let header = ["scenario", "n1", "p", "delta", "method", "power", "null_rejection", "null_replicates", "alt_replicates", "lower", "upper", "note"];
    Ok(vec![o.csv("power.csv", &csv_bytes(&header, rows)?)?, o.json("power.json", &res)?])
}

const REPORTED: [&str; 8] = ["simulate.json", "fit.json", "weights.json", "resample.json", "equivalence.json", "effect.json", "gof.json", "power.json"];

const REPORTED_CSV: [&str; 5] = ["weights.csv", "synthetic_control.csv", "hr_curve.csv", "qq.csv", "power.csv"];

fn num(v: &Value) -> String {
    v.as_f64().map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

/// Collects the artifacts of this config into report.json and report.md.
pub fn report(loaded: &Loaded) -> Written {
    let o = out(loaded, "report");
    let mut found = serde_json::Map::new();
    for name in REPORTED {
        if o.path(name).exists() {
            found.insert(name.into(), o.read_json(name, "pipeline")?);
        }
    }
    for name in REPORTED_CSV {
        let path = o.path(name);
        if path.exists() {
            o.check(&path, &csv_provenance(&path)?)?;
        }
    }
    if found.is_empty() {
        return Err(CliError::Io { path: loaded.out.display().to_string(), message: "no artifacts to report; run a command first".into() });
    }
    let get = |name: &str, ptr: &str| found.get(name).and_then(|v| v.pointer(ptr)).cloned().unwrap_or(Value::Null);
    let summary = json!({
        "ess": get("weights.json", "/diagnostics/ess"),
        "auc": get("equivalence.json", "/importance_resampled/auc"),
        "auc_pass": get("equivalence.json", "/importance_resampled/pass"),
        "auc_random": get("equivalence.json", "/random/auc"),
        "ca_ppmx_mean": get("effect.json", "/CA-PPMx/mean"),
        "ca_ppmx_interval": get("effect.json", "/CA-PPMx/interval"),
        "ca_ppmx_prob_hr_below": get("effect.json", "/CA-PPMx/prob_hr_below"),
        "is_lm_delta": get("effect.json", "/IS-LM/delta"),
        "is_lm_p": get("effect.json", "/IS-LM/p_value"),
        "is_km_logrank_p": get("effect.json", "/IS-KM/logrank/p_value"),
        "gof_median_ks_p": get("gof.json", "/median_ks_p"),
        "power": get("power.json", "/rows"),
    });
    let artifacts: Vec<&String> = found.keys().collect();
    let result = json!({"artifacts": artifacts, "summary": summary});

    let mut md = String::from("# camsynth report\n\n");
    md += &format!("- seed: {}\n- config sha256: `{}`\n- artifacts: {}\n\n", loaded.seed, loaded.hash, found.keys().cloned().collect::<Vec<_>>().join(", "));
    let s = &summary;
    if !s["auc"].is_null() {
        md += &format!("## Equivalence\n\nCV AUC {} (pass: {}); uniformly resampled control {}.\n\n", num(&s["auc"]), s["auc_pass"], num(&s["auc_random"]));
    }
    if !s["ca_ppmx_mean"].is_null() {
        md += &format!(
            "## Effect\n\nCA-PPMx mean {} with interval [{}, {}].\n",
            num(&s["ca_ppmx_mean"]),
            num(&s["ca_ppmx_interval"][0]),
            num(&s["ca_ppmx_interval"][1])
        );
        if !s["ca_ppmx_prob_hr_below"].is_null() {
            md += &format!("P(HR below target) {}; IS-KM logrank p {}.\n", num(&s["ca_ppmx_prob_hr_below"]), num(&s["is_km_logrank_p"]));
        }
        if !s["is_lm_delta"].is_null() {
            md += &format!("IS-LM estimate {} (p {}).\n", num(&s["is_lm_delta"]), num(&s["is_lm_p"]));
        }
        md += "\n";
    }
    if let Some(rows) = s["power"].as_array() {
        md += "## Power\n\n| method | n1 | p | delta | power | null rejection |\n|---|---|---|---|---|---|\n";
        for r in rows {
            md += &format!("| {} | {} | {} | {} | {} | {} |\n", r["method"].as_str().unwrap_or("?"), r["n1"], r["p"], r["delta"], num(&r["power"]), num(&r["null_rejection"]));
        }
        md += "\n";
    }
    if !s["gof_median_ks_p"].is_null() {
        md += &format!("## Goodness of fit\n\nMedian KS p-value of the U values {}.\n\n", num(&s["gof_median_ks_p"]));
    }
    let commands: Vec<&str> = REPORTED.iter().filter(|k| found.contains_key(**k)).map(|&k| if k == "equivalence.json" { "validate" } else { k.trim_end_matches(".json") }).collect();
    md += &format!(
        "## Reproduce\n\nSave the config below and run `camsynth <command> --config <file>` for: {}.\n\n```toml\n{}\n```\n",
        commands.join(", "),
        loaded.text.trim_end()
    );
    Ok(vec![o.json("report.json", &result)?, o.write("report.md", md.as_bytes())?])
}

/// fit → weights → resample → validate → effect → gof → report, writing the same files as
/// the individual commands.
pub fn pipeline(loaded: &Loaded) -> Written {
    let mut written = fit(loaded)?;
    written.extend(weights(loaded)?);
    written.extend(resample(loaded)?);
    written.extend(validate(loaded)?);
    if loaded.pipeline().mode != OutcomeMode::None {
        written.extend(effect(loaded)?);
        written.extend(gof(loaded)?);
    }
    written.extend(report(loaded)?);
    Ok(written)
}

