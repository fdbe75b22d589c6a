use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qoe_core::evaluation::{compute_metrics, grid_search as search, kfold_split, train_test_split};
use qoe_core::experiments::{
    run_comparison, run_learning_curve, run_timing_benchmark, Dataset, ExperimentConfig, ExperimentError,
};
use qoe_core::features::{self, feature_matrix, features_to_csv, fit_scaler, Scaler};
use qoe_core::models::{fit_model, load_model, save_model, ModelError, ModelKind, ParamValue, TrainedModel};
use qoe_core::pipeline::{
    run_closed_loop, write_wire, AllocationPolicy, FlowOption, PipelineError, Scenario,
};
use qoe_core::session::{import_subjective_csv, parse_session_log, serialize_session_log, CsvMapping, LabeledSession};
use qoe_core::synth::{generate_dataset, trace_library, AbrPolicy, BandwidthTrace};
use serde_json::json;

use crate::config::{parse_by_extension, AppConfig};
use crate::{CliError, Outcome};

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::UnknownKind(_)
        | ModelError::UnknownParam { .. }
        | ModelError::MissingParam(_)
        | ModelError::BadParam { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Config(_) => CliError::Usage(e.to_string()),
        ExperimentError::Model(m) => model_error(m),
        _ => CliError::Data(e.to_string()),
    }
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn load_sessions(cfg: &AppConfig, input: Option<&Path>) -> Result<Vec<LabeledSession>, CliError> {
    let exp = cfg.experiment(input);
    exp.dataset.load(exp.seed, &exp.vqi).map_err(experiment_error)
}

fn load_dataset(exp: &ExperimentConfig) -> Result<Dataset, CliError> {
    Dataset::load(exp).map_err(experiment_error)
}

fn load_artifacts(model: &Path, scaler: &Path) -> Result<(TrainedModel, Scaler), CliError> {
    let m = load_model(&read(model)?).map_err(|e| CliError::Data(format!("{}: {e}", model.display())))?;
    let s: Scaler = serde_json::from_slice(&read(scaler)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", scaler.display())))?;
    Ok((m, s))
}

fn convergence(models: &[&TrainedModel]) -> Outcome {
    let flagged: Vec<String> = models
        .iter()
        .filter(|m| !m.converged)
        .map(|m| m.kind().name().to_string())
        .collect();
    if flagged.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Unconverged(flagged)
    }
}

fn parse_kind(s: &str) -> Result<ModelKind, CliError> {
    s.parse().map_err(model_error)
}

/// `key=value`; numbers become numeric values, anything else text.
fn parse_param(s: &str) -> Result<(String, ParamValue), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--param expects key=value, got `{s}`")))?;
    let value = v.parse::<f64>().map_or_else(|_| ParamValue::Text(v.to_string()), ParamValue::Num);
    Ok((k.trim().to_string(), value))
}

fn rows_for(exp: &ExperimentConfig, n: usize, all_rows: bool, train_side: bool) -> Result<Vec<usize>, CliError> {
    if all_rows {
        return Ok((0..n).collect());
    }
    let plan = train_test_split(n, exp.split_ratio, exp.seed).map_err(CliError::data)?;
    Ok(if train_side { plan.train_indices } else { plan.test_indices })
}

pub fn ingest(input: &Path, out: &Path) -> Result<Outcome, CliError> {
    let sessions = parse_session_log(&read(input)?).map_err(CliError::data)?;
    let labeled = sessions.iter().filter(|s| s.mos_normalized.is_some()).count();
    println!("{} sessions, {labeled} labeled", sessions.len());
    write(out, "sessions.jsonl", serialize_session_log(&sessions))?;
    Ok(Outcome::Ok)
}

pub fn import_csv(input: &Path, mapping: &Path, scale_max: f64, out: &Path) -> Result<Outcome, CliError> {
    let map = CsvMapping::from_json(&read(mapping)?).map_err(CliError::data)?;
    let sessions = import_subjective_csv(&read(input)?, &map, scale_max).map_err(CliError::data)?;
    println!("{} sessions imported", sessions.len());
    write(out, "sessions.jsonl", serialize_session_log(&sessions))?;
    Ok(Outcome::Ok)
}

pub fn extract_features(cfg: &AppConfig, input: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let sessions = load_sessions(cfg, input)?;
    let fv: Vec<_> = sessions.iter().map(|s| features::extract_features(&s.session, &cfg.vqi)).collect();
    let labels: Vec<Option<f64>> = sessions.iter().map(|s| s.mos_normalized).collect();
    write(out, "features.csv", features_to_csv(&fv, Some(&labels)))?;
    Ok(Outcome::Ok)
}

pub fn train(
    cfg: &AppConfig,
    input: Option<&Path>,
    kind: &str,
    params: &[String],
    all_rows: bool,
    out: &Path,
) -> Result<Outcome, CliError> {
    let exp = cfg.experiment(input);
    let overrides = params.iter().map(|p| parse_param(p)).collect::<Result<BTreeMap<_, _>, _>>()?;
    let spec = exp
        .spec_for(parse_kind(kind)?)
        .map_err(experiment_error)?
        .apply(&overrides)
        .map_err(model_error)?;
    let ds = load_dataset(&exp)?;
    let rows = rows_for(&exp, ds.len(), all_rows, true)?;
    let raw = ds.x.select_rows(&rows);
    let y: Vec<f64> = rows.iter().map(|&i| ds.y[i]).collect();
    let scaler = fit_scaler(&raw).map_err(CliError::data)?;
    let x = scaler.transform(&raw).map_err(CliError::data)?;
    let model = fit_model(&spec, &x, &y).map_err(model_error)?;
    println!(
        "{}: {} rows, {:.3} s, converged {}",
        spec.label(),
        model.meta.n_train,
        model.meta.training_wall_time_s,
        model.converged
    );
    write(out, "model.qoem", save_model(&model))?;
    write(out, "scaler.json", serde_json::to_string_pretty(&scaler).map_err(CliError::data)?)?;
    let meta = json!({
        "model": spec.label(),
        "seed": exp.seed,
        "rows": if all_rows { "all" } else { "train" },
        "n_train": model.meta.n_train,
        "training_wall_time_s": model.meta.training_wall_time_s,
        "converged": model.converged,
    });
    write(out, "train.json", serde_json::to_string_pretty(&meta).map_err(CliError::data)?)?;
    Ok(convergence(&[&model]))
}

pub fn predict(cfg: &AppConfig, input: &Path, model: &Path, scaler: &Path, out: &Path) -> Result<Outcome, CliError> {
    let (m, s) = load_artifacts(model, scaler)?;
    let sessions = parse_session_log(&read(input)?).map_err(CliError::data)?;
    let fv: Vec<_> = sessions.iter().map(|l| features::extract_features(&l.session, &cfg.vqi)).collect();
    let x = s.transform(&feature_matrix(&fv)).map_err(CliError::data)?;
    let yhat = m.predict(&x).map_err(model_error)?;
    let mut csv = String::from("session_id,predicted_qoe,mos_normalized\n");
    for (l, p) in sessions.iter().zip(&yhat) {
        let label = l.mos_normalized.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{p},{label}\n", l.session.session_id));
    }
    write(out, "predictions.csv", csv)?;
    Ok(convergence(&[&m]))
}

pub fn evaluate(
    cfg: &AppConfig,
    input: Option<&Path>,
    model: &Path,
    scaler: &Path,
    all_rows: bool,
    out: &Path,
) -> Result<Outcome, CliError> {
    let (m, s) = load_artifacts(model, scaler)?;
    let exp = cfg.experiment(input);
    let ds = load_dataset(&exp)?;
    let rows = rows_for(&exp, ds.len(), all_rows, false)?;
    let x = s.transform(&ds.x.select_rows(&rows)).map_err(CliError::data)?;
    let y: Vec<f64> = rows.iter().map(|&i| ds.y[i]).collect();
    let yhat = m.predict(&x).map_err(model_error)?;
    let metrics = compute_metrics(&y, &yhat).map_err(CliError::data)?;
    println!(
        "n={} mse={:.5} rmse={:.5} mae={:.5} r2={:.4} plcc={:.4} srcc={:.4}",
        rows.len(),
        metrics.mse,
        metrics.rmse,
        metrics.mae,
        metrics.r2,
        metrics.plcc,
        metrics.srcc
    );
    let report = json!({ "model": m.spec.label(), "n": rows.len(), "metrics": metrics });
    write(out, "metrics.json", serde_json::to_string_pretty(&report).map_err(CliError::data)?)?;
    Ok(convergence(&[&m]))
}

pub fn grid_search(
    cfg: &AppConfig,
    input: Option<&Path>,
    kind: &str,
    grid_file: Option<&Path>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let grid: BTreeMap<String, Vec<ParamValue>> = match grid_file {
        Some(p) => parse_by_extension(p)?,
        None => cfg.grid.clone(),
    };
    if grid.is_empty() {
        return Err(CliError::Usage("no grid: pass --grid or set [grid] in the config".into()));
    }
    let exp = cfg.experiment(input);
    let base = exp.spec_for(parse_kind(kind)?).map_err(experiment_error)?;
    let ds = load_dataset(&exp)?;
    let plan = train_test_split(ds.len(), exp.split_ratio, exp.seed).map_err(CliError::data)?;
    let folds = kfold_split(&plan.train_indices, exp.cv_folds, exp.seed).map_err(CliError::data)?;
    let result = search(&base, &grid, &ds.x, &ds.y, &folds).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("best {} (mean CV R2 {:.4})", result.best.label(), result.best_score);
    write(out, "grid.csv", result.to_csv())?;
    let best = json!({ "best": result.best, "mean_cv_r2": result.best_score, "candidate": result.best_index + 1 });
    write(out, "best.json", serde_json::to_string_pretty(&best).map_err(CliError::data)?)?;
    Ok(Outcome::Ok)
}

pub fn learning_curve(cfg: &AppConfig, input: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let exp = cfg.experiment(input);
    let ds = load_dataset(&exp)?;
    let lc = run_learning_curve(&ds, &exp).map_err(experiment_error)?;
    write(out, "learning_curve.csv", lc.to_csv())?;
    write(out, "learning_curve.dat", lc.to_plot_data())?;
    Ok(Outcome::Ok)
}

pub fn bench_time(
    cfg: &AppConfig,
    input: Option<&Path>,
    runs: Option<usize>,
    warmup: Option<usize>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let mut exp = cfg.experiment(input);
    exp.timing_runs = runs.unwrap_or(exp.timing_runs);
    exp.timing_warmup = warmup.unwrap_or(exp.timing_warmup);
    let ds = load_dataset(&exp)?;
    let report = run_timing_benchmark(&ds, &exp).map_err(experiment_error)?;
    print!("{}", report.ordering_lines());
    write(out, "timing.csv", report.to_csv())?;
    write(out, "timing_order.txt", report.ordering_lines())?;
    Ok(Outcome::Ok)
}

pub fn compare(cfg: &AppConfig, input: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let exp = cfg.experiment(input);
    let ds = load_dataset(&exp)?;
    let table = run_comparison(&ds, &exp).map_err(experiment_error)?;
    print!("{}", table.to_markdown());
    write(out, "comparison.csv", table.to_csv())?;
    write(out, "comparison.md", table.to_markdown())?;
    write(out, "comparison.json", serde_json::to_string_pretty(&table).map_err(CliError::data)?)?;
    let flagged: Vec<String> = table
        .outcomes
        .iter()
        .filter(|o| o.converged == Some(false))
        .map(|o| o.model.name().to_string())
        .collect();
    Ok(if flagged.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Unconverged(flagged)
    })
}

fn load_traces(dir: &Path) -> Result<Vec<BandwidthTrace>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("{}: no trace files", dir.display())));
    }
    paths.iter().map(|p| BandwidthTrace::load(p).map_err(CliError::data)).collect()
}

pub fn simulate(cfg: &AppConfig, per_cell: Option<u32>, traces: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let mut synth = cfg.synth.clone();
    synth.per_cell = per_cell.unwrap_or(synth.per_cell);
    let traces = match traces {
        Some(d) => load_traces(d)?,
        None => trace_library(),
    };
    let sessions = generate_dataset(&traces, &AbrPolicy::default_set(), &synth, &cfg.vqi, cfg.seed())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{} sessions", sessions.len());
    write(out, "dataset.jsonl", serialize_session_log(&sessions))?;
    Ok(Outcome::Ok)
}

pub struct PipelineArgs<'a> {
    pub model: &'a Path,
    pub scaler: &'a Path,
    pub scenario: Option<&'a Path>,
    pub ifo: Option<FlowOption>,
    pub freq_hz: Option<f64>,
    pub epochs: Option<u32>,
    pub policy: Option<AllocationPolicy>,
}

pub fn pipeline(cfg: &AppConfig, args: PipelineArgs<'_>, out: &Path) -> Result<Outcome, CliError> {
    let (m, s) = load_artifacts(args.model, args.scaler)?;
    let scenario = match args.scenario {
        Some(p) => {
            let text = String::from_utf8(read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Scenario::from_json(&text).map_err(pipeline_error)?
        }
        None => Scenario::s1(),
    };
    let mut lc = cfg.pipeline.clone();
    if let Some(f) = args.ifo {
        lc.monitoring.flow_option = f;
    }
    if let Some(hz) = args.freq_hz {
        lc.monitoring.frequency_hz = hz;
    }
    if let Some(n) = args.epochs {
        lc.epochs = n;
    }
    if let Some(p) = args.policy {
        lc.policy = p;
    }
    let report = run_closed_loop(&scenario, &m, &s, &lc).map_err(pipeline_error)?;
    println!(
        "{}: {} sessions, {} epochs, mean predicted QoE {:.4}, mean oracle QoE {:.4}",
        report.scenario_id,
        report.sessions.len(),
        report.epochs.len(),
        report.mean_final_predicted_qoe,
        report.mean_oracle_qoe
    );
    write(out, "report.json", report.to_json())?;
    write(out, "epochs.csv", report.epochs_csv())?;
    write(out, "kqi.ndjson", write_wire(&report.messages))?;
    Ok(convergence(&[&m]))
}
