use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Fidelity, InputScaler, MultiFidelityNet, OutputScaler};
use crate::problems::{relative_l2, relative_l2_by_slice, EvalReport, InferredParam, Problem, ProblemKind};
use crate::training::{write_history_csv, HistoryRow, InverseParam, LossTerm, Physics, TermKind, TrainIo, Trainer};

use super::config::{Approach, RunConfig};
use super::dataset::{DataFidelity, DataRow, Dataset, Role};
use super::generate::{generate, rng, stream, DataMeta};

/// Dataset plus what is known about its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub dataset: Dataset,
    pub meta: DataMeta,
    /// True when the data came from the built-in generator.
    pub generated: bool,
}

fn meta_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("meta.json")
}

/// Reads the configured dataset (and its `.meta.json` sidecar, if any) or
/// runs the generator with the config's seed.
pub fn load_data(cfg: &RunConfig) -> Result<RunData> {
    let names = problem_for(cfg, &DataMeta::default(), true)?;
    match &cfg.data.dataset {
        Some(path) => {
            let dataset = Dataset::read_csv(path, &names.input_names(), &names.output_names())?;
            let mp = meta_path(path);
            let meta = if mp.exists() {
                let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
                serde_json::from_str(&text)?
            } else {
                DataMeta::default()
            };
            Ok(RunData {
                dataset,
                meta,
                generated: false,
            })
        }
        None => {
            let gen = cfg.data.generator.clone().unwrap_or_default();
            let g = generate(cfg.problem, &cfg.options, &gen, cfg.seed)?;
            Ok(RunData {
                dataset: g.dataset,
                meta: g.meta,
                generated: true,
            })
        }
    }
}

/// Writes `dataset.csv` and `dataset.meta.json` into `dir`.
pub fn save_data(data: &RunData, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("dataset.csv");
    data.dataset.write_csv(&path)?;
    let mp = meta_path(&path);
    std::fs::write(&mp, serde_json::to_string_pretty(&data.meta)?).map_err(|e| Error::io(&mp, e))?;
    Ok(path)
}

fn problem_for(cfg: &RunConfig, meta: &DataMeta, names_only: bool) -> Result<Problem> {
    let mut opts = cfg.options.clone();
    if cfg.problem == ProblemKind::HydraulicFlux && opts.inlet_flux.is_none() {
        opts.inlet_flux = match (meta.inlet_flux, names_only) {
            (Some(q), _) => Some(q),
            (None, true) => Some(0.0),
            (None, false) => {
                return Err(Error::Config(
                    "flux form needs `options.inlet_flux` or generated data that records it".into(),
                ))
            }
        };
    }
    Problem::build(cfg.problem, &opts)
}

/// Everything the trainer needs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: Problem,
    pub net: MultiFidelityNet,
    pub terms: Vec<LossTerm>,
    pub inverse: Vec<InverseParam>,
}

/// Splits rows into value terms, one per pattern of present components.
fn value_terms(name: &str, kind: TermKind, fidelity: Fidelity, rows: &[&DataRow]) -> Vec<LossTerm> {
    let mut groups: Vec<(Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = Vec::new();
    for r in rows {
        let comps: Vec<usize> = (0..r.y.len()).filter(|&c| r.y[c].is_some()).collect();
        let target: Vec<f64> = r.y.iter().flatten().copied().collect();
        match groups.iter_mut().find(|g| g.0 == comps) {
            Some(g) => {
                g.1.push(r.x.clone());
                g.2.push(target);
            }
            None => groups.push((comps, vec![r.x.clone()], vec![target])),
        }
    }
    let many = groups.len() > 1;
    groups
        .into_iter()
        .enumerate()
        .map(|(k, (comps, pts, tgt))| {
            let n = if many { format!("{name}_{k}") } else { name.to_string() };
            LossTerm::values(&n, kind, fidelity, comps, pts, tgt)
        })
        .collect()
}

/// Population mean and standard deviation of the low-fidelity labels (the
/// high-fidelity labels if there are none); identity without labels.
pub fn fit_output_scaler(dataset: &Dataset) -> Result<OutputScaler> {
    let full = |f: DataFidelity| -> Vec<Vec<f64>> { dataset.select(Role::Labeled, f).filter_map(DataRow::full).collect() };
    let mut data = full(DataFidelity::Low);
    if data.is_empty() {
        data = full(DataFidelity::High);
    }
    if data.is_empty() {
        return Ok(OutputScaler::identity());
    }
    let n = data.len() as f64;
    let k = data[0].len();
    let mean: Vec<f64> = (0..k).map(|c| data.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..k)
        .map(|c| {
            let s = (data.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 * mean[c].abs().max(1.0) {
                s
            } else {
                log::warn!("output {c} is constant in the labeled data; using unit scale");
                1.0
            }
        })
        .collect();
    OutputScaler::standard(mean, std)
}

/// Builds the loss terms for the configured approach. Residual and boundary
/// points depend only on the seed, so every approach sees the same sets.
pub fn build_experiment(cfg: &RunConfig, data: &RunData) -> Result<Experiment> {
    let problem = problem_for(cfg, &data.meta, false)?;
    let ds = &data.dataset;
    ds.check_columns(&problem.input_names(), &problem.output_names())?;
    let inverse_problem = !problem.parameter_names().is_empty();

    let mut terms = Vec::new();
    let given: Vec<Vec<f64>> = ds.select(Role::Residual, DataFidelity::High).map(|r| r.x.clone()).collect();
    let residual = if given.is_empty() {
        problem.residual_points(cfg.data.residual_points, &mut rng(cfg.seed, stream::RESIDUAL))
    } else {
        given
    };
    terms.push(LossTerm::residual("hf_residual", Fidelity::High, residual));
    terms.extend(problem.boundary_terms(&mut rng(cfg.seed, stream::BOUNDARY)));
    let rows = |role, fid| ds.select(role, fid).collect::<Vec<_>>();
    terms.extend(value_terms(
        "hf_boundary_data",
        TermKind::Boundary,
        Fidelity::High,
        &rows(Role::Boundary, DataFidelity::High),
    ));

    let hf_labels = rows(Role::Labeled, DataFidelity::High);
    let lf_labels = [rows(Role::Labeled, DataFidelity::Low), rows(Role::Boundary, DataFidelity::Low)].concat();
    if inverse_problem {
        if hf_labels.is_empty() {
            return Err(Error::Config("inverse problem without high-fidelity observations".into()));
        }
        terms.extend(value_terms("hf_observations", TermKind::Labeled, Fidelity::High, &hf_labels));
    }
    match cfg.approach {
        Approach::Mf => {
            if lf_labels.is_empty() {
                return Err(Error::Config("mf approach needs low-fidelity labeled rows".into()));
            }
            terms.extend(value_terms("lf_data", TermKind::Labeled, Fidelity::Low, &lf_labels));
        }
        Approach::SingleHf => {}
        Approach::HfWithData => {
            if inverse_problem {
                return Err(Error::Config("hf-with-data applies to forward problems only".into()));
            }
            if hf_labels.is_empty() {
                return Err(Error::Config("hf-with-data needs high-fidelity labeled rows".into()));
            }
            terms.extend(value_terms("hf_data", TermKind::Labeled, Fidelity::High, &hf_labels));
        }
    }
    for t in &terms {
        t.validate(problem.input_dims(), problem.outputs())?;
    }

    let (lo, hi) = problem.domain();
    let net = MultiFidelityNet::init(
        &cfg.network,
        InputScaler::new(lo, hi)?,
        fit_output_scaler(ds)?,
        problem.outputs(),
        cfg.seed,
    )?;
    let inverse = problem.inverse_params(&mut rng(cfg.seed, stream::INVERSE));
    Ok(Experiment {
        problem,
        net,
        terms,
        inverse,
    })
}

/// Relative L2 error of `predictions` against the test split.
pub fn evaluate_predictions(dataset: &Dataset, predictions: &[Vec<f64>]) -> Result<f64> {
    let (_, truths) = dataset.test_split();
    relative_l2(predictions, &truths)
}

/// Scores the high-fidelity head on the test split and reports inferred parameters.
pub fn evaluate(
    net: &MultiFidelityNet,
    problem: &Problem,
    data: &RunData,
    approach: Approach,
    inverse: &[f64],
) -> Result<EvalReport> {
    let (points, truths) = data.dataset.test_split();
    let mut report = EvalReport::default();
    let names = problem.parameter_names();
    let exact = problem.exact_parameters();
    report.parameters = names
        .iter()
        .zip(inverse)
        .enumerate()
        .map(|(k, (n, &v))| InferredParam::new(n, v, exact.get(k).copied()))
        .collect();
    if points.is_empty() {
        return Ok(report);
    }
    let preds = net.predict(&points, Fidelity::High)?;
    let label = approach.name();
    report.relative_l2.insert(label.to_string(), relative_l2(&preds, &truths)?);
    let outputs = problem.output_names();
    if outputs.len() > 1 {
        for (c, name) in outputs.iter().enumerate() {
            let p: Vec<Vec<f64>> = preds.iter().map(|r| vec![r[c]]).collect();
            let t: Vec<Vec<f64>> = truths.iter().map(|r| vec![r[c]]).collect();
            if let Ok(e) = relative_l2(&p, &t) {
                report.relative_l2.insert(format!("{label}:{name}"), e);
            }
        }
    }
    if let Some(e) = data.meta.lf_relative_l2 {
        report.relative_l2.insert("lf".into(), e);
    }
    let inputs = problem.input_names();
    if inputs.len() > 1 {
        if let Some(dim) = inputs.iter().position(|&n| n == "t") {
            report.per_slice = relative_l2_by_slice(&points, &preds, &truths, dim)?;
        }
    }
    Ok(report)
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub report: EvalReport,
    pub net: MultiFidelityNet,
    pub inverse: Vec<f64>,
    pub final_loss: f64,
    pub history: Vec<HistoryRow>,
    pub terms: Vec<String>,
    pub meta: DataMeta,
}

/// Summary written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: ProblemKind,
    pub approach: Approach,
    pub seed: u64,
    pub final_loss: f64,
    pub terms: Vec<String>,
    pub parameters: Vec<InferredParam>,
    pub relative_l2: BTreeMap<String, f64>,
    pub meta: DataMeta,
}

/// Loads or generates data, trains, evaluates, and (with `out`) writes
/// `config.json`, `history.csv`, `checkpoint.json`, `run.json`,
/// `report.json`, `report.csv` and `predictions.csv`.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    run_with_data(cfg, &data, out)
}

pub fn run_with_data(cfg: &RunConfig, data: &RunData, out: Option<&Path>) -> Result<RunResult> {
    let mut exp = build_experiment(cfg, data)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        cfg.save(dir.join("config.json"))?;
        if data.generated {
            save_data(data, dir)?;
        }
    }
    log::info!(
        "{} / {}: {} terms, {} parameters, seed {}",
        cfg.problem.name(),
        cfg.approach.name(),
        exp.terms.len(),
        exp.net.n_params(),
        cfg.seed
    );
    let outcome = Trainer {
        net: &mut exp.net,
        physics: &exp.problem,
        terms: &exp.terms,
        inverse: &exp.inverse,
        schedule: &cfg.schedule,
        io: TrainIo {
            out_dir: out.map(Path::to_path_buf),
        },
    }
    .run(cfg.seed)?;
    let report = evaluate(&exp.net, &exp.problem, data, cfg.approach, &outcome.inverse)?;
    let result = RunResult {
        config: cfg.clone(),
        report,
        net: exp.net,
        inverse: outcome.inverse,
        final_loss: outcome.final_loss,
        history: outcome.history,
        terms: exp.terms.iter().map(|t| t.name.clone()).collect(),
        meta: data.meta.clone(),
    };
    if let Some(dir) = out {
        write_history_csv(&dir.join("history.csv"), &exp.terms, &result.history)?;
        result.net.save(dir.join("checkpoint.json"))?;
        let record = result.record();
        let p = dir.join("run.json");
        std::fs::write(&p, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&p, e))?;
        write_report(&result.report, dir)?;
        write_predictions(&result.net, &exp.problem, &data.dataset, &dir.join("predictions.csv"))?;
    }
    Ok(result)
}

impl RunResult {
    pub fn record(&self) -> RunRecord {
        RunRecord {
            problem: self.config.problem,
            approach: self.config.approach,
            seed: self.config.seed,
            final_loss: self.final_loss,
            terms: self.terms.clone(),
            parameters: self.report.parameters.clone(),
            relative_l2: self.report.relative_l2.clone(),
            meta: self.meta.clone(),
        }
    }
}

/// `report.json` plus a flat `report.csv` of `metric,value`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    let p = dir.join("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&p, e))?;
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in &report.relative_l2 {
        w.write_record([format!("relative_l2:{k}"), v.to_string()])?;
    }
    for p in &report.parameters {
        w.write_record([format!("parameter:{}", p.name), p.value.to_string()])?;
        if let Some(e) = p.relative_error {
            w.write_record([format!("relative_error:{}", p.name), e.to_string()])?;
        }
    }
    for (t, e) in &report.per_slice {
        w.write_record([format!("slice:{t}"), e.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Test inputs with truths and both network heads.
pub fn write_predictions(net: &MultiFidelityNet, problem: &Problem, dataset: &Dataset, path: &Path) -> Result<()> {
    let (points, truths) = dataset.test_split();
    let hf = net.predict(&points, Fidelity::High)?;
    let lf = net.predict(&points, Fidelity::Low)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = problem.input_names().iter().map(|s| s.to_string()).collect();
    for prefix in ["truth", "hf", "lf"] {
        header.extend(problem.output_names().iter().map(|o| format!("{prefix}_{o}")));
    }
    w.write_record(&header)?;
    for i in 0..points.len() {
        let rec: Vec<String> = points[i]
            .iter()
            .chain(&truths[i])
            .chain(&hf[i])
            .chain(&lf[i])
            .map(f64::to_string)
            .collect();
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Re-scores a saved run directory (`checkpoint.json`, optional `run.json`).
pub fn evaluate_saved(cfg: &RunConfig, dir: &Path) -> Result<EvalReport> {
    let data = load_data(cfg)?;
    let problem = problem_for(cfg, &data.meta, false)?;
    let net = MultiFidelityNet::load(dir.join("checkpoint.json"))?;
    let rp = dir.join("run.json");
    let inverse: Vec<f64> = if rp.exists() {
        let text = std::fs::read_to_string(&rp).map_err(|e| Error::io(&rp, e))?;
        let rec: RunRecord = serde_json::from_str(&text)?;
        rec.parameters.iter().map(|p| p.value).collect()
    } else {
        Vec::new()
    };
    let report = evaluate(&net, &problem, &data, cfg.approach, &inverse)?;
    write_report(&report, dir)?;
    Ok(report)
}

/// Trains each approach on the same data, residual points and seed; runs go
/// to `out/<approach>`. Inverse problems skip `hf-with-data`.
pub fn compare(cfg: &RunConfig, approaches: &[Approach], out: Option<&Path>) -> Result<Vec<RunResult>> {
    let data = load_data(cfg)?;
    let inverse = !problem_for(cfg, &data.meta, true)?.parameter_names().is_empty();
    let mut results = Vec::new();
    for &a in approaches {
        if inverse && a == Approach::HfWithData {
            log::warn!("skipping hf-with-data for an inverse problem");
            continue;
        }
        let mut c = cfg.clone();
        c.approach = a;
        let dir = out.map(|d| d.join(a.name()));
        results.push(run_with_data(&c, &data, dir.as_deref())?);
    }
    Ok(results)
}

/// Mean and spread of one inferred parameter over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub name: String,
    pub exact: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub mean_relative_error: Option<f64>,
    pub std_relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferSummary {
    pub problem: ProblemKind,
    pub approach: Approach,
    pub seeds: Vec<u64>,
    pub runs: Vec<Vec<InferredParam>>,
    pub stats: Vec<ParamStats>,
}

/// Sample mean and standard deviation (`n − 1`; zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize_params(runs: &[Vec<InferredParam>]) -> Vec<ParamStats> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|k| {
            let values: Vec<f64> = runs.iter().map(|r| r[k].value).collect();
            let errors: Vec<f64> = runs.iter().filter_map(|r| r[k].relative_error).collect();
            let (mean, std) = mean_std(&values);
            let (me, se) = if errors.len() == runs.len() {
                let (m, s) = mean_std(&errors);
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            ParamStats {
                name: first[k].name.clone(),
                exact: first[k].exact,
                mean,
                std,
                mean_relative_error: me,
                std_relative_error: se,
            }
        })
        .collect()
}

/// Trains `runs` models with seeds `cfg.seed, cfg.seed + 1, …`; each run gets
/// its own data draw and `run_<seed>` directory under `out`.
pub fn infer(cfg: &RunConfig, runs: usize, out: Option<&Path>) -> Result<InferSummary> {
    if runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let mut all = Vec::with_capacity(runs);
    let mut seeds = Vec::with_capacity(runs);
    for k in 0..runs {
        let mut c = cfg.clone();
        c.seed = cfg.seed + k as u64;
        let dir = out.map(|d| d.join(format!("run_{}", c.seed)));
        let r = run(&c, dir.as_deref())?;
        for p in &r.report.parameters {
            log::info!("seed {}: {} = {} (error {:?})", c.seed, p.name, p.value, p.relative_error);
        }
        seeds.push(c.seed);
        all.push(r.report.parameters);
    }
    let summary = InferSummary {
        problem: cfg.problem,
        approach: cfg.approach,
        seeds,
        stats: summarize_params(&all),
        runs: all,
    };
    if let Some(dir) = out {
        let p = dir.join("inference.json");
        std::fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
        let mut w = csv::Writer::from_path(dir.join("inference.csv"))?;
        w.write_record(["parameter", "exact", "mean", "std", "mean_relative_error", "std_relative_error"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for s in &summary.stats {
            w.write_record([
                s.name.clone(),
                opt(s.exact),
                s.mean.to_string(),
                s.std.to_string(),
                opt(s.mean_relative_error),
                opt(s.std_relative_error),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    Ok(summary)
}

/// Collects saved runs into plot-ready tables: `summary.csv` (one row per
/// run, for error-versus-time-span or approach comparisons) and `slices.csv`
/// (error per time slice).
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<usize> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record(["run", "problem", "approach", "seed", "time_span", "metric", "value"])?;
    let mut slices = csv::Writer::from_path(out.join("slices.csv"))?;
    slices.write_record(["run", "approach", "t", "relative_l2"])?;
    for dir in run_dirs {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let cfg: RunConfig = serde_json::from_str(&read("config.json")?)?;
        let rep: EvalReport = serde_json::from_str(&read("report.json")?)?;
        let run = dir.display().to_string();
        let span = cfg.options.time_span.map_or(String::new(), |t| t.to_string());
        let head = [run.clone(), cfg.problem.name().into(), cfg.approach.name().into(), cfg.seed.to_string(), span];
        let mut rows: Vec<(String, f64)> = rep.relative_l2.iter().map(|(k, v)| (format!("relative_l2:{k}"), *v)).collect();
        for p in &rep.parameters {
            rows.push((format!("parameter:{}", p.name), p.value));
            if let Some(e) = p.relative_error {
                rows.push((format!("relative_error:{}", p.name), e));
            }
        }
        for (metric, value) in rows {
            let mut rec = head.to_vec();
            rec.extend([metric, value.to_string()]);
            summary.write_record(&rec)?;
        }
        for (t, e) in &rep.per_slice {
            slices.write_record([run.clone(), cfg.approach.name().into(), t.to_string(), e.to_string()])?;
        }
    }
    summary.flush().map_err(|e| Error::io(out, e))?;
    slices.flush().map_err(|e| Error::io(out, e))?;
    Ok(run_dirs.len())
}
