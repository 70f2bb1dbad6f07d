use std::fs;
use std::io::{self, Write};
use std::path::Path;

use l0sparse::features::LibrarySpec;
use l0sparse::models::{
    extract_equation, extract_equation_exact, load_checkpoint, save_checkpoint, sidecar_json,
    Model, ModelError, ModelSpec, Target,
};
use l0sparse::pendulum::{
    collect_dataset, export_csv, load_dataset, save_dataset, DataError, ReplayBuffer, ACT_DIM,
    OBS_DIM,
};
use l0sparse::training::{
    baseline_mse, evaluate, lambda_sweep, parse_metrics_csv, train_model, Metrics, TrainConfig,
    TrainError,
};
use serde_json::json;
use thiserror::Error;

use crate::{
    EvalArgs, ExtractArgs, GenDataArgs, LibraryArg, ModelArg, ReportArgs, TargetArg, TrainArgs,
};

pub const INPUT_NAMES: [&str; 4] = ["cos_theta", "sin_theta", "theta_dot", "torque"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(_)
            | ModelError::Feature(_)
            | ModelError::Gate(_)
            | ModelError::NotSindy
            | ModelError::NoGates => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Numerical { .. } | TrainError::NonFiniteGradient { .. } => {
                CliError::Numerical(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn set_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    #[cfg(not(feature = "parallel"))]
    if jobs > 1 {
        log::warn!("built without the parallel feature; --jobs {jobs} ignored");
    }
    Ok(())
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        log::warn!("no --seed given, using random seed {s}");
        s
    })
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let seed = resolve_seed(a.seed);
    let buf = collect_dataset(a.episodes, a.steps, seed)?;
    save_dataset(&buf, &a.out)?;
    if let Some(csv) = &a.csv {
        export_csv(&buf, io::BufWriter::new(fs::File::create(csv)?))?;
    }
    log::info!("wrote {} transitions to {}", buf.len(), a.out.display());
    print_json(&json!({
        "records": buf.len(),
        "episodes": a.episodes,
        "steps": a.steps,
        "seed": seed,
        "out": a.out,
    }))
}

fn target_of(t: TargetArg) -> Target {
    match t {
        TargetArg::Transition => Target::Transition,
        TargetArg::Reward => Target::Reward,
    }
}

fn model_spec(a: &TrainArgs, target: Target) -> ModelSpec {
    let (i, o) = (OBS_DIM + ACT_DIM, target.output_dim(OBS_DIM));
    match a.model {
        ModelArg::Fcnn => ModelSpec::fcnn(i, o).with_h_dim(a.h_dim),
        ModelArg::SparseFcnn => ModelSpec::sparse_fcnn(i, o).with_h_dim(a.h_dim),
        ModelArg::L0Sindy => {
            let lib = match a.library {
                LibraryArg::Polynomial => LibrarySpec::polynomial(a.degree),
                LibraryArg::Fourier => LibrarySpec::fourier(a.frequencies),
                LibraryArg::Polyfourier => LibrarySpec::poly_fourier(a.degree, a.frequencies),
            };
            ModelSpec::l0_sindy(i, o, lib)
        }
    }
}

fn write_run(
    dir: &Path,
    model: &Model,
    metrics: &Metrics,
    target: Target,
    extra: serde_json::Value,
    timing: bool,
) -> Result<serde_json::Value> {
    fs::create_dir_all(dir)?;
    save_checkpoint(model, Some(target), dir.join("model.ckpt"))?;
    let sidecar = sidecar_json(model, Some(target), &INPUT_NAMES);
    fs::write(
        dir.join("model.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    fs::write(dir.join("metrics.csv"), metrics.to_csv(timing))?;
    let mut summary = metrics.summary_json();
    if let (Some(s), Some(e)) = (summary.as_object_mut(), extra.as_object()) {
        s.extend(e.clone());
    }
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    if let Some(eqs) = sidecar["sindy"]["equations"].as_array() {
        for (name, eq) in output_names(Some(target)).iter().zip(eqs) {
            log::info!("{name} = {}", eq.as_str().unwrap_or_default());
        }
    }
    Ok(summary)
}

/// Writes the last good model before reporting a numerical abort.
fn save_abort(dir: &Path, e: TrainError, target: Target, timing: bool) -> CliError {
    if let TrainError::Numerical {
        last_good, metrics, ..
    } = &e
    {
        let saved = fs::create_dir_all(dir)
            .map_err(CliError::from)
            .and_then(|_| {
                Ok(save_checkpoint(
                    last_good,
                    Some(target),
                    dir.join("last_good.ckpt"),
                )?)
            })
            .and_then(|_| Ok(fs::write(dir.join("metrics.csv"), metrics.to_csv(timing))?));
        match saved {
            Ok(()) => log::error!(
                "saved last good model to {}",
                dir.join("last_good.ckpt").display()
            ),
            Err(w) => log::error!("could not save last good model: {w}"),
        }
    }
    e.into()
}

fn load_pair(a: &TrainArgs) -> Result<(ReplayBuffer, ReplayBuffer)> {
    Ok((load_dataset(&a.train)?, load_dataset(&a.test)?))
}

pub fn train(a: TrainArgs) -> Result<()> {
    if a.lambda.is_empty() || a.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(CliError::Usage(
            "--lambda values must be non-negative".into(),
        ));
    }
    let target = target_of(a.target);
    let spec = model_spec(&a, target);
    spec.validate()?;
    let seed = resolve_seed(a.seed);
    let (train_buf, test_buf) = load_pair(&a)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        iterations_per_epoch: a.iterations_per_epoch,
        lambda: None,
        mc_samples: a.mc_samples,
        seed,
        rng_stream: 0,
        target,
        trace_iterations: false,
    };
    cfg.validate()?;
    let baseline = baseline_mse(&train_buf, &test_buf, target)?;
    let lambdas: Vec<f64> = if spec.kind.is_sparse() {
        a.lambda.clone()
    } else {
        if a.lambda.len() > 1 {
            log::warn!("fcnn has no gates; ignoring the lambda sweep");
        }
        vec![]
    };
    let extra = |l: Option<f64>| {
        json!({
            "seed": seed,
            "model": spec.kind,
            "target": target,
            "baseline_test_mse": baseline,
            "lambda": l,
        })
    };

    if lambdas.len() <= 1 {
        let lambda = lambdas.first().copied();
        let model = Model::build(spec.clone(), seed)?;
        let cfg = TrainConfig { lambda, ..cfg };
        let (model, metrics) = train_model(model, &train_buf, &test_buf, &cfg)
            .map_err(|e| save_abort(&a.out, e, target, a.timing))?;
        let summary = write_run(&a.out, &model, &metrics, target, extra(lambda), a.timing)?;
        return print_json(&summary);
    }

    let runs = lambda_sweep(&spec, seed, &train_buf, &test_buf, &cfg, &lambdas);
    let mut summaries = Vec::new();
    let mut first_err = None;
    for (l, run) in lambdas.iter().zip(runs) {
        let dir = a.out.join(format!("lambda_{l}"));
        match run {
            Ok((model, metrics)) => summaries.push(write_run(
                &dir,
                &model,
                &metrics,
                target,
                extra(Some(*l)),
                a.timing,
            )?),
            Err(e) => {
                let e = save_abort(&dir, e, target, a.timing);
                log::error!("lambda {l}: {e}");
                summaries.push(json!({ "lambda": l, "error": e.to_string() }));
                first_err.get_or_insert(e);
            }
        }
    }
    fs::create_dir_all(&a.out)?;
    let sweep = json!({ "runs": summaries });
    fs::write(
        a.out.join("sweep.json"),
        serde_json::to_string_pretty(&sweep)?,
    )?;
    print_json(&sweep)?;
    first_err.map_or(Ok(()), Err)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&a.ckpt)?;
    let target = meta
        .target
        .ok_or_else(|| CliError::Data("checkpoint does not record a target".into()))?;
    let buf = load_dataset(&a.data)?;
    let mse = evaluate(&model, &buf, target)?;
    print_json(&json!({
        "mse": mse,
        "records": buf.len(),
        "target": target,
        "sparsity": model.sparsity_counts().ok(),
    }))
}

fn output_names(target: Option<Target>) -> Vec<String> {
    match target {
        Some(Target::Transition) => INPUT_NAMES[..OBS_DIM]
            .iter()
            .map(|n| format!("{n}'"))
            .collect(),
        Some(Target::Reward) => vec!["reward".into()],
        None => (0..OBS_DIM).map(|i| format!("y{i}")).collect(),
    }
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&a.ckpt)?;
    let eqs = if a.exact {
        extract_equation_exact(&model)?
    } else {
        extract_equation(&model)?
    };
    let mut out = io::stdout().lock();
    let legend: Vec<String> = INPUT_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| format!("x{i}={n}"))
        .collect();
    writeln!(out, "# {}", legend.join(" "))?;
    let mut names = output_names(meta.target);
    names.resize_with(eqs.len(), String::new);
    for (name, eq) in names.iter().zip(&eqs) {
        writeln!(out, "{name} = {eq}")?;
    }
    Ok(())
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.metrics {
        let text = fs::read_to_string(path)?;
        let epochs = parse_metrics_csv(&text)?;
        let last = epochs.last();
        let best = epochs.iter().map(|e| e.test_mse).reduce(f64::min);
        rows.push(json!({
            "run": path.display().to_string(),
            "epochs": epochs.len(),
            "final_train_mse": last.map(|e| e.train_mse),
            "final_test_mse": last.map(|e| e.test_mse),
            "best_test_mse": best,
            "final_penalty": last.and_then(|e| e.penalty),
            "final_active_gates": last.and_then(|e| e.active_gates),
        }));
    }
    if a.json {
        return print_json(&json!(rows));
    }
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "run,epochs,final_train_mse,final_test_mse,best_test_mse,final_penalty,final_active_gates"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r["run"].as_str().unwrap_or_default(),
            r["epochs"],
            fmt_opt(r["final_train_mse"].as_f64()),
            fmt_opt(r["final_test_mse"].as_f64()),
            fmt_opt(r["best_test_mse"].as_f64()),
            fmt_opt(r["final_penalty"].as_f64()),
            fmt_opt(r["final_active_gates"].as_u64()),
        )?;
    }
    Ok(())
}
