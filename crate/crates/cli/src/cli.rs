use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tpis_core::domain::{Dataset, FeatureSetId};
use tpis_core::evaluation::{
    compare_models, early_table_recipes, final_table_recipes, repeated_eval, single_learner_recipes,
    ComparisonTable, Recipe,
};
use tpis_core::pipeline::{aggregate_accuracy, fit_tpis, run_workflow, Stage};
use tpis_core::stacking::ConfidencePolicy;
use tpis_core::storage::{load_model, read_dataset, save_model, write_dataset};
use tpis_core::synthgen::{default_spec, sample_cohort, CohortSpec};
use tpis_core::TpisError;

use crate::api;
use crate::config::{load_config, process_env, resolve_serve, RunConfig, ENV_MODEL};
use crate::service::{router, AppState};

/// Cohort size used when no dataset is given.
pub const DEFAULT_COHORT_SIZE: usize = 199;

#[derive(Debug, Parser)]
#[command(name = "tpis", version, about = "Two-step TB / pneumonia triage: experiments and inference service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort CSV.
    Synth(SynthArgs),
    /// Fit the two-step model on a labelled cohort and save the archive.
    Train(TrainArgs),
    /// Repeated balanced-split evaluation of one recipe.
    Eval(EvalArgs),
    /// Comparison tables over feature sets and recipes.
    Compare(CompareArgs),
    /// Triage a cohort with a saved model and report routing.
    Workflow(WorkflowArgs),
    /// Diagnose a single patient.
    Diagnose(DiagnoseArgs),
    /// Start the HTTP inference service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML); falls back to $TPIS_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = DEFAULT_COHORT_SIZE)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cohort spec (TOML) replacing the bundled one.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Do not mask any cells.
    #[arg(long)]
    pub no_missing: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model archive to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Cohort CSV; a synthetic cohort of 199 is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// tpis-layer1, tpis-step1, tpis-step2, tpis-routed or a learner (knn, lr, svm, dt, rf, adaboost, gbt).
    #[arg(long, default_value = "tpis-step1")]
    pub recipe: String,
    #[arg(long, default_value = "FS1")]
    pub fs: String,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated feature sets, e.g. FS2,FS3,FS5.
    #[arg(long, default_value = "FS1")]
    pub fs: String,
    /// Comma-separated recipes; defaults depend on the feature set.
    #[arg(long)]
    pub recipes: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write pooled ROC points as CSV.
    #[arg(long)]
    pub roc: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct WorkflowArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Route patients whose confidence score is below this.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Per-patient outcomes CSV.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Routing report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Step-1 JSON document with the 18 feature fields.
    #[arg(long, conflicts_with_all = ["data", "id"])]
    pub input: Option<PathBuf>,
    /// Step-2 JSON document with the 10 lab/CXR fields.
    #[arg(long)]
    pub labs: Option<PathBuf>,
    /// Cohort CSV to take the patient from (with --id).
    #[arg(long, requires = "id")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub id: Option<String>,
    /// With --data: also run step 2 on the record's lab values.
    #[arg(long)]
    pub step2: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(TpisError),
}

impl From<TpisError> for CliError {
    fn from(e: TpisError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn required(flag: Option<PathBuf>, file: Option<&PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| file.cloned()).ok_or_else(|| CliError::Usage(format!("--{name} is required")))
}

fn model_path(flag: Option<PathBuf>, config: &RunConfig) -> CliResult<PathBuf> {
    flag.or_else(|| process_env(ENV_MODEL).map(PathBuf::from))
        .or_else(|| config.paths.model.clone())
        .ok_or_else(|| CliError::Usage("--model is required".into()))
}

fn load_spec(flag: Option<&Path>, config: &RunConfig) -> CliResult<CohortSpec> {
    Ok(match flag.or(config.paths.spec.as_deref()) {
        Some(p) => CohortSpec::load(p)?,
        None => default_spec(),
    })
}

fn dataset_or_synthetic(flag: Option<PathBuf>, config: &RunConfig) -> CliResult<Dataset> {
    match flag.or_else(|| config.paths.data.clone()) {
        Some(p) => Ok(read_dataset(&p)?),
        None => Ok(sample_cohort(&load_spec(None, config)?, DEFAULT_COHORT_SIZE, config.seed, true)?),
    }
}

fn apply_split(args: &SplitArgs, config: &mut RunConfig) {
    if let Some(r) = args.runs {
        config.runs = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(t) = args.train_per_class {
        config.train_per_class = t;
    }
}

fn parse_list<T: std::str::FromStr<Err = TpisError>>(s: &str) -> CliResult<Vec<T>> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(|x| x.parse::<T>().map_err(|e| CliError::Usage(e.to_string()))).collect()
}

fn default_recipes(fs: FeatureSetId) -> Vec<Recipe> {
    match fs {
        FeatureSetId::FS1 => early_table_recipes(),
        FeatureSetId::FS4 => final_table_recipes(),
        _ => single_learner_recipes(),
    }
}

fn cmd_synth(a: SynthArgs) -> CliResult<String> {
    let config = load_config(a.common.config.as_deref(), &process_env)?;
    let out = required(a.out, config.paths.out.as_ref(), "out")?;
    let spec = load_spec(a.spec.as_deref(), &config)?;
    let data = sample_cohort(&spec, a.n, a.seed.unwrap_or(config.seed), !a.no_missing)?;
    write_dataset(&data, &out)?;
    let (tb, p) = data.class_counts();
    Ok(format!("wrote {} records ({tb} TB, {p} P) to {}\n", data.len(), out.display()))
}

fn cmd_train(a: TrainArgs) -> CliResult<String> {
    let mut config = load_config(a.common.config.as_deref(), &process_env)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epsilon {
        config.epsilon = e;
    }
    if let Some(t) = a.threshold {
        config.route_threshold = t;
    }
    let data_path = required(a.data, config.paths.data.as_ref(), "data")?;
    let out = required(a.out, config.paths.model.as_ref(), "out")?;
    let data = read_dataset(&data_path)?;
    let model = fit_tpis(&data, &config.tpis())?;
    save_model(&model, &out)?;
    let (tb, p) = data.class_counts();
    Ok(format!(
        "trained on {} records ({tb} TB, {p} P); layers {}/{}/{}; saved {}\n",
        data.len(),
        model.layer1.len(),
        model.layer2.len(),
        model.step2_layer.len(),
        out.display()
    ))
}

fn cmd_eval(a: EvalArgs) -> CliResult<String> {
    let mut config = load_config(a.common.config.as_deref(), &process_env)?;
    apply_split(&a.split, &mut config);
    config.validate()?;
    let recipe: Recipe = a.recipe.parse().map_err(|e: TpisError| CliError::Usage(e.to_string()))?;
    let fs: FeatureSetId = a.fs.parse().map_err(|e: TpisError| CliError::Usage(e.to_string()))?;
    let data = dataset_or_synthetic(a.split.data, &config)?;
    let report = repeated_eval(recipe, fs, &data, &config.eval_settings())?;
    let mut out = format!("{} on {fs}, {} runs\n", recipe.name(), report.runs);
    for (name, e) in ["accuracy", "auc", "precision", "recall", "f_score"].iter().zip(report.estimates()) {
        let _ = writeln!(out, "  {name:<10} {:>6.2} ± {:.2}", 100.0 * e.mean, 100.0 * e.half_width);
    }
    if report.degenerate_runs > 0 {
        let _ = writeln!(out, "  {} runs had a zero-denominator ratio (reported as 0)", report.degenerate_runs);
    }
    Ok(out)
}

fn cmd_compare(a: CompareArgs) -> CliResult<String> {
    let mut config = load_config(a.common.config.as_deref(), &process_env)?;
    apply_split(&a.split, &mut config);
    config.validate()?;
    let sets: Vec<FeatureSetId> = parse_list(&a.fs)?;
    if sets.is_empty() {
        return Err(CliError::Usage("--fs names no feature set".into()));
    }
    let explicit: Option<Vec<Recipe>> = a.recipes.as_deref().map(parse_list).transpose()?;
    let data = dataset_or_synthetic(a.split.data, &config)?;
    let settings = config.eval_settings();
    let mut table = ComparisonTable { rows: Vec::new() };
    for fs in sets {
        let recipes = explicit.clone().unwrap_or_else(|| default_recipes(fs));
        table.extend(compare_models(fs, &recipes, &data, &settings)?);
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, table.to_csv())?;
    }
    if let Some(p) = &a.roc {
        std::fs::write(p, table.roc_csv())?;
    }
    Ok(format!(
        "{} runs, {} training patients per class; 95% CI half-widths\n{}",
        settings.runs,
        settings.train_per_class,
        table.to_text()
    ))
}

fn cmd_workflow(a: WorkflowArgs) -> CliResult<String> {
    let config = load_config(a.common.config.as_deref(), &process_env)?;
    let model = load_model(&model_path(a.model, &config)?)?;
    let data = read_dataset(&required(a.data, config.paths.data.as_ref(), "data")?)?;
    let policy = ConfidencePolicy {
        epsilon: a.epsilon.unwrap_or(model.policy.epsilon),
        route_threshold: a.threshold.unwrap_or(model.policy.route_threshold),
    };
    let model = model.with_policy(policy)?;
    let result = run_workflow(&model, &data);
    let report = &result.report;
    let mut out = report.render_text();
    if report.evaluated > 0 {
        let agg = aggregate_accuracy(&report.step_one_table(), &report.step_two_table())?;
        let _ = writeln!(
            out,
            "From the rounded tables: {} of {} misdiagnosed, aggregate accuracy {:.2}%",
            agg.misdiagnosed,
            agg.total,
            100.0 * agg.accuracy
        );
    }
    let routed = result.outcomes.iter().filter(|o| o.routed).count();
    let _ = writeln!(out, "{} patients triaged, {routed} routed to step 2", result.outcomes.len());
    for (id, err) in &result.failures {
        let _ = writeln!(out, "failed `{id}`: {err}");
    }
    if let Some(p) = &a.outcomes {
        let mut csv = String::from("id,true_label,early_label,cs,routed,final_label,stage\n");
        for o in &result.outcomes {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                o.id,
                o.true_label.map(|l| l.code()).unwrap_or(""),
                api::outcome_name(o.early_label),
                o.cs,
                o.routed,
                o.final_label.code(),
                if o.stage_decided == Stage::Step1 { 1 } else { 2 }
            );
        }
        std::fs::write(p, csv)?;
    }
    if let Some(p) = &a.json {
        let text = serde_json::to_string_pretty(report).map_err(|e| TpisError::Io(e.to_string()))?;
        std::fs::write(p, text + "\n")?;
    }
    Ok(out)
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Core(TpisError::SchemaError(format!("{}: {e}", path.display()))))
}

fn document_error(e: api::DocumentError) -> CliError {
    CliError::Core(TpisError::SchemaError(e.to_string()))
}

fn cmd_diagnose(a: DiagnoseArgs) -> CliResult<String> {
    let config = load_config(a.common.config.as_deref(), &process_env)?;
    let path = model_path(a.model, &config)?;
    let archive = std::fs::read_to_string(&path)?;
    let model = tpis_core::storage::model_from_str(&archive)?;
    let digest = api::archive_digest(&tpis_core::storage::model_to_string(&model)?);

    let (step1, step2) = match (&a.input, &a.data, &a.id) {
        (Some(input), _, _) => {
            let f = api::parse_step_one(&read_json(input)?).map_err(document_error)?;
            (f, None)
        }
        (None, Some(data), Some(id)) => {
            let d = read_dataset(data)?;
            let rec = d
                .records()
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| CliError::Core(TpisError::SchemaError(format!("no record `{id}` in {}", data.display()))))?;
            let labs = if a.step2 {
                Some(rec.observed_step2().cloned().ok_or_else(|| TpisError::StepTwoUnavailable(Some(id.clone())))?)
            } else {
                None
            };
            (rec.step1.clone(), labs)
        }
        _ => return Err(CliError::Usage("give --input, or --data with --id".into())),
    };
    let step2 = match &a.labs {
        Some(p) => Some(api::parse_step_two(&read_json(p)?).map_err(document_error)?),
        None => step2,
    };
    let first = api::step_one(&model, &digest, &step1)?;
    let mut doc = json!({ "step1": first });
    if let Some(labs) = step2 {
        let meta2 = tpis_core::stacking::VotePanel::new(first.meta2.clone())?;
        doc["step2"] = serde_json::to_value(api::step_two(&model, &meta2, &labs)?).expect("serializable");
    }
    Ok(serde_json::to_string_pretty(&doc).expect("serializable") + "\n")
}

fn cmd_serve(a: ServeArgs) -> CliResult<String> {
    let config = load_config(a.common.config.as_deref(), &process_env)?;
    let settings = resolve_serve(a.host, a.port, a.model, &config, &process_env)?;
    let model = match &settings.model {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let loaded = model.is_some();
    let state = AppState::new(model, Duration::from_secs(settings.session_ttl_secs))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((settings.host.as_str(), settings.port)).await?;
        tracing::info!(addr = %listener.local_addr()?, model_loaded = loaded, "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(String::new())
}

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Workflow(a) => cmd_workflow(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code:
/// 0 on success, 2 for usage errors, 1 for runtime failures.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error[usage]: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(1)
        }
    }
}
