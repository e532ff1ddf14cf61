//! Command-line front end for the incremental learner.
//!
//! One experiment per invocation. Every run writes a self-describing
//! directory — the effective config, the result document, the trained
//! checkpoint, graph and prototype exports, an event log, and per-step
//! confusion tables — so a run is reproducible from its artifacts alone.
//!
//! Exit codes: 0 success, 1 runtime failure (bad config value, missing
//! file, numeric abort), 2 usage error (unknown subcommand or flag).

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use navq_core::config::RunConfig;
use navq_core::data::LabeledVector;
use navq_core::harness::{
    build_dataset, export_embeddings, k_sweep, k_sweep_csv, run_ablation, RunOutcome, RunResult,
    TrainedState, Variant, CHECKPOINT_FORMAT,
};
use navq_core::ioutil;
use navq_core::table::FeatureTable;
use navq_core::vq::export_graph;

/// Environment variable naming the directory that holds run directories
/// when neither `--out` nor `out_dir` in the config chooses one.
const OUT_ROOT_VAR: &str = "NAVQ_OUT_ROOT";
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Parser)]
#[command(
    name = "navq",
    version,
    about = "Non-exemplar class-incremental learning with a topology-aware vector quantizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant on the configured stream and write run artifacts
    Train(TrainArgs),
    /// Train every variant under the same config and tabulate the metrics
    Ablate(AblateArgs),
    /// Run the full method once per connectivity value and tabulate
    SweepK(SweepKArgs),
    /// Materialize the configured dataset as feature tables
    GenData(GenDataArgs),
    /// Re-export the topology graph of a stored checkpoint
    ExportGraph(ExportArgs),
    /// Export per-sample features and predictions of a finished run
    ExportEmbeddings(ExportEmbeddingsArgs),
    /// Recompute metrics from a stored result and verify the stored values
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigCommon {
    /// TOML config file; every key is optional and falls back to its
    /// documented default
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Inline config override in TOML syntax, e.g. `--set tau=0.2` or
    /// `--set dataset.sigma=0.1` (repeatable; applied after --config)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Seed override (applied last)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigCommon,

    /// Variant to train: full_napavq, navq_kd, dce_kd, baseline_cce_kd,
    /// navq_gaussian_pa, or finetune
    #[arg(long, default_value = "full_napavq")]
    variant: String,

    /// Run directory (default: <out root>/<variant>-seed<seed>)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: ConfigCommon,

    /// Parent directory for the per-variant run directories
    /// (default: <out root>/ablation-seed<seed>)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepKArgs {
    #[command(flatten)]
    common: ConfigCommon,

    /// Comma-separated connectivity values, e.g. 2,15,50
    #[arg(long, value_name = "K,K,...")]
    values: String,

    /// Output directory (default: <out root>/sweep-k-seed<seed>)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: ConfigCommon,

    /// Output directory (default: <out root>/dataset-seed<seed>)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// A finished run directory containing checkpoint.json
    #[arg(long, value_name = "DIR")]
    run_dir: PathBuf,

    /// Output file (default: <run-dir>/graph.json)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportEmbeddingsArgs {
    /// A finished run directory containing checkpoint.json and
    /// config.toml
    #[arg(long, value_name = "DIR")]
    run_dir: PathBuf,

    /// Which split to embed
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    split: String,

    /// Output file (default: <run-dir>/embeddings.csv)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A finished run directory containing result.json
    #[arg(long, value_name = "DIR")]
    run_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Ablate(args) => ablate(args),
        Command::SweepK(args) => sweep_k(args),
        Command::GenData(args) => gen_data(args),
        Command::ExportGraph(args) => export_graph_cmd(args),
        Command::ExportEmbeddings(args) => export_embeddings_cmd(args),
        Command::Report(args) => report(args),
    }
}

/// Builds the effective config: file (or empty), then `--set` overrides,
/// then `--seed`, then full validation. Unknown keys are rejected by the
/// deserializer.
fn load_config(common: &ConfigCommon) -> Result<RunConfig> {
    let mut table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    for item in &common.set {
        let parsed: toml::Table = item
            .parse()
            .with_context(|| format!("--set {item:?} is not a TOML key = value assignment"))?;
        merge_toml(&mut table, parsed);
    }
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).context("seed too large for the config format")?;
        table.insert("seed".to_string(), toml::Value::Integer(seed));
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| anyhow!("invalid config: {e}"))?;
    config.validate()?;
    Ok(config)
}

/// Deep-merges `over` into `base`; tables merge recursively, everything
/// else replaces.
fn merge_toml(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(bt)), toml::Value::Table(ot)) => merge_toml(bt, ot),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Picks the run directory: the explicit flag wins, then the config's
/// `out_dir`, then `<out root>/<name>` where the out root comes from
/// `NAVQ_OUT_ROOT` or defaults to `runs`.
fn resolve_run_dir(explicit: Option<PathBuf>, config: &RunConfig, name: &str) -> PathBuf {
    if let Some(dir) = explicit {
        return dir;
    }
    if let Some(dir) = &config.out_dir {
        return PathBuf::from(dir);
    }
    let root = std::env::var(OUT_ROOT_VAR).unwrap_or_else(|_| DEFAULT_OUT_ROOT.to_string());
    Path::new(&root).join(name)
}

/// Writes the self-describing artifact set of one finished run.
fn write_run_artifacts(dir: &Path, config: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    let config_toml =
        toml::to_string_pretty(config).context("serializing the effective config")?;
    ioutil::write_string(&dir.join("config.toml"), &config_toml)?;
    ioutil::save_json(&dir.join("result.json"), &outcome.result)?;
    ioutil::save_json(&dir.join("checkpoint.json"), &outcome.state)?;
    ioutil::save_json(
        &dir.join("graph.json"),
        &export_graph(&outcome.state.cvs, &outcome.state.graph),
    )?;
    ioutil::save_json(&dir.join("prototypes.json"), &outcome.state.store)?;
    let mut log = outcome.events.join("\n");
    log.push('\n');
    ioutil::write_string(&dir.join("events.log"), &log)?;
    for (t, cm) in outcome.result.confusions.iter().enumerate() {
        let mut csv = String::new();
        for row in cm {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        ioutil::write_string(&dir.join(format!("confusion_step{t}.csv")), &csv)?;
    }
    Ok(())
}

fn print_result(result: &RunResult) {
    println!("variant {} seed {}", result.variant, result.seed);
    for t in 0..result.accuracy.num_tasks() {
        let row: Vec<String> = result
            .accuracy
            .row(t)
            .iter()
            .map(|a| format!("{a:.4}"))
            .collect();
        println!("after task {t}: [{}]", row.join(", "));
    }
    println!("average accuracy   {:.4}", result.average_accuracy);
    println!("average forgetting {:.4}", result.average_forgetting);
}

fn train(args: TrainArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let variant = Variant::parse(&args.variant)?;
    let dir = resolve_run_dir(
        args.out,
        &config,
        &format!("{}-seed{}", variant.name(), config.seed),
    );
    let outcome = run_ablation(&config, variant)?;
    write_run_artifacts(&dir, &config, &outcome)?;
    print_result(&outcome.result);
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let parent = resolve_run_dir(
        args.out,
        &config,
        &format!("ablation-seed{}", config.seed),
    );
    let mut summary = String::from("variant,avg_accuracy,avg_forgetting\n");
    for variant in Variant::ALL {
        let outcome = run_ablation(&config, variant)?;
        write_run_artifacts(&parent.join(variant.name()), &config, &outcome)?;
        println!(
            "{:<18} avg accuracy {:.4}  avg forgetting {:.4}",
            variant.name(),
            outcome.result.average_accuracy,
            outcome.result.average_forgetting
        );
        summary.push_str(&format!(
            "{},{},{}\n",
            variant.name(),
            outcome.result.average_accuracy,
            outcome.result.average_forgetting
        ));
    }
    ioutil::write_string(&parent.join("ablation.csv"), &summary)?;
    println!("artifacts in {}", parent.display());
    Ok(())
}

fn sweep_k(args: SweepKArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let values: Vec<usize> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .with_context(|| format!("invalid connectivity value {:?}", v.trim()))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("--values needs at least one connectivity value");
    }
    let dir = resolve_run_dir(args.out, &config, &format!("sweep-k-seed{}", config.seed));
    let rows = k_sweep(&config, &values)?;
    let csv = k_sweep_csv(&rows);
    ioutil::write_string(&dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let dir = resolve_run_dir(args.out, &config, &format!("dataset-seed{}", config.seed));
    let (dataset, schedule) = build_dataset(&config)?;
    let table_of = |rows: &[LabeledVector]| FeatureTable {
        feature_names: (0..dataset.input_dim).map(|i| format!("f{i}")).collect(),
        label_name: "label".to_string(),
        rows: rows.to_vec(),
        label_mapping: (0..dataset.num_classes as i64).collect(),
    };
    table_of(&dataset.train).save(&dir.join("train.csv"))?;
    table_of(&dataset.test).save(&dir.join("test.csv"))?;
    ioutil::save_json(&dir.join("schedule.json"), &schedule)?;
    println!(
        "{} train rows, {} test rows, {} classes over {} tasks",
        dataset.train.len(),
        dataset.test.len(),
        dataset.num_classes,
        schedule.num_tasks()
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn load_checkpoint(run_dir: &Path) -> Result<TrainedState> {
    let state: TrainedState = ioutil::load_json(&run_dir.join("checkpoint.json"))?;
    if state.format != CHECKPOINT_FORMAT {
        bail!(
            "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT:?})",
            state.format
        );
    }
    Ok(state)
}

fn export_graph_cmd(args: ExportArgs) -> Result<()> {
    let state = load_checkpoint(&args.run_dir)?;
    let out = args.out.unwrap_or_else(|| args.run_dir.join("graph.json"));
    ioutil::save_json(&out, &export_graph(&state.cvs, &state.graph))?;
    println!("graph written to {}", out.display());
    Ok(())
}

fn export_embeddings_cmd(args: ExportEmbeddingsArgs) -> Result<()> {
    let state = load_checkpoint(&args.run_dir)?;
    let config_text = ioutil::read_string(&args.run_dir.join("config.toml"))?;
    let config: RunConfig = toml::from_str(&config_text)
        .with_context(|| format!("parsing {}", args.run_dir.join("config.toml").display()))?;
    let (dataset, schedule) = build_dataset(&config)?;
    let samples = if args.split == "train" {
        &dataset.train
    } else {
        &dataset.test
    };
    let out = args
        .out
        .unwrap_or_else(|| args.run_dir.join("embeddings.csv"));
    export_embeddings(&state, samples, &schedule, &out)?;
    println!("{} rows written to {}", samples.len(), out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let result: RunResult = ioutil::load_json(&args.run_dir.join("result.json"))?;
    let avg_accuracy = result.accuracy.average_accuracy()?;
    let avg_forgetting = result.accuracy.average_forgetting()?;
    let per_step: Vec<f64> = (0..result.accuracy.num_tasks())
        .map(|t| result.accuracy.forgetting_at(t))
        .collect();
    let mut mismatches = Vec::new();
    if avg_accuracy != result.average_accuracy {
        mismatches.push(format!(
            "average accuracy: stored {} but the matrix gives {avg_accuracy}",
            result.average_accuracy
        ));
    }
    if avg_forgetting != result.average_forgetting {
        mismatches.push(format!(
            "average forgetting: stored {} but the matrix gives {avg_forgetting}",
            result.average_forgetting
        ));
    }
    if per_step != result.per_step_forgetting {
        mismatches.push("per-step forgetting differs from the matrix".to_string());
    }
    print_result(&result);
    if !mismatches.is_empty() {
        bail!("metric mismatch: {}", mismatches.join("; "));
    }
    println!("metrics verified against the accuracy matrix");
    Ok(())
}
