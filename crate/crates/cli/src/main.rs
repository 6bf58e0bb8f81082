// SPDX-License-Identifier: MIT OR Apache-2.0

//! `neuronscope`: runs the analyses over an activation store and writes a
//! report bundle (JSON, CSV and SVG files indexed by `report.json`).

mod bundle;
mod config;
mod error;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use neuronscope::actstore::StoreHandle;
use neuronscope::synth::{write_demo_store, DemoSpec};

use crate::bundle::Bundle;
use crate::config::{Analysis, AnalysisConfig, ConfigError, Format, Layers};
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Parser, Debug)]
#[command(
    name = "neuronscope",
    version,
    about = "Neuron-level analysis of FFN activation stores"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Activation store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,

    /// Output directory for the report bundle.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,

    /// Layers to analyze: "all", or ranges such as "0-5,8".
    #[arg(long, global = true)]
    layers: Option<Layers>,

    /// Artifact formats to write (json, csv, svg).
    #[arg(long = "format", global = true, value_delimiter = ',')]
    formats: Vec<String>,

    /// Override any configuration key, e.g. `--set positional.min_run=64`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Worker threads (default: all cores).
    #[arg(long, short, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the configuration and read every store file end to end.
    Validate,
    /// Run a single analysis.
    Analyze(AnalyzeArgs),
    /// Run the analyses enabled in the configuration.
    Report,
    /// Run every analysis.
    All,
    /// Write a small synthetic store with planted neurons.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    analysis: Analysis,

    /// N-gram lengths (ngram: 1,2,3; detectors: 1,3).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,

    /// Promoted/suppressed list length.
    #[arg(long)]
    k: Option<usize>,

    /// Subtract the mean vocabulary score before ranking.
    #[arg(long)]
    center: bool,

    /// Covering-set coverage fraction.
    #[arg(long)]
    coverage: Option<f64>,

    /// Mutual-information selection threshold, in nats.
    #[arg(long)]
    threshold: Option<f64>,

    /// Strong-band width around 0 and 1.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Destination directory (must not exist).
    dest: PathBuf,
    #[arg(long, default_value_t = DemoSpec::default().n_layers)]
    n_layers: usize,
    #[arg(long, default_value_t = DemoSpec::default().d_ffn)]
    d_ffn: usize,
    #[arg(long, default_value_t = DemoSpec::default().context_len)]
    context_len: usize,
    #[arg(long, default_value_t = DemoSpec::default().full_docs)]
    docs: usize,
    #[arg(long, default_value_t = DemoSpec::default().seed)]
    seed: u64,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| ConfigError::one(format!("--set: empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::one(format!("--set: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// File, then `--set`, then the dedicated flags.
fn load_config(cli: &Cli) -> Result<AnalysisConfig, ConfigError> {
    let mut table = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::one(format!("cannot read config {}: {e}", path.display())))?;
            // Parsing the typed struct first gives line numbers for bad keys.
            AnalysisConfig::from_toml(&text, path)?;
            toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::one(e.to_string()))?
        }
        None => toml::Table::new(),
    };
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::one(format!("--set expects KEY=VALUE, got `{s}`")))?;
        set_key(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let mut config: AnalysisConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::one(format!("--set: {}", e.message().trim())))?;

    if let Some(p) = &cli.store {
        config.store = Some(p.clone());
    }
    if let Some(p) = &cli.out {
        config.output = Some(p.clone());
    }
    if let Some(l) = &cli.layers {
        config.layers = l.clone();
    }
    if !cli.formats.is_empty() {
        config.formats = cli
            .formats
            .iter()
            .map(|f| match f.trim() {
                "json" => Ok(Format::Json),
                "csv" => Ok(Format::Csv),
                "svg" => Ok(Format::Svg),
                other => Err(ConfigError::one(format!("--format: unknown format `{other}`"))),
            })
            .collect::<Result<_, _>>()?;
    }
    if let Command::Analyze(a) = &cli.command {
        match a.analysis {
            Analysis::Ngram if !a.n.is_empty() => config.ngram.n = a.n.clone(),
            Analysis::Detectors | Analysis::Suppression if !a.n.is_empty() => {
                config.detectors.n = a.n.clone()
            }
            _ => {}
        }
        if let Some(c) = a.coverage {
            config.ngram.coverage = c;
            config.detectors.coverage = c;
        }
        if let Some(k) = a.k {
            config.suppression.k = k;
        }
        if a.center {
            config.suppression.center = true;
        }
        if let Some(t) = a.threshold {
            config.positional.threshold = t;
        }
        if let Some(e) = a.epsilon {
            config.positional.epsilon = e;
        }
    }
    Ok(config)
}

fn open_store(config: &AnalysisConfig) -> CliResult<(StoreHandle, Vec<usize>)> {
    config.validate()?;
    let store = StoreHandle::open(config.store.as_ref().expect("validated"))?;
    let layers = config
        .layers
        .resolve(store.manifest().n_layers)
        .map_err(ConfigError::one)?;
    Ok((store, layers))
}

fn validate(config: &AnalysisConfig) -> CliResult<()> {
    let (store, layers) = open_store(config)?;
    store.token_index()?;
    let events = store.verify()?;
    let m = store.manifest();
    let out = json!({
        "model_id": m.model_id,
        "n_layers": m.n_layers,
        "d_ffn": m.d_ffn,
        "vocab_size": m.vocab_size,
        "context_len": m.context_len,
        "documents": store.n_documents(),
        "tokens": store.total_tokens(),
        "events_per_layer": events,
        "has_unembedding": store.has_unembedding(),
        "selected_layers": layers,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn analyze(config: &AnalysisConfig, analyses: &[Analysis]) -> CliResult<PathBuf> {
    let output = config.output_dir()?.to_path_buf();
    let (store, layers) = open_store(config)?;
    let bundle = Bundle::create(&output, &config.formats)?;
    let started = Instant::now();
    let mut run = Run {
        store: &store,
        config,
        layers: layers.clone(),
        bundle,
        summaries: Map::new(),
    };
    run.execute(analyses)?;
    log::info!("analyses finished in {:.1} s", started.elapsed().as_secs_f64());

    let m = store.manifest();
    let mut body = Map::new();
    body.insert("tool".into(), json!("neuronscope"));
    body.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    body.insert(
        "generated_at".into(),
        json!(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
    );
    body.insert(
        "store".into(),
        json!({
            "path": config.store,
            "model_id": m.model_id,
            "n_layers": m.n_layers,
            "d_ffn": m.d_ffn,
            "vocab_size": m.vocab_size,
            "context_len": m.context_len,
            "documents": store.n_documents(),
            "tokens": store.total_tokens(),
        }),
    );
    body.insert("layers".into(), json!(layers));
    body.insert(
        "analyses".into(),
        Value::Array(analyses.iter().map(|a| json!(a.name())).collect()),
    );
    // The bundle location is left out so that a moved or copied bundle
    // still matches a fresh run.
    let mut effective = serde_json::to_value(config).expect("config serializes");
    effective.as_object_mut().expect("struct").remove("output");
    body.insert("config".into(), effective);
    body.insert("results".into(), Value::Object(run.summaries));
    run.bundle.finish(body)
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let spec = DemoSpec {
        n_layers: args.n_layers,
        d_ffn: args.d_ffn,
        context_len: args.context_len,
        full_docs: args.docs,
        seed: args.seed,
        ..DemoSpec::default()
    };
    let (root, plan) = write_demo_store(&args.dest, &spec)?;
    let planted: usize = plan.detectors.iter().map(Vec::len).sum();
    let positional: usize = plan.positional.iter().map(Vec::len).sum();
    println!(
        "wrote {} ({} layers, {planted} token detectors, {positional} positional neurons planted)",
        root.display(),
        spec.n_layers
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ConfigError::one("--jobs must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    if let Command::Synth(args) = &cli.command {
        return synth(args);
    }
    let config = load_config(cli)?;
    match &cli.command {
        Command::Validate => validate(&config),
        Command::Analyze(a) => report_path(analyze(&config, &[a.analysis])?),
        Command::Report => report_path(analyze(&config, &config.analyses)?),
        Command::All => report_path(analyze(&config, &Analysis::ALL)?),
        Command::Synth(_) => unreachable!(),
    }
}

fn report_path(path: PathBuf) -> CliResult<()> {
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEURONSCOPE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(c) if c.0.len() > 1 => {
                    eprintln!("error: invalid configuration:");
                    for msg in &c.0 {
                        eprintln!("  {msg}");
                    }
                }
                e => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
