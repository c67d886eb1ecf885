//! `featforge` command line: index a document folder, run the feature loop,
//! and inspect finished runs.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime or
//! transport failure.

mod config;
mod report;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use featforge::engine::{self, EngineError};
use featforge::knowledge::{Embedder, KnowledgeError, RemoteEmbedder, DEFAULT_DIM};
use featforge::learners::LearnError;
use featforge::oracle::{HttpTransport, OracleError, ReplayTransport, TransportError, API_KEY_VAR};
use featforge::{load_csv, Gateway, HashEmbedder, KnowledgeBase};
use thiserror::Error;

use config::{FileConfig, Mode, DEFAULT_LLM_ENDPOINT, DEFAULT_LLM_MODEL};
use report::RunSummary;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "featforge", version, about = "Retrieval-augmented feature generation for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed every .txt/.md file of a folder into an index file.
    Index {
        #[arg(long)]
        kb_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        /// Use a remote embedding endpoint instead of the hashing embedder.
        #[arg(long, requires = "embed_model")]
        embed_endpoint: Option<String>,
        #[arg(long, requires = "embed_endpoint")]
        embed_model: Option<String>,
    },
    /// Run the feature-generation loop.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        /// Text file describing the dataset.
        #[arg(long)]
        description: PathBuf,
        /// Index file written by `index`.
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Answer model calls from a script of `---`-separated records.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Print the summary of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index {
            kb_dir,
            out,
            dim,
            embed_endpoint,
            embed_model,
        } => cmd_index(&kb_dir, &out, dim, embed_endpoint.zip(embed_model)),
        Command::Run {
            data,
            target,
            description,
            kb,
            config,
            out,
            replay,
        } => cmd_run(&RunArgs {
            data,
            target,
            description,
            kb,
            config,
            out,
            replay,
        }),
        Command::Report { run } => cmd_report(&run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn api_key() -> Option<String> {
    std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty())
}

fn cmd_index(kb_dir: &Path, out: &Path, dim: usize, remote: Option<(String, String)>) -> Result<(), CliError> {
    if dim == 0 {
        return Err(CliError::Usage("--dim must be at least 1".into()));
    }
    let embedder: Box<dyn Embedder> = match remote {
        None => Box::new(HashEmbedder::new(dim)),
        Some((endpoint, model)) => Box::new(RemoteEmbedder::new(endpoint, model, dim, api_key()).map_err(knowledge_error)?),
    };
    let kb = KnowledgeBase::index_dir(kb_dir, embedder.as_ref()).map_err(knowledge_error)?;
    kb.save(out).map_err(knowledge_error)?;
    println!("indexed {} documents with {} into {}", kb.len(), kb.embedder_id, out.display());
    Ok(())
}

fn knowledge_error(e: KnowledgeError) -> CliError {
    match e {
        KnowledgeError::Transport(_) => CliError::Runtime(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

struct RunArgs {
    data: PathBuf,
    target: String,
    description: PathBuf,
    kb: PathBuf,
    config: PathBuf,
    out: PathBuf,
    replay: Option<PathBuf>,
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn build_gateway(file: &FileConfig, replay: Option<&Path>) -> Result<Gateway, CliError> {
    let mode = if replay.is_some() { Mode::Replay } else { file.mode.unwrap_or_default() };
    Ok(match mode {
        Mode::Replay => {
            let path = replay.ok_or_else(|| CliError::Usage("mode \"replay\" needs --replay FILE".into()))?;
            let transport = ReplayTransport::from_file(path)
                .map_err(|e| CliError::Usage(format!("cannot read replay file {}: {e}", path.display())))?;
            Gateway::new(Box::new(transport))
        }
        Mode::Fallback => Gateway::fallback(),
        Mode::Live => {
            let endpoint = file.llm_endpoint.clone().unwrap_or_else(|| DEFAULT_LLM_ENDPOINT.into());
            let model = file.llm_model.clone().unwrap_or_else(|| DEFAULT_LLM_MODEL.into());
            let transport = HttpTransport::from_env(endpoint, model).map_err(|e| match e {
                TransportError::MissingApiKey => {
                    CliError::Usage(format!("live mode needs the {API_KEY_VAR} environment variable"))
                }
                other => CliError::Runtime(other.to_string()),
            })?;
            Gateway::new(Box::new(transport))
        }
    })
}

fn build_embedder(kb: &KnowledgeBase, file: &FileConfig) -> Result<Box<dyn Embedder>, CliError> {
    if kb.embedder_id.starts_with(HashEmbedder::ID_PREFIX) {
        return Ok(Box::new(kb.hash_embedder().map_err(knowledge_error)?));
    }
    let (Some(endpoint), Some(model)) = (&file.embed_endpoint, &file.embed_model) else {
        return Err(CliError::Usage(format!(
            "index was built with `{}`; set embed_endpoint and embed_model in the config",
            kb.embedder_id
        )));
    };
    let embedder = RemoteEmbedder::new(endpoint.clone(), model.clone(), kb.dim, api_key()).map_err(knowledge_error)?;
    if embedder.id() != kb.embedder_id {
        return Err(CliError::Usage(format!(
            "index was built with `{}`, config describes `{}`",
            kb.embedder_id,
            embedder.id()
        )));
    }
    Ok(Box::new(embedder))
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn engine_error(e: &EngineError) -> CliError {
    let msg = e.to_string();
    match e {
        EngineError::Config(_)
        | EngineError::Data(_)
        | EngineError::Learn(LearnError::InvalidConfig(_))
        | EngineError::Oracle(OracleError::EmptySchema)
        | EngineError::Knowledge(KnowledgeError::DimensionMismatch(..) | KnowledgeError::EmptyCorpus(_)) => {
            CliError::Usage(msg)
        }
        _ => CliError::Runtime(msg),
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let file = FileConfig::load(&args.config)?;
    let config = file.engine()?;
    // resolved first so a missing key fails before anything else happens
    let mut gateway = build_gateway(&file, args.replay.as_deref())?;

    let description = read_text(&args.description, "description")?;
    let data = load_csv(&args.data, &args.target, description.trim())
        .map_err(|e| CliError::Usage(format!("data {}: {e}", args.data.display())))?;
    let kb = KnowledgeBase::load(&args.kb).map_err(knowledge_error)?;
    let embedder = build_embedder(&kb, &file)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    let prov_path = args.out.join("provenance.jsonl");
    let mut prov = BufWriter::new(File::create(&prov_path).map_err(io_error(&prov_path))?);
    writeln!(prov, "{}", engine::provenance_header()).map_err(io_error(&prov_path))?;
    prov.flush().map_err(io_error(&prov_path))?;

    let mut write_failure = None;
    let outcome = engine::run_with(
        &config,
        &data,
        &kb,
        embedder.as_ref(),
        &mut gateway,
        &config.learner,
        &mut |record| {
            let res = writeln!(prov, "{}", engine::iteration_line(record)).and_then(|_| prov.flush());
            if let Err(e) = res {
                write_failure.get_or_insert(e);
            }
            eprintln!(
                "iteration {}: {:?}, best {:.4}",
                record.t, record.decision, record.best_score
            );
        },
    );
    prov.flush().map_err(io_error(&prov_path))?;
    drop(prov);
    if let Some(e) = write_failure {
        return Err(io_error(&prov_path)(e));
    }
    let res = match outcome {
        Ok(res) => res,
        Err(aborted) => {
            eprintln!(
                "run aborted after {} completed iterations; provenance kept in {}",
                aborted.completed.len(),
                prov_path.display()
            );
            return Err(engine_error(&aborted.cause));
        }
    };

    let summary = RunSummary::new(&res, config.metric);
    write_outputs(&args.out, &res, &summary)?;
    print!("{}", summary.render());
    Ok(())
}

fn write_outputs(out: &Path, res: &engine::RunResult, summary: &RunSummary) -> Result<(), CliError> {
    let metrics_path = out.join("metrics.txt");
    let mut metrics = format!(
        "cv_base_score={}\ncv_best_score={}\nn_original={}\nn_generated={}\n",
        res.base_score,
        res.best_score,
        res.initial_features.len(),
        res.n_generated()
    );
    match &res.final_test {
        Some(rep) => metrics.push_str(&featforge::metrics::render_key_values(rep, res.info_gain_bits)),
        None => metrics.push_str(&format!("info_gain_bits={}\n", res.info_gain_bits)),
    }
    fs::write(&metrics_path, metrics).map_err(io_error(&metrics_path))?;

    let csv_path = out.join("augmented.csv");
    let mut csv = Vec::new();
    writeln!(
        csv,
        "# original {}, generated {}",
        res.initial_features.len(),
        res.n_generated()
    )
    .expect("writing to memory");
    res.augmented
        .write_csv(&mut csv)
        .map_err(|e| CliError::Runtime(format!("cannot serialize augmented data: {e}")))?;
    fs::write(&csv_path, csv).map_err(io_error(&csv_path))?;

    let json_path = out.join("run.json");
    let json = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    fs::write(&json_path, json).map_err(io_error(&json_path))?;

    let report_path = out.join("report.txt");
    fs::write(&report_path, summary.render()).map_err(io_error(&report_path))?;
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<(), CliError> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("no finished run in {}: {e}", dir.display())))?;
    let summary: RunSummary =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    print!("{}", summary.render());
    Ok(())
}
