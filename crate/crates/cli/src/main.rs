mod config;

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sarceval_annotate::{Session, SessionConfig};
use sarceval_client::embed::HttpEncoder;
use sarceval_client::{run_matrix, HttpClient, MockScript, MockServer};
use sarceval_core::corpus::{load_manifest, sample_balanced};
use sarceval_core::metrics::similarity::{EncoderSimilarity, HashingEncoder};
use sarceval_core::prompt::load_prompt_library;
use sarceval_core::report::{compute_tables, export_cases, summary_markdown, CaseFilter, RunView};
use sarceval_core::runstore::{read_corpus, read_records, RunStatus, RunStore};
use sarceval_core::TaskKind;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "sarceval", version, about = "Multimodal sarcasm evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) the evaluation matrix described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute metric tables for a run and write them as CSV.
    Metrics {
        run_dir: PathBuf,
        /// Output directory [default: <run_dir>/metrics]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Embedding endpoint for rationale similarity; defaults to a local
        /// hashing encoder.
        #[arg(long)]
        embedding_url: Option<String>,
        /// Environment variable holding the embedding endpoint's token.
        #[arg(long)]
        embedding_token_env: Option<String>,
    },
    /// Print a Markdown overview of a run.
    Report { run_dir: PathBuf },
    /// Export side-by-side model outputs for samples matching a filter.
    ExportCases {
        run_dir: PathBuf,
        /// bsc-disagreement, tsc-neutral, scs-lcs-neutral or all
        #[arg(long)]
        filter: CaseFilter,
        /// Output file [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a balanced mini-benchmark from one or more corpus manifests.
    Sample {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value_t = 25)]
        per_class: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the scripted mock model endpoint.
    MockServe {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 8900)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
    /// Serve the human-evaluation API over a run.
    AnnotateServe {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 8901)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Allowed annotator ids (comma separated); any id when omitted.
        #[arg(long, value_delimiter = ',')]
        annotators: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<TaskKind>,
    },
}

/// Exit status when some cells failed and the run should be repeated.
const EXIT_INCOMPLETE: u8 = 3;

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn cmd_run(config_path: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config_path)?;
    let library = load_prompt_library(&cfg.prompts)
        .with_context(|| format!("loading prompt library {}", cfg.prompts.display()))?;
    let corpus = load_manifest(&cfg.corpus).with_context(|| format!("loading corpus {}", cfg.corpus.display()))?;
    let mut store = RunStore::open(&cfg.run_dir, &cfg.digest(&library), &corpus)?;
    let backend = Arc::new(HttpClient::new(Duration::from_secs(cfg.timeout_secs), cfg.max_tokens)?);
    let summary = runtime()?.block_on(run_matrix(
        backend,
        &corpus,
        &cfg.models,
        &cfg.tasks,
        &library,
        cfg.parallelism,
        (&cfg.ladder).into(),
        &mut store,
    ))?;
    println!(
        "run {}: {} cells, {} pending, {} ok, {} missing, {} failed, {} requests",
        store.run_id(),
        summary.total_cells,
        summary.pending,
        summary.ok,
        summary.missing,
        summary.failed,
        summary.requests
    );
    for f in &summary.failures {
        eprintln!("failed: {f}");
    }
    if summary.failed > 0 {
        eprintln!("{} cells failed; run again to retry them", summary.failed);
        return Ok(ExitCode::from(EXIT_INCOMPLETE));
    }
    store.set_status(RunStatus::Complete)?;
    Ok(ExitCode::SUCCESS)
}

fn load_view(run_dir: &Path) -> Result<(RunView, sarceval_core::Corpus)> {
    let corpus = read_corpus(run_dir)?;
    let records = read_records(run_dir)?;
    if records.is_empty() {
        bail!("run store {} holds no records", run_dir.display());
    }
    Ok((RunView::new(&records, corpus.gold_labels())?, corpus))
}

fn cmd_metrics(run_dir: &Path, out: Option<PathBuf>, url: Option<String>, token_env: Option<String>) -> Result<()> {
    let (view, _) = load_view(run_dir)?;
    let tables = match url {
        Some(url) => {
            let encoder = HttpEncoder::new(&url, token_env, Duration::from_secs(120))?;
            compute_tables(&view, &EncoderSimilarity(encoder))?
        }
        None => compute_tables(&view, &EncoderSimilarity(HashingEncoder::default()))?,
    };
    let out = out.unwrap_or_else(|| run_dir.join("metrics"));
    tables.write_to(&out)?;
    for name in tables.files.keys() {
        println!("{}", out.join(name).display());
    }
    Ok(())
}

fn cmd_export(run_dir: &Path, filter: CaseFilter, out: Option<PathBuf>) -> Result<()> {
    let (view, corpus) = load_view(run_dir)?;
    let bundle = export_cases(&view, &corpus, filter);
    if bundle.cases.is_empty() {
        eprintln!("no samples match the filter");
    }
    let json = serde_json::to_string_pretty(&bundle)?;
    match out {
        Some(p) => std::fs::write(&p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_sample(manifests: &[PathBuf], per_class: usize, seed: u64, out: &Path) -> Result<()> {
    let corpora = manifests
        .iter()
        .map(|m| load_manifest(m).with_context(|| format!("loading {}", m.display())))
        .collect::<Result<Vec<_>>>()?;
    let picked = sample_balanced(&corpora, per_class, seed)?;
    picked.export_manifest(out)?;
    let c = picked.counts();
    println!(
        "{} samples ({} sarcastic, {} non-sarcastic) written to {}",
        picked.len(),
        c.sarcastic,
        c.non_sarcastic,
        out.display()
    );
    Ok(())
}

fn cmd_mock(script: &Path, addr: SocketAddr) -> Result<()> {
    let script = MockScript::from_path(script)?;
    runtime()?.block_on(async move {
        let server = MockServer::start(script, addr).await?;
        println!("mock endpoint listening on {}", server.base_url());
        tokio::select! {
            _ = server.wait() => {}
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(())
    })
}

fn cmd_annotate(run_dir: &Path, addr: SocketAddr, cfg: SessionConfig) -> Result<()> {
    let session = Arc::new(Session::open(run_dir, &cfg)?);
    let n = session.items().len();
    runtime()?.block_on(async move {
        let serve = sarceval_annotate::serve(session, addr, |bound| {
            println!("annotation service on http://{bound} ({n} items)");
        });
        tokio::select! {
            r = serve => r.context("annotation server")?,
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Metrics {
            run_dir,
            out,
            embedding_url,
            embedding_token_env,
        } => cmd_metrics(&run_dir, out, embedding_url, embedding_token_env).map(|_| ExitCode::SUCCESS),
        Command::Report { run_dir } => load_view(&run_dir).map(|(view, _)| {
            print!("{}", summary_markdown(&view));
            ExitCode::SUCCESS
        }),
        Command::ExportCases { run_dir, filter, out } => cmd_export(&run_dir, filter, out).map(|_| ExitCode::SUCCESS),
        Command::Sample {
            manifests,
            per_class,
            seed,
            out,
        } => cmd_sample(&manifests, per_class, seed, &out).map(|_| ExitCode::SUCCESS),
        Command::MockServe { script, port, host } => {
            cmd_mock(&script, SocketAddr::new(host, port)).map(|_| ExitCode::SUCCESS)
        }
        Command::AnnotateServe {
            run_dir,
            port,
            host,
            annotators,
            models,
            tasks,
        } => {
            let cfg = SessionConfig {
                models,
                tasks,
                variants: Vec::new(),
                annotators,
            };
            cmd_annotate(&run_dir, SocketAddr::new(host, port), cfg).map(|_| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
