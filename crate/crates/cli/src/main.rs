use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vidrag_core::context::parse_budget;
use vidrag_core::decouple::Query;
use vidrag_core::pipeline::{load_dataset, run_ask, run_bench, run_build, Database, PipelineConfig, Resources};
use vidrag_core::ports::mock::MockFixtures;
use vidrag_core::ports::server::WireServer;
use vidrag_core::ports::Backends;

#[derive(Parser)]
#[command(name = "vidrag", version, about = "Retrieval-augmented question answering over long videos")]
struct Cli {
    /// TOML config file; keys mirror the pipeline settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// Serve every model call from a fixture directory holding mock.json.
    #[arg(long)]
    mock: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract OCR/ASR (and optionally detection) databases for a video.
    Build {
        /// Directory of extracted frames.
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// Database directory (default: <video>.vidrag next to the video).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run keyframe selection and detection now for these entities.
        #[arg(long, value_delimiter = ',')]
        entities: Vec<String>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Answer one question against a database.
    Ask {
        #[arg(long)]
        db: PathBuf,
        /// Build or refresh the database from this video first.
        #[arg(long)]
        video: Option<PathBuf>,
        #[arg(long)]
        question: String,
        /// Comma-separated options, e.g. "A. red,B. blue".
        #[arg(long, value_delimiter = ',')]
        options: Vec<String>,
        /// Retrieval similarity threshold.
        #[arg(long)]
        t: Option<f64>,
        /// Token budget for auxiliary texts, or `paper-default`.
        #[arg(long)]
        budget: Option<String>,
        #[arg(long)]
        no_ocr: bool,
        #[arg(long)]
        no_asr: bool,
        #[arg(long)]
        no_det: bool,
        /// Append the audit record to this JSONL file.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Print the audit record instead of the answer.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score a multiple-choice JSONL dataset.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        budget: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Serve mock fixtures over the extraction wire protocol.
    ServeMock {
        #[arg(long)]
        mock: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: String,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env();
    Ok(cfg)
}

fn backends(args: &BackendArgs, cfg: &PipelineConfig) -> Result<Backends> {
    match &args.mock {
        Some(dir) => Ok(Backends::mock(MockFixtures::load(dir)?)),
        None => {
            if cfg.endpoints.is_empty() {
                bail!("no model endpoints configured; pass --mock DIR, a --config with [[endpoints]], or VIDRAG_*_URL variables");
            }
            Backends::http(&cfg.endpoints).context("connecting to model endpoints")
        }
    }
}

fn default_db_dir(video: &Path) -> PathBuf {
    let mut name = video.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "video".into());
    name.push(".vidrag");
    video.with_file_name(name)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(cli.config.as_deref())?;

    match cli.command {
        Command::Build { video, frames, out, entities, backend } => {
            if let Some(n) = frames {
                cfg.frames_n = n;
            }
            let b = backends(&backend, &cfg)?;
            let out = out.unwrap_or_else(|| default_db_dir(&video));
            let report = run_build(&video, &out, &cfg, &b, &entities)?;
            let m = &report.meta;
            if report.cache_hit {
                println!("{}: up to date", out.display());
            } else {
                println!(
                    "{}: {} OCR records, {} ASR chunks, {} model calls",
                    out.display(),
                    m.ocr_records,
                    m.asr_records,
                    report.port_calls
                );
            }
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Ask { db, video, question, options, t, budget, no_ocr, no_asr, no_det, audit, json, backend } => {
            if let Some(t) = t {
                cfg.t_retrieval = t;
            }
            if let Some(b) = budget {
                cfg.budget_tokens = Some(parse_budget(&b).map_err(anyhow::Error::msg)?);
            }
            cfg.enable_ocr &= !no_ocr;
            cfg.enable_asr &= !no_asr;
            cfg.enable_det &= !no_det;
            let b = backends(&backend, &cfg)?;
            if let Some(v) = video {
                run_build(&v, &db, &cfg, &b, &[])?;
            }
            let database = Database::open(&db)?;
            let res = Resources::load(&cfg)?;
            let query = Query::new(question).with_options(options.into_iter().map(|o| o.trim().to_string()));
            let outcome = run_ask(&database, &query, &cfg, &res, &b)?;
            let line = outcome.audit.to_json_line();
            if let Some(path) = audit {
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .with_context(|| format!("opening {}", path.display()))?;
                writeln!(f, "{line}")?;
            }
            if json {
                println!("{line}");
            } else {
                let a = &outcome.audit;
                if query.is_multiple_choice() {
                    println!("{}", a.predicted);
                }
                println!("{}", a.raw_output.trim());
                eprintln!("auxiliary tokens: {}", a.aux_tokens);
                for w in &a.warnings {
                    eprintln!("warning: {w}");
                }
            }
        }
        Command::Bench { dataset, out, workers, budget, backend } => {
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(b) = budget {
                cfg.budget_tokens = Some(parse_budget(&b).map_err(anyhow::Error::msg)?);
            }
            let b = backends(&backend, &cfg)?;
            let items = load_dataset(&dataset)?;
            let res = Resources::load(&cfg)?;
            let summary = run_bench(&items, &cfg, &res, &b, &out)?;
            print!("{}", summary.table());
            if summary.failures > 0 {
                eprintln!("{} item(s) failed; see {}", summary.failures, out.join("results.jsonl").display());
            }
        }
        Command::ServeMock { mock, addr } => {
            let server = WireServer::new(Backends::mock(MockFixtures::load(&mock)?));
            let handle = server.spawn(&addr).map_err(|e| anyhow::anyhow!("binding {addr}: {e}"))?;
            println!("serving {} on {}", mock.display(), handle.base_url());
            handle.wait();
        }
    }
    Ok(())
}
