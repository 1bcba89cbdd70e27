use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand};
use poiverify::pipeline::Variant;
use poiverify_cli::serve::serve;
use poiverify_cli::{
    cmd_bench, cmd_build_index, cmd_generate, cmd_train, cmd_verify, load_verifier, CliError,
    CliResult, RunConfig, VerifyInput, WireRequest,
};

#[derive(Parser)]
#[command(
    name = "poiverify",
    version,
    about = "Verify POIs from signboard images and coordinates"
)]
struct Cli {
    /// JSON run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory (overrides the config).
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and OCR channel.
    Generate {
        #[arg(long)]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_pois: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Train the multimodal embedder on the train split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_pois: Option<usize>,
    },
    /// Fit the name corrector and build the ANN forest.
    BuildIndex,
    /// Verify one request and print the result as JSON.
    Verify {
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// File holding one request object, as sent to the service.
        #[arg(long, conflicts_with = "test_index")]
        request: Option<PathBuf>,
        /// Use the n-th test-split submission of the corpus.
        #[arg(long)]
        test_index: Option<usize>,
    },
    /// Evaluate variants on the test split and write the report.
    Bench {
        /// Comma-separated subset of v1, v1*, v2, v2*.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
        #[arg(long)]
        max_queries: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Also print the report JSON.
        #[arg(long)]
        json: bool,
    },
    /// Serve newline-delimited JSON verification requests over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Print the effective configuration.
    Config,
}

static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn on_stop_signal(_: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
}

/// Routes SIGINT and SIGTERM to the service's stop flag.
fn install_stop_handler() {
    let handler = on_stop_signal as extern "C" fn(libc::c_int);
    for sig in [libc::SIGINT, libc::SIGTERM] {
        // SAFETY: the handler only performs an atomic store, which is
        // async-signal-safe.
        unsafe {
            libc::signal(sig, handler as libc::sighandler_t);
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: poiverify::Error| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = cli.dir {
        cfg.paths.dir = d;
    }
    match cli.command {
        Command::Generate {
            force,
            seed,
            n_pois,
            views,
        } => {
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            if let Some(n) = n_pois {
                cfg.corpus.n_pois = n;
            }
            if let Some(v) = views {
                cfg.corpus.views_per_poi = v;
            }
            println!("{}", cmd_generate(&cfg, force)?);
        }
        Command::Train { epochs, max_pois } => {
            if let Some(e) = epochs {
                cfg.embedder.train.epochs = e;
            }
            if max_pois.is_some() {
                cfg.embedder.train.max_pois = max_pois;
            }
            println!("{}", cmd_train(&cfg)?);
        }
        Command::BuildIndex => println!("{}", cmd_build_index(&cfg)?),
        Command::Verify {
            variant,
            request,
            test_index,
        } => {
            if let Some(v) = variant {
                cfg.variant = v;
            }
            let input = match (request, test_index) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        CliError::Usage(format!("cannot read {}: {e}", path.display()))
                    })?;
                    let mut w: WireRequest = serde_json::from_str(text.trim())
                        .map_err(|e| CliError::Usage(format!("malformed request: {e}")))?;
                    if variant.is_some() {
                        w.variant = variant;
                    }
                    VerifyInput::Wire(w)
                }
                (None, Some(n)) => VerifyInput::TestIndex(n),
                (None, None) => {
                    return Err(CliError::Usage(
                        "pass --request FILE or --test-index N".into(),
                    ))
                }
            };
            let result = cmd_verify(&cfg, input)?;
            println!(
                "{}",
                serde_json::to_string(&result).expect("results serialize")
            );
        }
        Command::Bench {
            variants,
            max_queries,
            workers,
            json,
        } => {
            if max_queries.is_some() {
                cfg.bench.max_queries = max_queries;
            }
            if let Some(w) = workers {
                cfg.bench.workers = w;
            }
            let variants = variants.unwrap_or_else(|| Variant::ALL.to_vec());
            let report = cmd_bench(&cfg, &variants)?;
            print!("{}", report.to_table());
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("reports serialize")
                );
            }
        }
        Command::Serve {
            host,
            port,
            variant,
        } => {
            let variant = variant.unwrap_or(cfg.variant);
            let (_, verifier) = load_verifier(&cfg, true)?;
            install_stop_handler();
            let listener = TcpListener::bind((host.as_str(), port))?;
            println!("listening on {}", listener.local_addr()?);
            serve(listener, &verifier, variant, &STOP)?;
        }
        Command::Config => {
            cfg.validate()?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).expect("config serializes")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
