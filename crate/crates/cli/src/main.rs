use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{Args, Parser, Subcommand};
use selfplay_core::config::ConfigError;
use selfplay_core::corpus::{CorpusStore, DEFAULT_SEGMENT_BUDGET};
use selfplay_core::engine::{Engine, RunControl};
use selfplay_core::eval::{self, CrossplayConfig, SimConfig};
use selfplay_core::policy::Clients;
use selfplay_core::rewards::{challenger_reward, GroupStats, RewardConfig, RewardScheme};
use selfplay_core::taskgen::{AnswerType, Gold};
use selfplay_core::{verifier, EngineConfig};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "selfplay",
    version,
    about = "Corpus-grounded self-play: task generation, verification, rewards and batch export",
    after_help = config_help()
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add line-delimited {text, source?} records to a corpus store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Store file; created if missing, appended to otherwise.
        #[arg(long)]
        store: PathBuf,
        /// Source tag for records without their own.
        #[arg(long, default_value = "general")]
        source: String,
        #[arg(long, default_value_t = DEFAULT_SEGMENT_BUDGET)]
        budget: usize,
    },
    /// Run self-play iterations into an output directory, resuming if possible.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this iteration index completes.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Evaluate the configured challenger against the configured reasoner.
    Crossplay {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        docs: usize,
        #[arg(long, default_value_t = 128)]
        attempts: usize,
        #[arg(long, default_value = "challenger")]
        challenger_id: String,
        #[arg(long, default_value = "reasoner")]
        reasoner_id: String,
    },
    /// Run the co-evolution simulator and write its series as CSV.
    Simulate {
        #[arg(long, default_value = "Variance")]
        scheme: RewardScheme,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.0015)]
        lr: f64,
        #[arg(long, default_value_t = 0.1)]
        initial_skill: f64,
        #[arg(long, default_value_t = 10.0)]
        sharpness: f64,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        freeze_at: Option<usize>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a candidate answer against a typed gold answer (exit 0 if equivalent).
    Verify {
        #[arg(long = "type")]
        answer_type: AnswerType,
        #[arg(long)]
        gold: String,
        #[arg(long)]
        candidate: String,
    },
    /// Print challenger rewards for a label group, or write the reward curves.
    Reward {
        #[arg(long, default_value = "Variance")]
        scheme: RewardScheme,
        /// Comma-separated 0/1 labels.
        #[arg(long, conflicts_with = "curve", required_unless_present = "curve")]
        labels: Option<String>,
        /// Write the per-scheme reward curve CSV here.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
        rho: f64,
    },
    /// Serve batches and metrics of a run directory over HTTP.
    Serve {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set B=16 --set reward.scheme=RZero.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn config_help() -> String {
    let mut s = String::from("Config keys (JSON file or --set, dotted paths):\n");
    for (k, v) in EngineConfig::documented_keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(args: &ConfigArgs) -> Result<EngineConfig, Failure> {
    Ok(EngineConfig::load(args.config.as_deref(), &args.overrides)?)
}

fn load_store(cfg: &EngineConfig) -> Result<CorpusStore, Failure> {
    if cfg.corpus.is_empty() {
        return Err(Failure::Usage(
            "config key `corpus` must name a corpus store file (see `selfplay ingest`)".into(),
        ));
    }
    CorpusStore::load(Path::new(&cfg.corpus), cfg.seed).map_err(runtime)
}

fn build_engine(cfg: EngineConfig) -> Result<Engine, Failure> {
    let store = load_store(&cfg)?;
    let clients = Clients::from_config(&cfg).map_err(runtime)?;
    Engine::new(cfg, store, clients).map_err(runtime)
}

fn print_json(v: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string(v).expect("json value serializes")
    );
}

async fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Ingest {
            input,
            store,
            source,
            budget,
        } => {
            if budget == 0 {
                return Err(Failure::Usage("--budget must be positive".into()));
            }
            let mut s = if store.exists() {
                CorpusStore::load(&store, 0).map_err(runtime)?
            } else {
                CorpusStore::new(0)
            };
            let report = s.ingest(&input, &source, budget).map_err(runtime)?;
            s.save(&store).map_err(runtime)?;
            print_json(&json!({
                "report": report,
                "documents": s.len(),
                "sources": s.source_counts(),
            }));
        }
        Command::Run {
            config,
            out,
            stop_after,
        } => {
            let cfg = load_config(&config)?;
            let engine = build_engine(cfg)?;
            let control = RunControl {
                stop_after,
                ..RunControl::default()
            };
            let flag = control.stop.clone();
            tokio::spawn(async move {
                if tokio::signal::ctrl_c().await.is_ok() {
                    tracing::warn!("interrupt received; stopping after the current iteration");
                    flag.store(true, Ordering::SeqCst);
                }
            });
            let summary = engine.run(&out, &control).await.map_err(runtime)?;
            print_json(&json!(summary));
        }
        Command::Crossplay {
            config,
            out,
            docs,
            attempts,
            challenger_id,
            reasoner_id,
        } => {
            let cfg = load_config(&config)?;
            let engine = build_engine(cfg)?;
            let report = eval::crossplay(
                &engine,
                &CrossplayConfig {
                    challenger_id,
                    reasoner_id,
                    n_docs: docs,
                    attempts_per_doc: attempts,
                },
            )
            .await
            .map_err(runtime)?;
            std::fs::create_dir_all(&out).map_err(runtime)?;
            let json_path = out.join("crossplay.json");
            std::fs::write(
                &json_path,
                serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
            )
            .map_err(runtime)?;
            let csv = std::fs::File::create(out.join("crossplay.csv")).map_err(runtime)?;
            report.write_csv(csv).map_err(runtime)?;
            print_json(&json!({
                "challenger_id": report.challenger_id,
                "reasoner_id": report.reasoner_id,
                "documents_used": report.documents_used,
                "tasks": report.tasks.len(),
                "pass_rate": report.pass_rate,
            }));
        }
        Command::Simulate {
            scheme,
            steps,
            lr,
            initial_skill,
            sharpness,
            k,
            seed,
            freeze_at,
            out,
        } => {
            let cfg = SimConfig {
                steps,
                lr,
                initial_skill,
                sharpness,
                k,
                seed,
                freeze_at,
                ..SimConfig::default()
            }
            .with_scheme(scheme);
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let rows = eval::simulate_coevolution(&cfg).map_err(runtime)?;
            match out {
                Some(p) => eval::save_series(&rows, &p).map_err(runtime)?,
                None => eval::write_series_csv(&rows, std::io::stdout().lock()).map_err(runtime)?,
            }
        }
        Command::Verify {
            answer_type,
            gold,
            candidate,
        } => {
            let g = Gold::parse(answer_type, &gold).map_err(|e| Failure::Usage(e.to_string()))?;
            let ok = verifier::equivalent_typed(&g, &candidate, answer_type);
            print_json(&json!({
                "type": answer_type,
                "gold": gold,
                "candidate": candidate,
                "equivalent": ok,
            }));
            return Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            });
        }
        Command::Reward {
            scheme,
            labels,
            curve,
            rho,
        } => {
            let base = RewardConfig {
                rho,
                ..RewardConfig::default()
            };
            base.validate().map_err(Failure::Usage)?;
            if let Some(path) = curve {
                let f = std::fs::File::create(&path).map_err(runtime)?;
                eval::write_reward_curve_csv(&base, f).map_err(runtime)?;
                return Ok(ExitCode::SUCCESS);
            }
            let labels: Vec<u8> = labels
                .unwrap_or_default()
                .split(',')
                .map(|s| match s.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Failure::Usage(format!("label `{other}` is not 0 or 1"))),
                })
                .collect::<Result<_, _>>()?;
            let stats = GroupStats::new(labels);
            let per_scheme: serde_json::Map<String, serde_json::Value> = RewardScheme::ALL
                .iter()
                .map(|&s| {
                    (
                        s.as_str().to_string(),
                        json!(challenger_reward(Some(&stats), &base.with_scheme(s))),
                    )
                })
                .collect();
            print_json(&json!({
                "scheme": scheme,
                "reward": challenger_reward(Some(&stats), &base.with_scheme(scheme)),
                "k": stats.k(),
                "pass_rate": stats.pass_rate(),
                "variance": stats.variance(),
                "invalid_reward": base.rho,
                "schemes": per_scheme,
            }));
        }
        Command::Serve { out, addr } => {
            selfplay_core::service::serve(out, addr)
                .await
                .map_err(runtime)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose {
            tracing::Level::INFO
        } else {
            tracing::Level::WARN
        })
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(dispatch(cli.command)) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
