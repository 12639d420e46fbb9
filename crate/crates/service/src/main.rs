use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use warntriage_core::evaluation::{render_json, render_text};
use warntriage_core::learners::LearnerKind;
use warntriage_core::workflow::Band;
use warntriage_service::ops::{self, TuneOutcome};
use warntriage_service::{api, Error, Result, Settings};

#[derive(Parser)]
#[command(name = "warntriage", version, about = "Rank static-analysis warnings with per-CWE classifier ensembles")]
struct Cli {
    /// Config file of `key = value` lines (also WARNTRIAGE_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory (default `data`, or `data_dir` from the config).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled corpus, e.g. --spec CWE-476:200:200:50
    Generate {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Read a JSONL corpus and split its labeled records 80:20 per CWE.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the code embedder on the training splits.
    PretrainEmbedder {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and publish ensembles.
    Train {
        #[arg(long, default_value = "all")]
        cwe: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid-search hyperparameters on the validation split.
    Tune {
        #[arg(long, default_value = "all")]
        cwe: String,
        /// gbt, forest, net or all.
        #[arg(long, default_value = "all")]
        learner: String,
        /// Score member triples by ensemble F1.
        #[arg(long)]
        joint: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a JSONL file of warnings with the live models.
    Score {
        #[arg(long)]
        input: PathBuf,
        /// Output JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validation metrics of the live models.
    Eval {
        #[arg(long, default_value = "all")]
        cwe: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Band cutoffs and band sizes of one CWE's open pool.
    Bands {
        #[arg(long)]
        cwe: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Serve the HTTP API (and the UI, if static_dir is set).
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Record a verdict on an open warning.
    Feedback {
        #[arg(long)]
        id: String,
        /// true_positive or false_positive.
        #[arg(long)]
        verdict: String,
        #[arg(long)]
        user: String,
    },
    /// Retrain one CWE with its staged verdicts and publish the next version.
    Retrain {
        #[arg(long)]
        cwe: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Core(warntriage_core::Error::io(path, e))),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::Internal(e.to_string()))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    if let Some(dir) = cli.data_dir {
        settings.data_dir = dir;
    }
    let mut seed = |s: Option<u64>| {
        if let Some(s) = s {
            settings.seed = s;
        }
    };
    match &cli.command {
        Command::Generate { seed: s, .. }
        | Command::Ingest { seed: s, .. }
        | Command::PretrainEmbedder { seed: s }
        | Command::Train { seed: s, .. }
        | Command::Tune { seed: s, .. } => seed(*s),
        _ => {}
    }

    match cli.command {
        Command::Generate { spec, out, .. } => {
            let n = ops::generate(&spec, settings.seed, &out)?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Ingest { input, .. } => {
            let rows = ops::ingest(&settings, &input)?;
            println!("{:<10} {:>7} {:>7} {:>7} {:>7} {:>7}", "CWE", "true", "fixed", "fake", "total", "open");
            for r in rows {
                println!(
                    "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7}",
                    r.cwe, r.n_true, r.n_fixed, r.n_fake, r.total, r.n_open
                );
            }
        }
        Command::PretrainEmbedder { .. } => {
            let (model, report) = ops::pretrain(&settings)?;
            let first = report.epoch_losses.first().copied().unwrap_or(f64::NAN);
            let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "embedder: {} epochs, loss {first:.4} -> {last:.4}, {} tokens, {} paths, {} tags",
                report.epoch_losses.len(),
                model.vocab.tokens.len(),
                model.vocab.paths.len(),
                model.vocab.tags.len()
            );
        }
        Command::Train { cwe, .. } => {
            for t in ops::train(&settings, &cwe)? {
                let note = if t.changed { "" } else { " (unchanged)" };
                println!("{}: version {} on {} rows{note}", t.cwe, t.version, t.n_train);
            }
        }
        Command::Tune { cwe, learner, joint, .. } => {
            let kind = match learner.as_str() {
                "all" => None,
                other => Some(LearnerKind::parse(other).ok_or_else(|| {
                    Error::BadRequest(format!("unknown learner {other:?}; use gbt, forest, net or all"))
                })?),
            };
            settings.joint_tuning |= joint;
            for (cwe, outcome) in ops::tune(&settings, &cwe, kind)? {
                match outcome {
                    TuneOutcome::Separate(results) => {
                        for r in results {
                            println!("{cwe} {}: {} combinations, best F1 {:.2}", r.kind, r.table.len(), r.table[r.best].f1);
                            println!("  {}", serde_json::to_string(r.best_hyper()).expect("hyper serializes"));
                        }
                    }
                    TuneOutcome::Joint(r) => {
                        println!("{cwe} joint: {} triples, best F1 {:.2}", r.table.len(), r.table[r.best].3);
                    }
                }
            }
        }
        Command::Score { input, out } => {
            let mut text = String::new();
            for row in ops::score_file(&settings, &input)? {
                text += &serde_json::to_string(&row).expect("row serializes");
                text.push('\n');
            }
            write_output(out.as_ref(), &text)?;
        }
        Command::Eval { cwe, format } => {
            let (reports, summary) = ops::eval(&settings, &cwe)?;
            match format {
                Format::Text => print!("{}", render_text(&reports, &summary)),
                Format::Json => println!("{}", render_json(&reports, &summary)),
            }
        }
        Command::Bands { cwe, format } => {
            let (t, scored) = ops::bands(&settings, &cwe)?;
            let count = |b: Band| scored.iter().filter(|s| s.band == b).count();
            match format {
                Format::Text => {
                    let fit = if t.fallback { "fixed fallback" } else { "normal fit" };
                    println!(
                        "{cwe}: n={} mu={:.4} sigma={:.4} high>={:.4} medium>={:.4} ({fit})",
                        t.n, t.mu, t.sigma, t.t_high, t.t_med
                    );
                    for b in Band::ALL {
                        println!("{:<7} {}", b.as_str(), count(b));
                    }
                }
                Format::Json => {
                    let counts: serde_json::Map<String, serde_json::Value> =
                        Band::ALL.iter().map(|&b| (b.as_str().to_string(), count(b).into())).collect();
                    println!("{}", serde_json::json!({ "thresholds": t, "bands": counts }));
                }
            }
        }
        Command::Serve { port, host, static_dir } => {
            if let Some(p) = port {
                settings.port = p;
            }
            if let Some(h) = host {
                settings.host = h;
            }
            if static_dir.is_some() {
                settings.static_dir = static_dir;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Internal(e.to_string()))?;
            rt.block_on(api::serve(settings))?;
        }
        Command::Feedback { id, verdict, user } => {
            let r = ops::feedback(&settings, &id, &verdict, &user)?;
            let what = if r.appended { "recorded" } else { "unchanged" };
            println!("{what}: {id} ({}) staged {}/{}", r.cwe, r.staged, settings.retrain_threshold);
            if r.retrain_due {
                println!("retrain due: warntriage retrain --cwe {}", r.cwe);
            }
        }
        Command::Retrain { cwe } => {
            let t = ops::retrain(&settings, &cwe)?;
            println!("{}: version {} on {} rows", t.cwe, t.version, t.n_train);
        }
    }
    Ok(())
}
