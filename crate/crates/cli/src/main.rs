use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msdpp::dataio::SweepKind;
use msdpp::synth::SynthPlan;
use msdpp_cli::commands::{cmd_eval, cmd_gen, cmd_rerank, cmd_sweep, load_snapshot, write_document};
use msdpp_cli::pipeline::{Method, Parallelism};
use msdpp_cli::service;
use msdpp_cli::sweep::SweepOptions;

#[derive(Parser)]
#[command(name = "msdpp", version, about = "Multi-source DPP diversity re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Inputs {
    /// Task config (TOML).
    #[arg(long, env = "MSDPP_CONFIG")]
    config: PathBuf,
    /// Gallery file (one JSON record per line).
    #[arg(long)]
    gallery: PathBuf,
    /// Query file (one JSON record per line).
    #[arg(long)]
    queries: PathBuf,
}

fn parse_sweep_kind(s: &str) -> Result<SweepKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown sweep kind '{s}' (expected weight, theta or grid)"))
}

#[derive(Subcommand)]
enum Command {
    /// Rerank queries and write one response per line.
    Rerank {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value_t = Method::Msdpp)]
        method: Method,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to these queries (repeatable).
        #[arg(long = "query-id")]
        query_ids: Vec<String>,
        /// Include per-step selection diagnostics.
        #[arg(long)]
        diagnostics: bool,
        /// Process queries one at a time.
        #[arg(long)]
        serial: bool,
    },
    /// Evaluate rerank results against query ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, env = "MSDPP_CONFIG")]
        config: PathBuf,
        /// Recompute diversity from the gallery instead of trusting the results.
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a weight, θ, or a full grid, as configured.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
        /// Attribute to sweep (overrides the config).
        #[arg(long)]
        attribute: Option<String>,
        /// Sweep kind (overrides the config).
        #[arg(long, value_parser = parse_sweep_kind)]
        kind: Option<SweepKind>,
        #[arg(long, value_enum, default_value_t = Method::Msdpp)]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        serial: bool,
    },
    /// Generate a synthetic gallery, queries and a sample config.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        items: usize,
        #[arg(long, default_value_t = 6)]
        clusters: usize,
        #[arg(long = "num-queries", default_value_t = 6)]
        num_queries: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve the HTTP API over the loaded files.
    Serve {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn parallelism(serial: bool) -> Parallelism {
    if serial {
        Parallelism::Serial
    } else {
        Parallelism::Parallel
    }
}

fn run(cli: Cli) -> msdpp::Result<()> {
    match cli.command {
        Command::Rerank {
            inputs,
            method,
            out,
            query_ids,
            diagnostics,
            serial,
        } => {
            let snap = load_snapshot(&inputs.config, &inputs.gallery, &inputs.queries)?;
            let par = parallelism(serial);
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|source| msdpp::Error::Io {
                        path: path.clone(),
                        source,
                    })?;
                    cmd_rerank(&snap, method, &query_ids, diagnostics, par, std::io::BufWriter::new(file))?;
                }
                None => {
                    cmd_rerank(&snap, method, &query_ids, diagnostics, par, std::io::stdout().lock())?;
                }
            }
        }
        Command::Eval {
            results,
            queries,
            config,
            gallery,
            out,
        } => {
            let doc = cmd_eval(&results, &queries, &config, gallery.as_deref())?;
            write_document(&doc, out.as_deref())?;
        }
        Command::Sweep {
            inputs,
            attribute,
            kind,
            method,
            out,
            serial,
        } => {
            let mut snap = load_snapshot(&inputs.config, &inputs.gallery, &inputs.queries)?;
            if let Some(a) = attribute {
                snap.config.sweep.attribute = Some(a);
            }
            if let Some(k) = kind {
                snap.config.sweep.kind = k;
            }
            snap.config.validate()?;
            let opts = SweepOptions {
                method,
                parallelism: parallelism(serial),
                ..SweepOptions::default()
            };
            write_document(&cmd_sweep(&snap, &opts)?, out.as_deref())?;
        }
        Command::Gen {
            seed,
            items,
            clusters,
            num_queries,
            dim,
            out_dir,
        } => {
            let plan = SynthPlan {
                n_items: items,
                n_clusters: clusters,
                n_queries: num_queries,
                dim,
                ..SynthPlan::default()
            };
            cmd_gen(seed, &plan, &out_dir)?;
        }
        Command::Serve { inputs, bind } => {
            let snap = load_snapshot(&inputs.config, &inputs.gallery, &inputs.queries)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|source| msdpp::Error::Io {
                path: PathBuf::from("<runtime>"),
                source,
            })?;
            runtime
                .block_on(service::serve(snap, &bind))
                .map_err(|source| msdpp::Error::Io {
                    path: PathBuf::from(bind),
                    source,
                })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MSDPP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
