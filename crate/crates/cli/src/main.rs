mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "admgeo", version, about = "Geo-context analytics for driving-model predictions")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true, env = "ADMGEO_JSON")]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic raw dataset (trips, geometry, frame images).
    GenSynthetic {
        #[arg(long, env = "ADMGEO_SEED", default_value_t = 42)]
        seed: u64,
        /// JSON generator spec; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset directory from a raw directory.
    Ingest {
        /// Directory with trips.jsonl, segments.geojson, regions.geojson and
        /// optionally frames/.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long, env = "ADMGEO_DATA")]
        out: PathBuf,
        /// JSON config (match radius, grid cell, bandwidth, caps).
        #[arg(long, env = "ADMGEO_CONFIG")]
        config: Option<PathBuf>,
        /// Replace an existing dataset in `out`.
        #[arg(long)]
        force: bool,
    },
    /// Re-derive predictions, perplexity and matches under a new config.
    Recompute {
        #[arg(long, env = "ADMGEO_DATA")]
        data: PathBuf,
        #[arg(long, env = "ADMGEO_CONFIG")]
        config: PathBuf,
    },
    /// Dataset manifest and global per-model accuracy and perplexity.
    Stats {
        #[arg(long, env = "ADMGEO_DATA")]
        data: PathBuf,
    },
    /// Evaluate a frame selection and print ids or a report.
    Query(QueryArgs),
    /// Trips whose aggregate metric passes a threshold for every model.
    SelectTrips {
        #[arg(long, env = "ADMGEO_DATA")]
        data: PathBuf,
        /// Comma-separated model ids.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long, default_value = "accuracy")]
        metric: String,
        /// lt or ge.
        #[arg(long, default_value = "lt")]
        comparator: String,
        #[arg(long)]
        threshold: f64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "ADMGEO_DATA")]
        data: PathBuf,
        #[arg(long, env = "ADMGEO_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Ids,
    Aggregate,
    Combinations,
    Histogram,
    Thumbnails,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long, env = "ADMGEO_DATA")]
    data: PathBuf,
    /// File holding a QueryExpr as JSON, or `-` for stdin. Omit to select
    /// every frame.
    #[arg(long)]
    expr: Option<PathBuf>,
    /// Restrict to these trips (comma-separated).
    #[arg(long, value_delimiter = ',')]
    trips: Vec<String>,
    #[arg(long, value_enum, default_value = "ids")]
    report: Report,
    /// Group key for the aggregate report.
    #[arg(long, default_value = "region")]
    key: String,
    /// Models for aggregate and combination reports (default: all).
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Histogram dimension.
    #[arg(long, default_value = "weather")]
    dimension: String,
    /// Model for binned histogram dimensions.
    #[arg(long)]
    model: Option<String>,
    /// Histogram unit: frames or trips.
    #[arg(long, default_value = "frames")]
    unit: String,
    /// Number of thumbnails.
    #[arg(long, default_value_t = 20)]
    k: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADMGEO_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command, cli.json) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit::classify(&e);
            let message = exit::message(&e);
            if cli.json {
                let body = serde_json::json!({"error": {"code": exit::code_name(code), "message": message}});
                eprintln!("{body}");
            } else {
                eprintln!("error: {message}");
            }
            ExitCode::from(code)
        }
    }
}
