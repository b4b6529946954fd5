use std::fs::{self, File};
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use admgeo_core::geo::{parse_regions, parse_streets};
use admgeo_core::ingest::{copy_frame_images, ingest_trips, recompute_derived};
use admgeo_core::store::{MANIFEST_FILE, REGIONS_FILE, SEGMENTS_FILE, TRIPS_FILE};
use admgeo_core::synth::{write_synthetic, SynthSpec};
use admgeo_core::{CancelToken, Config, Dataset, ModelId, QueryExpr, Store};
use admgeo_service::api::{self, SelectionFields};

use crate::exit::Invalid;
use crate::{Command, QueryArgs, Report};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Invalid(format!("unknown {what} {s:?}")).into())
}

fn models(names: &[String]) -> Result<Option<Vec<ModelId>>> {
    if names.is_empty() {
        return Ok(None);
    }
    names
        .iter()
        .map(|n| ModelId::new(n.clone()).map_err(|e| Invalid(e.to_string()).into()))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Ok(Config::from_json(&read_text(p)?)?),
    }
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if json {
        serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
        writeln!(out)?;
    } else {
        text(&mut out)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

pub fn run(command: Command, json: bool) -> Result<()> {
    match command {
        Command::GenSynthetic { seed, spec, out } => {
            let spec = match spec {
                Some(p) => SynthSpec::from_json(&read_text(&p)?)?,
                None => SynthSpec::default(),
            };
            let summary = write_synthetic(seed, &spec, &out)?;
            emit(json, &summary, |w| {
                writeln!(w, "wrote {} trips, {} frames to {}", summary.trips, summary.frames, out.display())
            })
        }
        Command::Ingest { raw, out, config, force } => {
            if out.join(MANIFEST_FILE).exists() && !force {
                return Err(Invalid(format!("{} already holds a dataset; pass --force to replace it", out.display())).into());
            }
            let config = load_config(config.as_deref())?;
            let segments = parse_streets(&read_text(&raw.join(SEGMENTS_FILE))?)?;
            let regions = parse_regions(&read_text(&raw.join(REGIONS_FILE))?)?;
            let trips_path = raw.join(TRIPS_FILE);
            let trips = File::open(&trips_path).with_context(|| format!("reading {}", trips_path.display()))?;
            let mut store = Store::create(&out, config.clone())?;
            store.put_geometry(segments, regions)?;
            let report = ingest_trips(BufReader::new(trips), &mut store, &config)?;
            let images = copy_frame_images(&raw, &out)?;
            for e in &report.errors {
                log::warn!("line {}: {}", e.line, e.message);
            }
            emit(json, &report, |w| {
                writeln!(
                    w,
                    "ingested {} trips, {} frames ({} unmatched), {} images; {} rejected",
                    report.trips,
                    report.frames,
                    report.unmatched_frames,
                    images,
                    report.errors.len()
                )?;
                for e in &report.errors {
                    writeln!(w, "  line {}: {}", e.line, e.message)?;
                }
                Ok(())
            })
        }
        Command::Recompute { data, config } => {
            let config = load_config(Some(&config))?;
            let mut store = Store::open(&data)?;
            let report = recompute_derived(&mut store, &config)?;
            emit(json, &report, |w| {
                writeln!(
                    w,
                    "{} of {} frames changed in {} trips ({} newly unmatched, {} newly matched)",
                    report.changed_frames, report.frames, report.changed_trips, report.newly_unmatched, report.newly_matched
                )
            })
        }
        Command::Stats { data } => {
            let d = Dataset::open(&data)?;
            let stats = api::stats(&d);
            emit(json, &stats, |w| {
                let c = &stats.manifest.counts;
                writeln!(w, "trips {}  frames {}  segments {}  regions {}", c.trips, c.frames, c.segments, c.regions)?;
                writeln!(w, "{:<16} {:>10} {:>10}", "model", "accuracy", "perplexity")?;
                for (m, s) in &stats.models {
                    writeln!(w, "{:<16} {:>10} {:>10}", m.as_str(), fmt_opt(s.accuracy), fmt_opt(s.mean_perplexity))?;
                }
                Ok(())
            })
        }
        Command::Query(args) => query(args, json),
        Command::SelectTrips { data, models: names, metric, comparator, threshold } => {
            let d = Dataset::open(&data)?;
            let req = api::TripSelectRequest {
                models: models(&names)?.unwrap_or_default(),
                metric: parse_enum("metric", &metric)?,
                comparator: parse_enum("comparator", &comparator)?,
                threshold,
            };
            let resp = api::select_trips(&d, &req)?;
            emit(json, &resp, |w| {
                for t in &resp.trips {
                    writeln!(w, "{}", t.trip_id)?;
                }
                Ok(())
            })
        }
        Command::Serve { data, bind } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(admgeo_service::serve(&data, &bind, |addr| {
                println!("listening on http://{addr}");
                let _ = io::stdout().flush();
            }))
            .with_context(|| format!("serving {}", data.display()))?;
            Ok(())
        }
    }
}

fn read_expr(path: &Path) -> Result<QueryExpr> {
    let text = if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        s
    } else {
        read_text(path)?
    };
    serde_json::from_str(&text).with_context(|| format!("parsing query expression from {}", path.display()))
}

fn query(args: QueryArgs, json: bool) -> Result<()> {
    let d = Dataset::open(&args.data)?;
    let expr = args.expr.as_deref().map(read_expr).transpose()?;
    let trip_ids = (!args.trips.is_empty()).then(|| args.trips.clone());
    let sel = SelectionFields { expr: expr.clone(), trip_ids: trip_ids.clone() };
    match args.report {
        Report::Ids => {
            let ids = api::query_ids(&d, &sel)?;
            let frames: Vec<_> = ids
                .iter()
                .map(|&id| {
                    let f = d.frame(id);
                    serde_json::json!({"id": id, "trip_id": f.trip_id, "frame_idx": f.frame_idx})
                })
                .collect();
            let body = serde_json::json!({"total": ids.len(), "frames": frames});
            emit(json, &body, |w| {
                for &id in &ids {
                    let f = d.frame(id);
                    writeln!(w, "{}\t{}", f.trip_id, f.frame_idx)?;
                }
                Ok(())
            })
        }
        Report::Aggregate => {
            let req = api::AggregateRequest {
                expr,
                trip_ids,
                key: parse_enum("group key", &args.key)?,
                models: models(&args.models)?,
            };
            let resp = api::aggregate(&d, &req)?;
            emit(json, &resp, |w| {
                writeln!(w, "{:<20} {:>8} {:>10} {:>10}", args.key, "count", "accuracy", "perplexity")?;
                for g in &resp.groups {
                    writeln!(
                        w,
                        "{:<20} {:>8} {:>10} {:>10}",
                        g.group_key,
                        g.count,
                        fmt_opt(g.combined.accuracy),
                        fmt_opt(g.combined.mean_perplexity)
                    )?;
                }
                Ok(())
            })
        }
        Report::Combinations => {
            let req = api::CombinationsRequest { expr, trip_ids, models: models(&args.models)? };
            let table = api::combinations(&d, &req)?;
            emit(json, &table, |w| {
                for m in &table.models {
                    write!(w, "{:>10} ", m.as_str())?;
                }
                writeln!(w, "{:>8}", "count")?;
                for row in &table.rows {
                    for &c in &row.pattern {
                        write!(w, "{:>10} ", if c { "correct" } else { "wrong" })?;
                    }
                    writeln!(w, "{:>8}", row.count)?;
                }
                Ok(())
            })
        }
        Report::Histogram => {
            let req = api::HistogramRequest {
                expr,
                trip_ids,
                dimension: parse_enum("histogram dimension", &args.dimension)?,
                model: args.model.map(ModelId::new).transpose().map_err(|e| Invalid(e.to_string()))?,
                unit: parse_enum("histogram unit", &args.unit)?,
            };
            let resp = api::histogram(&d, &req)?;
            emit(json, &resp, |w| {
                for b in &resp.bins {
                    writeln!(w, "{:<14} {:>8}", b.label, b.count)?;
                }
                Ok(())
            })
        }
        Report::Thumbnails => {
            let req = api::ThumbnailsRequest { expr, trip_ids, k: Some(args.k) };
            let resp = api::thumbnails(&d, &req, &CancelToken::new())?;
            emit(json, &resp, |w| {
                for t in &resp.thumbnails {
                    writeln!(w, "{}\t{}\t{}", t.trip_id, t.frame_idx, t.image_url)?;
                }
                Ok(())
            })
        }
    }
}
