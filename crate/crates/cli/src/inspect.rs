//! `decision-engine inspect`: read a channel's archive.

use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use decision_engine::dataspace::{archive_path, read_archive, ArchiveRecord};
use decision_engine::logic::{InferenceResult, INFERENCE_RESULT};
use serde_json::Value;

#[derive(Args)]
pub struct InspectArgs {
    /// Archive directory, or a single channel's archive file.
    #[arg(long)]
    archive: PathBuf,
    /// Channel id; required when --archive is a directory.
    #[arg(long)]
    channel: Option<String>,
    /// Show every product of one generation.
    #[arg(long, conflicts_with = "product")]
    generation: Option<u64>,
    /// Show one product across all generations.
    #[arg(long)]
    product: Option<String>,
    /// Print values in full instead of truncating them.
    #[arg(long)]
    full: bool,
}

const VALUE_WIDTH: usize = 96;

fn show(value: &Value, full: bool) -> String {
    let s = value.to_string();
    if full || s.chars().count() <= VALUE_WIDTH {
        s
    } else {
        let cut: String = s.chars().take(VALUE_WIDTH - 3).collect();
        format!("{cut}...")
    }
}

pub fn inspect(args: InspectArgs) -> u8 {
    let path = if args.archive.is_dir() {
        let Some(channel) = &args.channel else {
            eprintln!("--channel is required when --archive is a directory");
            return 1;
        };
        archive_path(&args.archive, channel)
    } else {
        args.archive.clone()
    };
    let records = match read_archive(&path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return 1;
        }
    };
    let mut out = String::new();
    let written = if let Some(g) = args.generation {
        let Some(rec) = records.iter().find(|r| r.generation.0 == g) else {
            eprintln!("generation not found: {g} in {}", path.display());
            return 1;
        };
        print_generation(&mut out, rec, args.full)
    } else if let Some(p) = &args.product {
        if !records.iter().any(|r| r.products.contains_key(p)) {
            eprintln!("product `{p}` not found in any archived generation");
            return 1;
        }
        print_history(&mut out, &records, p, args.full)
    } else {
        print_summary(&mut out, &records)
    };
    written.expect("formatting into a String");
    // A closed pipe (`| head`) is not an error worth reporting.
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    0
}

fn print_generation(out: &mut String, rec: &ArchiveRecord, full: bool) -> fmt::Result {
    writeln!(out, "channel {}  generation {}  outcome {}", rec.channel_id, rec.generation, rec.outcome)?;
    writeln!(out, "started {}  ended {}", rec.started_at.to_rfc3339(), rec.ended_at.to_rfc3339())?;
    let name_w = rec.products.keys().map(String::len).max().unwrap_or(0).max("product".len());
    let by_w = rec.products.values().map(|p| p.produced_by.len()).max().unwrap_or(0).max("produced_by".len());
    writeln!(out, "{:<name_w$}  {:<by_w$}  {:>10}  value", "product", "produced_by", "source_gen")?;
    for (name, p) in &rec.products {
        let value = show(&p.value, full);
        writeln!(out, "{name:<name_w$}  {:<by_w$}  {:>10}  {value}", p.produced_by, p.source_generation.0)?;
    }
    Ok(())
}

fn print_history(out: &mut String, records: &[ArchiveRecord], product: &str, full: bool) -> fmt::Result {
    let rows = records.iter().filter_map(|r| r.products.get(product).map(|p| (r, p)));
    if product == INFERENCE_RESULT {
        writeln!(out, "{:>10}  {:<15}  fired_rules / publishers", "generation", "outcome")?;
        for (r, p) in rows {
            let detail = match InferenceResult::from_value(&p.value) {
                Ok(inf) => {
                    let pubs: Vec<&str> = inf.publishers_to_run.iter().map(String::as_str).collect();
                    format!("[{}] / [{}]", inf.fired_rules.join(", "), pubs.join(", "))
                }
                Err(_) => show(&p.value, full),
            };
            writeln!(out, "{:>10}  {:<15}  {detail}", r.generation.0, r.outcome.as_str())?;
        }
    } else {
        writeln!(out, "{:>10}  {:<15}  {:>10}  value", "generation", "outcome", "source_gen")?;
        for (r, p) in rows {
            let value = show(&p.value, full);
            writeln!(
                out,
                "{:>10}  {:<15}  {:>10}  {value}",
                r.generation.0,
                r.outcome.as_str(),
                p.source_generation.0
            )?;
        }
    }
    Ok(())
}

fn print_summary(out: &mut String, records: &[ArchiveRecord]) -> fmt::Result {
    writeln!(out, "{:>10}  {:<15}  {:<25}  products", "generation", "outcome", "started")?;
    for r in records {
        let started = r.started_at.to_rfc3339();
        writeln!(out, "{:>10}  {:<15}  {started:<25}  {}", r.generation.0, r.outcome.as_str(), r.products.len())?;
    }
    Ok(())
}
