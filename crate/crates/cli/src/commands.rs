//! File-level commands behind the `msdpp` binary.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use msdpp::dataio::{load_gallery, load_queries, parse_jsonl, write_jsonl, write_jsonl_file, TaskConfig};
use msdpp::synth::{gen_synthetic, SynthPlan};
use msdpp::{Error, Result};
use serde::Serialize;

use crate::eval::{evaluate, EvalDocument};
use crate::pipeline::{Method, Parallelism, RerankResponse, Snapshot};
use crate::sweep::{run_sweep, SweepOptions, SweepReport};

pub fn load_snapshot(config: &Path, gallery: &Path, queries: &Path) -> Result<Snapshot> {
    let config = TaskConfig::load(config)?;
    let gallery = load_gallery(gallery)?;
    let queries = load_queries(queries, Some(&gallery))?;
    log::info!("loaded {} items and {} queries", gallery.len(), queries.len());
    Snapshot::new(config, gallery, queries)
}

/// Reranks the selected queries (all when `query_ids` is empty) and writes
/// one response per line.
pub fn cmd_rerank<W: Write>(
    snapshot: &Snapshot,
    method: Method,
    query_ids: &[String],
    diagnostics: bool,
    par: Parallelism,
    out: W,
) -> Result<Vec<RerankResponse>> {
    let ids = (!query_ids.is_empty()).then_some(query_ids);
    let responses = snapshot.rerank_all(&snapshot.config, method, ids, diagnostics, par)?;
    write_jsonl(out, &responses).map_err(|source| Error::Io {
        path: PathBuf::from("<output>"),
        source,
    })?;
    Ok(responses)
}

pub fn load_results(path: &Path) -> Result<Vec<RerankResponse>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(BufReader::new(file), path)
}

pub fn cmd_eval(results: &Path, queries: &Path, config: &Path, gallery: Option<&Path>) -> Result<EvalDocument> {
    let config = TaskConfig::load(config)?;
    let gallery = gallery.map(load_gallery).transpose()?;
    let queries = load_queries(queries, gallery.as_deref())?;
    let results = load_results(results)?;
    evaluate(&results, &queries, &config, gallery.as_deref())
}

pub fn cmd_sweep(snapshot: &Snapshot, opts: &SweepOptions) -> Result<SweepReport> {
    run_sweep(snapshot, opts)
}

/// Task config written next to generated data: appearance and time, both
/// increasing, equal weights.
pub const SAMPLE_CONFIG: &str = r#"theta = 0.9
tn_mode = "tv_m"

[[attributes]]
name = "appearance"
kind = "appearance"
direction = 1
weight = 0.5

[[attributes]]
name = "time"
kind = "time"
direction = 1
weight = 0.5

[sweep]
attribute = "time"
"#;

pub fn sample_config() -> TaskConfig {
    TaskConfig::from_toml_str(SAMPLE_CONFIG).expect("sample config is valid")
}

/// Writes `gallery.jsonl`, `queries.jsonl` and a sample `config.toml`.
pub fn cmd_gen(seed: u64, plan: &SynthPlan, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let data = gen_synthetic(seed, plan)?;
    write_jsonl_file(out_dir.join("gallery.jsonl"), &data.gallery)?;
    write_jsonl_file(out_dir.join("queries.jsonl"), &data.queries)?;
    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, SAMPLE_CONFIG).map_err(|source| Error::Io {
        path: cfg_path,
        source,
    })?;
    Ok(())
}

/// Writes `value` as pretty JSON to `out` or standard output.
pub fn write_document<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("documents serialize") + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}
