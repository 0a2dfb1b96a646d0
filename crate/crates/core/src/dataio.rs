//! Newline-delimited gallery and query files, and the TOML task config.
//!
//! Gallery line:
//! `{"id": "...", "appearance": [..], "time_minutes": 512.0, "lat_deg": 35.6, "lon_deg": 139.7, "extra": {"name": [..]}}`
//!
//! Query line:
//! `{"query_id": "...", "text": "...", "relevance": {"img": 0.31}, "relevant_ids": [..], "semantic_scores": {"img": 0.8}}`

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeSpec, EmbeddingOptions, ImageRecord};
use crate::baselines::{BaselineConfig, BaselineMethod, DiversityMode, CLUSTER_GRID};
use crate::engine::{RerankConfig, TnMode, DEFAULT_K, DEFAULT_TOP_N};
use crate::error::{Error, Result};
use crate::metrics::{RetrievalKind, DEFAULT_NCS_K};
use crate::spd::DEFAULT_SPD_FLOOR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub relevance: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_scores: Option<BTreeMap<String, f64>>,
}

impl Query {
    pub fn supports_map(&self) -> bool {
        self.relevant_ids.is_some()
    }

    pub fn supports_ncs(&self) -> bool {
        self.semantic_scores.is_some()
    }

    pub fn relevance_map(&self) -> HashMap<String, f64> {
        self.relevance.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    pub fn relevant_set(&self) -> Option<HashSet<String>> {
        self.relevant_ids.as_ref().map(|v| v.iter().cloned().collect())
    }

    pub fn semantic_map(&self) -> Option<HashMap<String, f64>> {
        self.semantic_scores
            .as_ref()
            .map(|m| m.iter().map(|(k, v)| (k.clone(), *v)).collect())
    }

    /// Every image id the query refers to.
    fn referenced_ids(&self) -> impl Iterator<Item = &String> {
        self.relevance
            .keys()
            .chain(self.relevant_ids.iter().flatten())
            .chain(self.semantic_scores.iter().flat_map(|m| m.keys()))
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn parse_lines<T, R>(reader: R, path: &Path, mut check: impl FnMut(&T, usize) -> std::result::Result<(), String>) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let item: T = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        check(&item, lineno).map_err(parse_err)?;
        out.push(item);
    }
    Ok(out)
}

/// Parses one JSON document per line into `T`; blank lines are skipped.
pub fn parse_jsonl<T, R>(reader: R, path: &Path) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    parse_lines(reader, path, |_: &T, _| Ok(()))
}

fn validate_record(rec: &ImageRecord, dim: &mut Option<usize>) -> std::result::Result<(), String> {
    if rec.id.is_empty() {
        return Err("empty id".into());
    }
    if rec.appearance.is_empty() {
        return Err(format!("item '{}' has an empty appearance vector", rec.id));
    }
    match dim {
        Some(d) if *d != rec.appearance.len() => {
            return Err(format!(
                "item '{}' has appearance dimension {}, expected {d}",
                rec.id,
                rec.appearance.len()
            ))
        }
        None => *dim = Some(rec.appearance.len()),
        _ => {}
    }
    let finite = rec.appearance.iter().chain(rec.extra.values().flatten()).all(|v| v.is_finite());
    if !finite {
        return Err(format!("item '{}' has non-finite feature values", rec.id));
    }
    if let Some(t) = rec.time_minutes {
        if !(0.0..1440.0).contains(&t) {
            return Err(format!("item '{}' has time_minutes {t} outside [0, 1440)", rec.id));
        }
    }
    if rec.lat_deg.is_some() != rec.lon_deg.is_some() {
        return Err(format!("item '{}' has only one of lat_deg/lon_deg", rec.id));
    }
    if let (Some(lat), Some(lon)) = (rec.lat_deg, rec.lon_deg) {
        if !(-90.0..=90.0).contains(&lat) || !(lon > -180.0 && lon <= 180.0) {
            return Err(format!("item '{}' has out-of-range location ({lat}, {lon})", rec.id));
        }
    }
    Ok(())
}

/// Parses a gallery from any reader; `path` is used in error messages.
pub fn parse_gallery<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ImageRecord>> {
    let mut seen = HashSet::new();
    let mut dim = None;
    let records = parse_lines(reader, path, |rec: &ImageRecord, _| {
        validate_record(rec, &mut dim)?;
        if !seen.insert(rec.id.clone()) {
            return Err(format!("duplicate id '{}'", rec.id));
        }
        Ok(())
    })?;
    if records.is_empty() {
        log::warn!("gallery {} is empty", path.display());
    }
    Ok(records)
}

pub fn load_gallery(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    parse_gallery(open(path)?, path)
}

/// Parses queries. When `gallery` is given, every referenced id must exist
/// and `relevance` must cover the whole gallery.
pub fn parse_queries<R: BufRead>(reader: R, path: &Path, gallery: Option<&[ImageRecord]>) -> Result<Vec<Query>> {
    let known: Option<HashSet<&str>> = gallery.map(|g| g.iter().map(|r| r.id.as_str()).collect());
    let mut seen = HashSet::new();
    parse_lines(reader, path, |q: &Query, _| {
        if !seen.insert(q.query_id.clone()) {
            return Err(format!("duplicate query_id '{}'", q.query_id));
        }
        if let Some((id, v)) = q.relevance.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("query '{}' has non-finite relevance {v} for '{id}'", q.query_id));
        }
        if let Some(known) = &known {
            if let Some(id) = q.referenced_ids().find(|id| !known.contains(id.as_str())) {
                return Err(format!("query '{}' references unknown image id '{id}'", q.query_id));
            }
            if let Some(id) = known.iter().find(|id| !q.relevance.contains_key(**id)) {
                return Err(format!("query '{}' has no relevance for image '{id}'", q.query_id));
            }
        }
        Ok(())
    })
}

pub fn load_queries(path: impl AsRef<Path>, gallery: Option<&[ImageRecord]>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    parse_queries(open(path)?, path, gallery)
}

/// Writes one JSON object per line. Floats use the shortest representation
/// that round-trips exactly.
pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_jsonl_file<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_jsonl(std::io::BufWriter::new(file), items).map_err(io_err)
}

/// Baseline section of the task config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default = "default_baseline_method")]
    pub method: BaselineMethod,
    /// MMR λ (default 0.5) or k-DPP θ (default: the task's θ).
    #[serde(default, alias = "lambda", alias = "theta", skip_serializing_if = "Option::is_none")]
    pub lambda_or_theta: Option<f64>,
    #[serde(default = "default_clusters")]
    pub num_clusters: usize,
    /// Overrides the mode derived from attribute directions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<DiversityMode>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            method: default_baseline_method(),
            lambda_or_theta: None,
            num_clusters: default_clusters(),
            mode: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Sweep one attribute's weight; the others share the remainder.
    Weight,
    /// Sweep θ with weights fixed.
    Theta,
    /// Grid search over θ, weight combinations and TN modes; reports best HM.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_sweep_kind")]
    pub kind: SweepKind,
    #[serde(default)]
    pub attribute: Option<String>,
    #[serde(default = "default_pref_weights")]
    pub weights: Vec<f64>,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    /// TN modes to evaluate; empty means the task's `tn_mode`.
    #[serde(default)]
    pub tn_modes: Vec<TnMode>,
    /// Per-attribute weight grid for grid search (normalized per combination).
    #[serde(default = "default_weight_grid")]
    pub weight_grid: Vec<f64>,
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            kind: default_sweep_kind(),
            attribute: None,
            weights: default_pref_weights(),
            thetas: default_thetas(),
            tn_modes: Vec::new(),
            weight_grid: default_weight_grid(),
            theta_grid: default_theta_grid(),
        }
    }
}

/// The task configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub tn_mode: TnMode,
    #[serde(default = "default_metric")]
    pub metric: RetrievalKind,
    #[serde(default = "default_ncs_k")]
    pub ncs_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub time_full_circle: bool,
    #[serde(default = "default_floor")]
    pub spd_floor: f64,
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_theta() -> f64 {
    0.9
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_top_n() -> usize {
    DEFAULT_TOP_N
}
fn default_metric() -> RetrievalKind {
    RetrievalKind::Map
}
fn default_ncs_k() -> usize {
    DEFAULT_NCS_K
}
fn default_floor() -> f64 {
    DEFAULT_SPD_FLOOR
}
fn default_baseline_method() -> BaselineMethod {
    BaselineMethod::Mmr
}
/// MMR λ when the config does not set one.
pub const DEFAULT_MMR_LAMBDA: f64 = 0.5;

fn default_clusters() -> usize {
    CLUSTER_GRID[0]
}
fn default_sweep_kind() -> SweepKind {
    SweepKind::Weight
}

/// 0.0, 0.1, ..., 1.0.
pub fn default_pref_weights() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// 0.1, 0.2, ..., 0.9.
pub fn default_thetas() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// 0.1, 0.3, ..., 0.9.
pub fn default_weight_grid() -> Vec<f64> {
    (0..5).map(|i| (2 * i + 1) as f64 / 10.0).collect()
}

/// 0.75, 0.80, ..., 0.95.
pub fn default_theta_grid() -> Vec<f64> {
    (0..5).map(|i| (75 + 5 * i) as f64 / 100.0).collect()
}

impl TaskConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TaskConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: PathBuf::from(path),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("task config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.rerank_config()?;
        let mut names = HashSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                return Err(Error::Config(format!("attribute '{}' declared twice", a.name)));
            }
        }
        if !(self.spd_floor > 0.0) {
            return Err(Error::Config("spd_floor must be positive".into()));
        }
        if self.ncs_k == 0 {
            return Err(Error::Config("ncs_k must be positive".into()));
        }
        if self.baseline.method == BaselineMethod::Clustering && self.baseline.num_clusters < 2 {
            return Err(Error::Config("clustering needs num_clusters >= 2".into()));
        }
        if let Some(name) = &self.sweep.attribute {
            if !names.contains(name.as_str()) {
                return Err(Error::Config(format!("sweep attribute '{name}' is not declared")));
            }
        }
        Ok(())
    }

    /// Engine config with weights normalized to sum to one.
    pub fn rerank_config(&self) -> Result<RerankConfig> {
        RerankConfig::new(self.theta, self.k, self.top_n, self.tn_mode, self.attributes.clone())
    }

    pub fn baseline_config(&self, method: BaselineMethod) -> Result<BaselineConfig> {
        let rc = self.rerank_config()?;
        let param = self.baseline.lambda_or_theta.unwrap_or(match method {
            BaselineMethod::Kdpp => self.theta,
            _ => DEFAULT_MMR_LAMBDA,
        });
        let mut cfg = BaselineConfig::new(method, param, rc.specs, self.k)
            .with_clusters(self.baseline.num_clusters);
        if let Some(mode) = self.baseline.mode {
            cfg.mode = mode;
        }
        Ok(cfg)
    }

    pub fn embedding_options(&self) -> EmbeddingOptions {
        EmbeddingOptions {
            time_full_circle: self.time_full_circle,
            spd_floor: self.spd_floor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::{AttributeKind, Direction};

    fn gallery_text(lines: &[&str]) -> String {
        lines.join("\n")
    }

    #[test]
    fn empty_gallery_is_valid() {
        let g = parse_gallery("".as_bytes(), Path::new("g.jsonl")).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn gallery_preserves_order() {
        let text = gallery_text(&[
            r#"{"id":"b","appearance":[1.0,2.0]}"#,
            r#"{"id":"a","appearance":[0.5,2.0],"time_minutes":30.0}"#,
            r#"{"id":"c","appearance":[0.0,0.0],"lat_deg":1.0,"lon_deg":2.0,"extra":{"tag":[1.0]}}"#,
        ]);
        let g = parse_gallery(text.as_bytes(), Path::new("g.jsonl")).unwrap();
        let ids: Vec<_> = g.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(g[1].time_minutes, Some(30.0));
        assert_eq!(g[2].extra["tag"], vec![1.0]);
    }

    #[test]
    fn duplicate_id_reports_line() {
        let mut lines: Vec<String> = (0..6)
            .map(|i| format!(r#"{{"id":"i{i}","appearance":[{i}.0]}}"#))
            .collect();
        lines.push(r#"{"id":"i2","appearance":[9.0]}"#.into());
        let err = parse_gallery(lines.join("\n").as_bytes(), Path::new("g.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 7);
                assert!(message.contains("i2"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_inconsistent_lines() {
        let bad = gallery_text(&[r#"{"id":"a","appearance":[1.0]}"#, "{not json"]);
        assert!(matches!(
            parse_gallery(bad.as_bytes(), Path::new("g")),
            Err(Error::Parse { line: 2, .. })
        ));
        let dims = gallery_text(&[r#"{"id":"a","appearance":[1.0]}"#, r#"{"id":"b","appearance":[1.0,2.0]}"#]);
        assert!(parse_gallery(dims.as_bytes(), Path::new("g")).is_err());
        let time = r#"{"id":"a","appearance":[1.0],"time_minutes":1440.0}"#;
        assert!(parse_gallery(time.as_bytes(), Path::new("g")).is_err());
    }

    fn small_gallery() -> Vec<ImageRecord> {
        parse_gallery(
            gallery_text(&[r#"{"id":"a","appearance":[1.0]}"#, r#"{"id":"b","appearance":[2.0]}"#]).as_bytes(),
            Path::new("g"),
        )
        .unwrap()
    }

    #[test]
    fn query_capabilities() {
        let g = small_gallery();
        let text = gallery_text(&[
            r#"{"query_id":"q1","relevance":{"a":0.5,"b":0.1},"relevant_ids":["a"]}"#,
            r#"{"query_id":"q2","text":"dog","relevance":{"a":0.5,"b":0.1},"semantic_scores":{"b":0.3}}"#,
        ]);
        let qs = parse_queries(text.as_bytes(), Path::new("q"), Some(&g)).unwrap();
        assert!(qs[0].supports_map() && !qs[0].supports_ncs());
        assert!(qs[1].supports_ncs() && !qs[1].supports_map());
    }

    #[test]
    fn query_unknown_id_is_named() {
        let g = small_gallery();
        let text = r#"{"query_id":"q1","relevance":{"a":0.5,"b":0.1},"relevant_ids":["zzz"]}"#;
        let err = parse_queries(text.as_bytes(), Path::new("q"), Some(&g)).unwrap_err();
        assert!(err.to_string().contains("zzz"), "{err}");
        let partial = r#"{"query_id":"q1","relevance":{"a":0.5}}"#;
        assert!(parse_queries(partial.as_bytes(), Path::new("q"), Some(&g)).is_err());
    }

    #[test]
    fn task_config_defaults_and_validation() {
        let cfg = TaskConfig::from_toml_str(
            r#"
            theta = 0.8
            tn_mode = "tv_m"
            [[attributes]]
            name = "appearance"
            kind = "appearance"
            direction = 1
            weight = 0.3
            [[attributes]]
            name = "time"
            kind = "time"
            direction = "decrease"
            weight = 0.9
            "#,
        )
        .unwrap();
        assert_eq!(cfg.k, 20);
        assert_eq!(cfg.top_n, 200);
        assert_eq!(cfg.tn_mode, TnMode::TvM);
        let rc = cfg.rerank_config().unwrap();
        assert!((rc.specs[0].weight - 0.25).abs() < 1e-15);
        assert_eq!(rc.specs[1].direction, Direction::Decrease);
        assert_eq!(cfg.sweep.weights.len(), 11);
        assert_eq!(cfg.sweep.theta_grid, vec![0.75, 0.8, 0.85, 0.9, 0.95]);
        let back = TaskConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);

        let bad = r#"
            theta = 1.5
            [[attributes]]
            name = "a"
            kind = "appearance"
            direction = 1
            weight = 1.0
        "#;
        assert!(TaskConfig::from_toml_str(bad).is_err());
        let k_too_big = "k = 300\n[[attributes]]\nname='a'\nkind='appearance'\ndirection=1\nweight=1.0";
        assert!(TaskConfig::from_toml_str(k_too_big).is_err());
    }

    #[test]
    fn baseline_mode_derives_from_directions() {
        let cfg = TaskConfig::from_toml_str(
            "[[attributes]]\nname='a'\nkind='appearance'\ndirection=1\nweight=1.0\n[[attributes]]\nname='t'\nkind='time'\ndirection=-1\nweight=1.0",
        )
        .unwrap();
        let b = cfg.baseline_config(BaselineMethod::Clustering).unwrap();
        assert_eq!(b.mode, DiversityMode::Mixed);
        assert_eq!(cfg.baseline_config(BaselineMethod::Kdpp).unwrap().lambda_or_theta, 0.9);
        assert_eq!(cfg.baseline_config(BaselineMethod::Mmr).unwrap().lambda_or_theta, 0.5);
        assert_eq!(b.specs[0].kind, AttributeKind::Appearance);
    }
}
