//! Per-query rerank pipeline shared by the CLI and the HTTP service.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use msdpp::attributes::{build_bundle, AttributeSpec, Direction, ImageRecord, SimilarityBundle};
use msdpp::baselines::{self, BaselineMethod};
use msdpp::dataio::{Query, TaskConfig};
use msdpp::engine::{greedy_rerank_with, relevance_rerank, Execution, RankedList, StepDiagnostic, TnMode};
use msdpp::metrics::{
    average_precision, diversity_metric, harmonic_mean, ncs_at_k, AttributeDiversity, RetrievalKind,
    RetrievalScore,
};
use msdpp::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const TIME_BINS: usize = 24;
pub const LAT_BINS: usize = 18;
pub const LON_BINS: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Msdpp,
    Mmr,
    Kdpp,
    Clustering,
    /// Top-k by relevance, no diversification.
    None,
}

impl Method {
    fn baseline(self) -> Option<BaselineMethod> {
        match self {
            Method::Mmr => Some(BaselineMethod::Mmr),
            Method::Kdpp => Some(BaselineMethod::Kdpp),
            Method::Clustering => Some(BaselineMethod::Clustering),
            Method::Msdpp | Method::None => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Msdpp => "msdpp",
            Method::Mmr => "mmr",
            Method::Kdpp => "kdpp",
            Method::Clustering => "clustering",
            Method::None => "none",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Method as clap::ValueEnum>::from_str(s, false)
            .map_err(|_| Error::Validation(format!("unknown method '{s}'")))
    }
}

/// Whether independent queries are processed on a thread pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Serial,
    #[default]
    Parallel,
}

impl Parallelism {
    fn execution(self) -> Execution {
        match self {
            Parallelism::Serial => Execution::Serial,
            Parallelism::Parallel => Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeOverride {
    pub name: String,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub weight: Option<f64>,
}

/// Per-request parameter changes on top of the loaded task config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub top_n: Option<usize>,
    #[serde(default)]
    pub tn_mode: Option<TnMode>,
    #[serde(default)]
    pub attributes: Vec<AttributeOverride>,
}

impl Overrides {
    pub fn apply(&self, base: &TaskConfig) -> Result<TaskConfig> {
        let mut cfg = base.clone();
        if let Some(t) = self.theta {
            cfg.theta = t;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(n) = self.top_n {
            cfg.top_n = n;
        }
        if let Some(m) = self.tn_mode {
            cfg.tn_mode = m;
        }
        for o in &self.attributes {
            let spec = cfg
                .attributes
                .iter_mut()
                .find(|a| a.name == o.name)
                .ok_or_else(|| Error::Validation(format!("unknown attribute '{}'", o.name)))?;
            if let Some(d) = o.direction {
                spec.direction = d;
            }
            if let Some(w) = o.weight {
                spec.weight = w;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankRequest {
    pub query_id: String,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub overrides: Option<Overrides>,
    #[serde(default)]
    pub include_diagnostics: bool,
}

/// Parameters a response was computed with; weights are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub theta: f64,
    pub k: usize,
    pub top_n: usize,
    pub tn_mode: TnMode,
    pub attributes: Vec<AttributeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub lat_bin: usize,
    pub lon_bin: usize,
    pub count: usize,
}

/// Counts over a 10° latitude/longitude grid; only non-empty cells are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationHeat {
    pub lat_bins: usize,
    pub lon_bins: usize,
    pub cells: Vec<HeatCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResponse {
    pub query_id: String,
    pub method: Method,
    pub params: EffectiveParams,
    pub ranked: Vec<RankedItem>,
    pub diversity: Vec<AttributeDiversity>,
    pub dm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hm: Option<f64>,
    /// Hourly counts of capture times over the ranked items.
    pub time_histogram: Vec<usize>,
    pub location_heat: LocationHeat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepDiagnostic>>,
}

impl RerankResponse {
    pub fn ids(&self) -> Vec<String> {
        self.ranked.iter().map(|r| r.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryMeta {
    pub items: usize,
    pub queries: usize,
    pub appearance_dim: usize,
    pub with_time: usize,
    pub with_location: usize,
    /// Extra feature names and how many items carry each.
    pub extra: Vec<(String, usize)>,
    pub attributes: Vec<AttributeSpec>,
}

/// Immutable data a pipeline runs over.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub config: TaskConfig,
    pub gallery: Vec<ImageRecord>,
    pub queries: Vec<Query>,
    records: HashMap<String, usize>,
    query_index: HashMap<String, usize>,
}

impl Snapshot {
    pub fn new(config: TaskConfig, gallery: Vec<ImageRecord>, queries: Vec<Query>) -> Result<Self> {
        config.validate()?;
        let records = gallery.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let query_index = queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.query_id.clone(), i))
            .collect();
        Ok(Snapshot {
            config,
            gallery,
            queries,
            records,
            query_index,
        })
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.query_index.get(id).map(|&i| &self.queries[i])
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.get(id).map(|&i| &self.gallery[i])
    }

    pub fn query_summaries(&self) -> Vec<QuerySummary> {
        self.queries
            .iter()
            .map(|q| QuerySummary {
                query_id: q.query_id.clone(),
                text: q.text.clone(),
            })
            .collect()
    }

    pub fn meta(&self) -> GalleryMeta {
        let mut extra: std::collections::BTreeMap<String, usize> = Default::default();
        for r in &self.gallery {
            for name in r.extra.keys() {
                *extra.entry(name.clone()).or_default() += 1;
            }
        }
        GalleryMeta {
            items: self.gallery.len(),
            queries: self.queries.len(),
            appearance_dim: self.gallery.first().map_or(0, |r| r.appearance.len()),
            with_time: self.gallery.iter().filter(|r| r.time_minutes.is_some()).count(),
            with_location: self.gallery.iter().filter(|r| r.lat_deg.is_some()).count(),
            extra: extra.into_iter().collect(),
            attributes: self.config.attributes.clone(),
        }
    }

    /// Builds the candidate bundle for `query` under `config`.
    pub fn bundle(&self, query: &Query, config: &TaskConfig) -> Result<SimilarityBundle> {
        let specs = config.rerank_config()?.specs;
        build_bundle(
            &self.gallery,
            &query.relevance_map(),
            &specs,
            config.top_n,
            &config.embedding_options(),
        )
    }

    /// Runs one query end to end.
    pub fn rerank_query(
        &self,
        query: &Query,
        config: &TaskConfig,
        method: Method,
        include_diagnostics: bool,
        exec: Parallelism,
    ) -> Result<RerankResponse> {
        let bundle = self.bundle(query, config)?;
        let ranked = run_method(&bundle, config, method, exec)?;
        let mut response = self.respond(query, config, method, &bundle, &ranked)?;
        if include_diagnostics {
            response.steps = Some(ranked.steps);
        }
        Ok(response)
    }

    /// Runs every query (or the selected ones, in the given order).
    pub fn rerank_all(
        &self,
        config: &TaskConfig,
        method: Method,
        query_ids: Option<&[String]>,
        include_diagnostics: bool,
        par: Parallelism,
    ) -> Result<Vec<RerankResponse>> {
        let queries: Vec<&Query> = match query_ids {
            Some(ids) => ids
                .iter()
                .map(|id| self.query(id).ok_or_else(|| unknown_query(id)))
                .collect::<Result<_>>()?,
            None => self.queries.iter().collect(),
        };
        // Within-query candidate evaluation stays serial when queries fan out.
        let run = |q: &&Query| self.rerank_query(q, config, method, include_diagnostics, Parallelism::Serial);
        match par {
            Parallelism::Serial => queries.iter().map(run).collect(),
            Parallelism::Parallel => queries.par_iter().map(run).collect(),
        }
    }

    fn respond(
        &self,
        query: &Query,
        config: &TaskConfig,
        method: Method,
        bundle: &SimilarityBundle,
        ranked: &RankedList,
    ) -> Result<RerankResponse> {
        let rc = config.rerank_config()?;
        let (diversity, dm) = diversity_metric(ranked, bundle, &rc.specs, rc.k)?;
        let retrieval = retrieval_score(query, &ranked.ids, config)?;
        let hm = retrieval.map(|r| harmonic_mean(r.value, dm));
        let records: Vec<&ImageRecord> = ranked
            .ids
            .iter()
            .map(|id| self.record(id).expect("ranked ids come from the gallery"))
            .collect();
        Ok(RerankResponse {
            query_id: query.query_id.clone(),
            method,
            params: EffectiveParams {
                theta: rc.theta,
                k: rc.k,
                top_n: rc.top_n,
                tn_mode: rc.tn_mode,
                attributes: rc.specs.clone(),
            },
            ranked: ranked
                .indices
                .iter()
                .map(|&j| RankedItem {
                    id: bundle.candidate_ids[j].clone(),
                    relevance: bundle.relevance[j],
                })
                .collect(),
            diversity,
            dm,
            retrieval,
            hm,
            time_histogram: time_histogram(&records),
            location_heat: location_heat(&records),
            steps: None,
        })
    }
}

pub fn unknown_query(id: &str) -> Error {
    Error::Validation(format!("unknown query id '{id}'"))
}

/// Dispatches to the selected reranker.
pub fn run_method(
    bundle: &SimilarityBundle,
    config: &TaskConfig,
    method: Method,
    exec: Parallelism,
) -> Result<RankedList> {
    match method {
        Method::Msdpp => greedy_rerank_with(bundle, &config.rerank_config()?, exec.execution()),
        Method::None => relevance_rerank(bundle, config.k),
        other => {
            let b = other.baseline().expect("baseline method");
            baselines::rerank(bundle, &config.baseline_config(b)?)
        }
    }
}

/// AP of the ranked list or N@k, whichever the task asks for. `None` when
/// the query lacks the needed ground truth.
pub fn retrieval_score(query: &Query, ids: &[String], config: &TaskConfig) -> Result<Option<RetrievalScore>> {
    Ok(match config.metric {
        RetrievalKind::Map => query.relevant_set().map(|rel: HashSet<String>| RetrievalScore {
            kind: RetrievalKind::Map,
            value: average_precision(ids, &rel),
        }),
        RetrievalKind::NcsAtK => match query.semantic_map() {
            Some(sem) => Some(RetrievalScore {
                kind: RetrievalKind::NcsAtK,
                value: ncs_at_k(ids, &sem, config.ncs_k)?,
            }),
            None => None,
        },
    })
}

pub fn time_histogram(records: &[&ImageRecord]) -> Vec<usize> {
    let mut bins = vec![0; TIME_BINS];
    for t in records.iter().filter_map(|r| r.time_minutes) {
        bins[((t / 60.0).floor() as usize).min(TIME_BINS - 1)] += 1;
    }
    bins
}

pub fn location_heat(records: &[&ImageRecord]) -> LocationHeat {
    let mut counts = std::collections::BTreeMap::new();
    for r in records {
        if let (Some(lat), Some(lon)) = (r.lat_deg, r.lon_deg) {
            let lat_bin = (((lat + 90.0) / 10.0).floor() as usize).min(LAT_BINS - 1);
            let lon_bin = (((lon + 180.0) / 10.0).floor() as usize).min(LON_BINS - 1);
            *counts.entry((lat_bin, lon_bin)).or_insert(0) += 1;
        }
    }
    LocationHeat {
        lat_bins: LAT_BINS,
        lon_bins: LON_BINS,
        cells: counts
            .into_iter()
            .map(|((lat_bin, lon_bin), count)| HeatCell { lat_bin, lon_bin, count })
            .collect(),
    }
}
