//! Evaluation of rerank results against query ground truth.

use std::collections::HashMap;

use msdpp::attributes::{build_bundle, ImageRecord};
use msdpp::dataio::{Query, TaskConfig};
use msdpp::engine::RankedList;
use msdpp::metrics::{diversity_metric, harmonic_mean, AttributeDiversity, EvalReport, RetrievalScore};
use msdpp::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::pipeline::{retrieval_score, RerankResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalScore>,
    pub per_attribute: Vec<AttributeDiversity>,
    pub dm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hm: Option<f64>,
}

impl QueryEval {
    pub fn from_response(r: &RerankResponse) -> Self {
        QueryEval {
            query_id: r.query_id.clone(),
            retrieval: r.retrieval,
            per_attribute: r.diversity.clone(),
            dm: r.dm,
            hm: r.hm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub aggregate: EvalReport,
    pub per_query: Vec<QueryEval>,
}

/// Query-averaged metrics. Retrieval is averaged only when every query has
/// a score; HM combines the averaged retrieval and DM.
pub fn aggregate(per_query: &[QueryEval]) -> EvalReport {
    let n = per_query.len() as f64;
    let mean = |f: &dyn Fn(&QueryEval) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let retrieval = per_query
        .iter()
        .map(|q| q.retrieval)
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .map(|v| RetrievalScore {
            kind: v[0].kind,
            value: v.iter().map(|r| r.value).sum::<f64>() / n,
        });
    let per_attribute = match per_query.first() {
        Some(first) => first
            .per_attribute
            .iter()
            .enumerate()
            .map(|(i, a)| AttributeDiversity {
                name: a.name.clone(),
                vs: mean(&|q| q.per_attribute[i].vs),
                normalized: mean(&|q| q.per_attribute[i].normalized),
            })
            .collect(),
        None => Vec::new(),
    };
    let dm = if per_query.is_empty() { 0.0 } else { mean(&|q| q.dm) };
    EvalReport {
        hm: retrieval.map(|r| harmonic_mean(r.value, dm)),
        retrieval,
        per_attribute,
        dm,
        prs: None,
    }
}

/// Evaluates stored results. Retrieval is recomputed from the ranked ids.
/// With a gallery, diversity is recomputed from the ranked ids as well;
/// otherwise the stored values are used.
pub fn evaluate(
    results: &[RerankResponse],
    queries: &[Query],
    config: &TaskConfig,
    gallery: Option<&[ImageRecord]>,
) -> Result<EvalDocument> {
    if results.is_empty() {
        return Err(Error::Validation("no results to evaluate".into()));
    }
    let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let mut per_query = Vec::with_capacity(results.len());
    for r in results {
        let query = by_id
            .get(r.query_id.as_str())
            .ok_or_else(|| Error::Validation(format!("results mention unknown query '{}'", r.query_id)))?;
        let ids = r.ids();
        let retrieval = retrieval_score(query, &ids, config)?.ok_or_else(|| {
            Error::Validation(format!(
                "query '{}' lacks the ground truth needed for {:?}",
                r.query_id, config.metric
            ))
        })?;
        let (per_attribute, dm) = match gallery {
            Some(g) => recompute_diversity(r, query, config, g)?,
            None => (r.diversity.clone(), r.dm),
        };
        per_query.push(QueryEval {
            query_id: r.query_id.clone(),
            retrieval: Some(retrieval),
            hm: Some(harmonic_mean(retrieval.value, dm)),
            per_attribute,
            dm,
        });
    }
    Ok(EvalDocument {
        aggregate: aggregate(&per_query),
        per_query,
    })
}

fn recompute_diversity(
    r: &RerankResponse,
    query: &Query,
    config: &TaskConfig,
    gallery: &[ImageRecord],
) -> Result<(Vec<AttributeDiversity>, f64)> {
    let p = &r.params;
    let bundle = build_bundle(
        gallery,
        &query.relevance_map(),
        &p.attributes,
        p.top_n,
        &config.embedding_options(),
    )?;
    let pos: HashMap<&str, usize> = bundle
        .candidate_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let indices = r
        .ranked
        .iter()
        .map(|item| {
            pos.get(item.id.as_str()).copied().ok_or_else(|| {
                Error::Validation(format!(
                    "ranked id '{}' of query '{}' is not among the top-{} candidates",
                    item.id, r.query_id, p.top_n
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ranked = RankedList {
        ids: r.ids(),
        indices,
        steps: Vec::new(),
    };
    diversity_metric(&ranked, &bundle, &p.attributes, p.k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use msdpp::metrics::RetrievalKind;

    fn q(id: &str, r: Option<f64>, vs: f64, dm: f64) -> QueryEval {
        QueryEval {
            query_id: id.into(),
            retrieval: r.map(|value| RetrievalScore {
                kind: RetrievalKind::Map,
                value,
            }),
            per_attribute: vec![AttributeDiversity {
                name: "a".into(),
                vs,
                normalized: dm,
            }],
            dm,
            hm: None,
        }
    }

    #[test]
    fn aggregate_means_and_hm_of_means() {
        let agg = aggregate(&[q("x", Some(0.5), 2.0, 0.25), q("y", Some(1.0), 4.0, 0.75)]);
        assert_eq!(agg.retrieval.unwrap().value, 0.75);
        assert_eq!(agg.dm, 0.5);
        assert_eq!(agg.per_attribute[0].vs, 3.0);
        assert_eq!(agg.hm, Some(harmonic_mean(0.75, 0.5)));
    }

    #[test]
    fn aggregate_drops_partial_retrieval() {
        let agg = aggregate(&[q("x", Some(0.5), 1.0, 0.5), q("y", None, 1.0, 0.5)]);
        assert!(agg.retrieval.is_none());
        assert!(agg.hm.is_none());
        let empty = aggregate(&[]);
        assert_eq!(empty.dm, 0.0);
        assert!(empty.per_attribute.is_empty());
    }
}
