//! Weight, θ and grid sweeps over all queries.

use std::collections::HashSet;

use msdpp::attributes::AttributeSpec;
use msdpp::dataio::{SweepKind, TaskConfig};
use msdpp::engine::TnMode;
use msdpp::metrics::{prs, prs_mean_slope, spearman_rho, EvalReport};
use msdpp::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::eval::{aggregate, QueryEval};
use crate::pipeline::{Method, Overrides, Parallelism, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    pub theta: f64,
    pub tn_mode: TnMode,
    /// Normalized attribute specs used at this point.
    pub attributes: Vec<AttributeSpec>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrsEntry {
    pub tn_mode: TnMode,
    pub attribute: String,
    pub weights: Vec<f64>,
    /// Query-averaged normalized diversity of the swept attribute.
    pub diversity: Vec<f64>,
    pub prs: f64,
    /// PRS divided by the number of weight steps (non-reference variant).
    pub prs_mean_slope: f64,
}

/// Rank correlation of the metrics with θ for one TN mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTrend {
    pub tn_mode: TnMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_rho: Option<f64>,
    pub dm_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    pub points: Vec<SweepPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prs: Vec<PrsEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trends: Vec<ThetaTrend>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<SweepPoint>,
}

/// Gives `attribute` weight `w` and shares `1 − w` among the others in
/// proportion to their configured weights (equally if those are all zero).
pub fn reweight(specs: &[AttributeSpec], attribute: &str, w: f64) -> Result<Vec<AttributeSpec>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Validation(format!("sweep weight {w} outside [0, 1]")));
    }
    if !specs.iter().any(|s| s.name == attribute) {
        return Err(Error::Validation(format!("unknown attribute '{attribute}'")));
    }
    if specs.len() < 2 {
        return Err(Error::Validation("a weight sweep needs at least two attributes".into()));
    }
    let others: f64 = specs.iter().filter(|s| s.name != attribute).map(|s| s.weight).sum();
    let n_others = (specs.len() - 1) as f64;
    Ok(specs
        .iter()
        .map(|s| {
            let weight = if s.name == attribute {
                w
            } else if others > 0.0 {
                (1.0 - w) * s.weight / others
            } else {
                (1.0 - w) / n_others
            };
            AttributeSpec { weight, ..s.clone() }
        })
        .collect())
}

fn modes(config: &TaskConfig, requested: &[TnMode]) -> Vec<TnMode> {
    if requested.is_empty() {
        vec![config.tn_mode]
    } else {
        requested.to_vec()
    }
}

fn non_empty<T>(grid: &[T], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Validation(format!("{what} grid is empty")));
    }
    Ok(())
}

/// Runs all queries at one configuration and aggregates.
pub fn evaluate_point(
    snapshot: &Snapshot,
    config: &TaskConfig,
    method: Method,
    query_ids: Option<&[String]>,
    par: Parallelism,
) -> Result<EvalReport> {
    let responses = snapshot.rerank_all(config, method, query_ids, false, par)?;
    let per_query: Vec<QueryEval> = responses.iter().map(QueryEval::from_response).collect();
    if per_query.iter().any(|q| q.retrieval.is_none()) {
        return Err(Error::Validation(format!(
            "some queries lack the ground truth needed for {:?}",
            config.metric
        )));
    }
    Ok(aggregate(&per_query))
}

fn point(
    snapshot: &Snapshot,
    config: &TaskConfig,
    weight: Option<f64>,
    method: Method,
    query_ids: Option<&[String]>,
    par: Parallelism,
) -> Result<SweepPoint> {
    Ok(SweepPoint {
        weight,
        theta: config.theta,
        tn_mode: config.tn_mode,
        attributes: config.rerank_config()?.specs,
        report: evaluate_point(snapshot, config, method, query_ids, par)?,
    })
}

/// Options shared by every sweep kind.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub method: Method,
    pub query_ids: Option<Vec<String>>,
    pub overrides: Option<Overrides>,
    pub parallelism: Parallelism,
}

/// Runs the sweep described by `snapshot.config.sweep` (after overrides).
pub fn run_sweep(snapshot: &Snapshot, opts: &SweepOptions) -> Result<SweepReport> {
    let base = match &opts.overrides {
        Some(o) => o.apply(&snapshot.config)?,
        None => snapshot.config.clone(),
    };
    match base.sweep.kind {
        SweepKind::Weight => weight_sweep(snapshot, &base, opts),
        SweepKind::Theta => theta_sweep(snapshot, &base, opts),
        SweepKind::Grid => grid_search(snapshot, &base, opts),
    }
}

pub fn weight_sweep(snapshot: &Snapshot, base: &TaskConfig, opts: &SweepOptions) -> Result<SweepReport> {
    let sweep = &base.sweep;
    non_empty(&sweep.weights, "weight")?;
    let attribute = sweep
        .attribute
        .clone()
        .or_else(|| base.attributes.first().map(|a| a.name.clone()))
        .ok_or_else(|| Error::Validation("no attribute to sweep".into()))?;
    let qids = opts.query_ids.as_deref();
    let mut points = Vec::new();
    let mut entries = Vec::new();
    for mode in modes(base, &sweep.tn_modes) {
        let mut series = Vec::with_capacity(sweep.weights.len());
        for &w in &sweep.weights {
            let mut cfg = base.clone();
            cfg.tn_mode = mode;
            cfg.attributes = reweight(&base.attributes, &attribute, w)?;
            let p = point(snapshot, &cfg, Some(w), opts.method, qids, opts.parallelism)?;
            let d = p
                .report
                .per_attribute
                .iter()
                .find(|a| a.name == attribute)
                .map(|a| a.normalized)
                .expect("swept attribute is evaluated");
            series.push(d);
            points.push(p);
        }
        if sweep.weights.len() >= 2 {
            entries.push(PrsEntry {
                tn_mode: mode,
                attribute: attribute.clone(),
                weights: sweep.weights.clone(),
                prs: prs(&series, &sweep.weights)?,
                prs_mean_slope: prs_mean_slope(&series, &sweep.weights)?,
                diversity: series,
            });
        }
    }
    Ok(SweepReport {
        kind: SweepKind::Weight,
        method: opts.method,
        attribute: Some(attribute),
        points,
        prs: entries,
        trends: Vec::new(),
        best: None,
    })
}

pub fn theta_sweep(snapshot: &Snapshot, base: &TaskConfig, opts: &SweepOptions) -> Result<SweepReport> {
    let sweep = &base.sweep;
    non_empty(&sweep.thetas, "theta")?;
    let qids = opts.query_ids.as_deref();
    let mut points = Vec::new();
    let mut trends = Vec::new();
    for mode in modes(base, &sweep.tn_modes) {
        let mut run = Vec::with_capacity(sweep.thetas.len());
        for &theta in &sweep.thetas {
            let mut cfg = base.clone();
            cfg.tn_mode = mode;
            cfg.theta = theta;
            cfg.validate()?;
            run.push(point(snapshot, &cfg, None, opts.method, qids, opts.parallelism)?);
        }
        let dm: Vec<f64> = run.iter().map(|p| p.report.dm).collect();
        let retrieval: Option<Vec<f64>> = run.iter().map(|p| p.report.retrieval.map(|r| r.value)).collect();
        trends.push(ThetaTrend {
            tn_mode: mode,
            retrieval_rho: retrieval.map(|r| spearman_rho(&sweep.thetas, &r)),
            dm_rho: spearman_rho(&sweep.thetas, &dm),
        });
        points.extend(run);
    }
    Ok(SweepReport {
        kind: SweepKind::Theta,
        method: opts.method,
        attribute: None,
        points,
        prs: Vec::new(),
        trends,
        best: None,
    })
}

/// Every assignment of `grid` values to the attributes, normalized, with
/// duplicates (after normalization) removed.
fn weight_combinations(specs: &[AttributeSpec], grid: &[f64]) -> Vec<Vec<AttributeSpec>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut idx = vec![0usize; specs.len()];
    loop {
        let raw: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            let key: Vec<i64> = raw.iter().map(|w| (w / total * 1e9).round() as i64).collect();
            if seen.insert(key) {
                out.push(
                    specs
                        .iter()
                        .zip(&raw)
                        .map(|(s, &w)| AttributeSpec { weight: w, ..s.clone() })
                        .collect(),
                );
            }
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return out;
            }
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

pub fn grid_search(snapshot: &Snapshot, base: &TaskConfig, opts: &SweepOptions) -> Result<SweepReport> {
    let sweep = &base.sweep;
    non_empty(&sweep.theta_grid, "theta")?;
    non_empty(&sweep.weight_grid, "weight")?;
    let qids = opts.query_ids.as_deref();
    let combos = weight_combinations(&base.attributes, &sweep.weight_grid);
    if combos.is_empty() {
        return Err(Error::Validation("weight grid has no positive combination".into()));
    }
    let mut points = Vec::new();
    for mode in modes(base, &sweep.tn_modes) {
        for &theta in &sweep.theta_grid {
            for specs in &combos {
                let mut cfg = base.clone();
                cfg.tn_mode = mode;
                cfg.theta = theta;
                cfg.attributes = specs.clone();
                cfg.validate()?;
                points.push(point(snapshot, &cfg, None, opts.method, qids, opts.parallelism)?);
            }
        }
    }
    let best = points
        .iter()
        .fold(None::<&SweepPoint>, |best, p| {
            let hm = p.report.hm.unwrap_or(f64::NEG_INFINITY);
            match best {
                Some(b) if b.report.hm.unwrap_or(f64::NEG_INFINITY) >= hm => Some(b),
                _ => Some(p),
            }
        })
        .cloned();
    Ok(SweepReport {
        kind: SweepKind::Grid,
        method: opts.method,
        attribute: None,
        points,
        prs: Vec::new(),
        trends: Vec::new(),
        best,
    })
}
