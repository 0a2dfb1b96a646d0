//! MS-DPP objective and greedy top-K selection.
//!
//! For a subset `Y` the objective in log domain is
//!
//! ```text
//! log f(Y) = 2α Σ_{j∈Y} r_j + tr( Σ_i s_i w_i logm S_{i,Y} )
//! ```
//!
//! since `det(expm A) = e^{tr A}`. With tangent normalization each
//! `logm S_{i,Y}` is first rescaled to Frobenius norm `b = ‖logm R_Y‖_F`
//! (`tv`), and optionally the weighted sum is rescaled to norm `b` as well
//! (`tv_m`). Without normalization the trace splits into per-attribute
//! log-determinants, which is what [`f_ms_log_fast`] evaluates.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::{
    normalize_weights, relevance_alpha, AttributeSimilarity, AttributeSpec, SimilarityBundle,
};
use crate::error::{Error, Result};
use crate::spd::{frobenius_norm, log_det, matrix_log, SymMatrix};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_TOP_N: usize = 200;

/// Tangent norms at or below this are treated as zero.
const ZERO_NORM: f64 = 1e-14;

/// Tangent normalization mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TnMode {
    #[default]
    Off,
    /// Normalize each attribute's tangent vector.
    Tv,
    /// Normalize each tangent vector and then their weighted sum.
    TvM,
}

impl TnMode {
    pub const ALL: [TnMode; 3] = [TnMode::Off, TnMode::Tv, TnMode::TvM];

    pub fn is_active(self) -> bool {
        self != TnMode::Off
    }
}

impl fmt::Display for TnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TnMode::Off => "off",
            TnMode::Tv => "tv",
            TnMode::TvM => "tv_m",
        })
    }
}

impl std::str::FromStr for TnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(TnMode::Off),
            "tv" => Ok(TnMode::Tv),
            "tv_m" => Ok(TnMode::TvM),
            other => Err(Error::validation(format!(
                "unknown tn_mode '{other}' (expected off, tv or tv_m)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    /// Accuracy/diversity trade-off in (0, 1).
    pub theta: f64,
    pub k: usize,
    pub top_n: usize,
    pub tn_mode: TnMode,
    pub specs: Vec<AttributeSpec>,
}

impl RerankConfig {
    /// Validates and normalizes attribute weights to sum to one.
    pub fn new(
        theta: f64,
        k: usize,
        top_n: usize,
        tn_mode: TnMode,
        specs: Vec<AttributeSpec>,
    ) -> Result<Self> {
        let cfg = RerankConfig {
            theta,
            k,
            top_n,
            tn_mode,
            specs: normalize_weights(&specs)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant except weight normalization, so callers may
    /// evaluate the objective with unnormalized weights.
    pub fn validate(&self) -> Result<()> {
        relevance_alpha(self.theta)?;
        if self.k == 0 {
            return Err(Error::validation("k must be positive"));
        }
        if self.k > self.top_n {
            return Err(Error::validation(format!(
                "k = {} exceeds top_n = {}",
                self.k, self.top_n
            )));
        }
        if self.specs.is_empty() {
            return Err(Error::validation("at least one attribute is required"));
        }
        if let Some(s) = self.specs.iter().find(|s| !(s.weight >= 0.0) || !s.weight.is_finite()) {
            return Err(Error::validation(format!(
                "attribute '{}' has invalid weight {}",
                s.name, s.weight
            )));
        }
        Ok(())
    }

    pub fn alpha(&self) -> Result<f64> {
        relevance_alpha(self.theta)
    }
}

/// Per-step record of the greedy selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub id: String,
    /// Position in the bundle's candidate list.
    pub index: usize,
    /// Objective value of the selected prefix (log domain for DPP methods).
    pub objective: f64,
    /// Increase of the objective caused by this step.
    pub gain: f64,
    /// `log det S_{i,Y}` per attribute after the step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_dets: Vec<f64>,
    /// `b / ‖logm S_{i,Y}‖_F` per attribute when tangent normalization is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tn_scales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub ids: Vec<String>,
    pub indices: Vec<usize>,
    pub steps: Vec<StepDiagnostic>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Decomposition of the unified tangent for one subset.
#[derive(Debug, Clone)]
pub struct TangentTerms {
    /// The matrix whose exponential is the unified similarity.
    pub tangent: SymMatrix,
    /// Per-attribute `logm S_{i,Y}` (unscaled, unsigned).
    pub logs: Vec<SymMatrix>,
    /// Per-attribute tangents after normalization (equal to `logs` when off).
    pub scaled: Vec<SymMatrix>,
    /// `b / ‖logm S_{i,Y}‖_F`, present when normalization was applied.
    pub scales: Option<Vec<f64>>,
    /// `b = ‖logm R_Y‖_F`.
    pub b: f64,
    /// Mode actually applied; falls back to `Off` when `b = 0`.
    pub applied: TnMode,
}

fn resolve<'a>(
    bundle: &'a SimilarityBundle,
    config: &RerankConfig,
) -> Result<Vec<(&'a AttributeSimilarity, f64)>> {
    config
        .specs
        .iter()
        .map(|spec| {
            bundle
                .attribute(&spec.name)
                .map(|a| (a, spec.signed_weight()))
                .ok_or_else(|| {
                    Error::validation(format!("bundle has no attribute '{}'", spec.name))
                })
        })
        .collect()
}

fn check_subset(bundle: &SimilarityBundle, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::validation("subset must be non-empty"));
    }
    let n = bundle.len();
    let mut seen = vec![false; n];
    for &j in subset {
        if j >= n {
            return Err(Error::validation(format!("subset index {j} out of range {n}")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::validation(format!("subset index {j} repeated")));
        }
    }
    Ok(())
}

fn relevance_term(bundle: &SimilarityBundle, subset: &[usize], alpha: f64) -> f64 {
    2.0 * alpha * subset.iter().map(|&j| bundle.relevance[j]).sum::<f64>()
}

/// `‖logm R_Y‖_F` with `R_Y = diag(exp(α r_j))`.
fn relevance_tangent_norm(bundle: &SimilarityBundle, subset: &[usize], alpha: f64) -> f64 {
    subset
        .iter()
        .map(|&j| (alpha * bundle.relevance[j]).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn tangent_terms_resolved(
    bundle: &SimilarityBundle,
    attrs: &[(&AttributeSimilarity, f64)],
    subset: &[usize],
    tn_mode: TnMode,
    alpha: f64,
) -> Result<TangentTerms> {
    let g = subset.len();
    let logs = attrs
        .iter()
        .map(|(a, _)| matrix_log(&a.kernel.submatrix(subset)))
        .collect::<Result<Vec<_>>>()?;
    let b = relevance_tangent_norm(bundle, subset, alpha);
    let applied = if tn_mode.is_active() && b > 0.0 {
        tn_mode
    } else {
        TnMode::Off
    };

    let (scaled, scales) = if applied.is_active() {
        let mut scaled = Vec::with_capacity(logs.len());
        let mut scales = Vec::with_capacity(logs.len());
        for l in &logs {
            let norm = frobenius_norm(l);
            let c = if norm > ZERO_NORM { b / norm } else { 0.0 };
            scales.push(c);
            scaled.push(l.scaled(c));
        }
        (scaled, Some(scales))
    } else {
        (logs.clone(), None)
    };

    let mut tangent = SymMatrix::zeros(g);
    for ((_, sw), t) in attrs.iter().zip(&scaled) {
        tangent.add_scaled(*sw, t);
    }
    if applied == TnMode::TvM {
        let norm = frobenius_norm(&tangent);
        let c = if norm > ZERO_NORM { b / norm } else { 0.0 };
        tangent = tangent.scaled(c);
    }

    Ok(TangentTerms {
        tangent,
        logs,
        scaled,
        scales,
        b,
        applied,
    })
}

/// Full decomposition of the unified tangent for `subset`.
pub fn tangent_terms(
    bundle: &SimilarityBundle,
    subset: &[usize],
    config: &RerankConfig,
) -> Result<TangentTerms> {
    config.validate()?;
    check_subset(bundle, subset)?;
    let attrs = resolve(bundle, config)?;
    tangent_terms_resolved(bundle, &attrs, subset, config.tn_mode, config.alpha()?)
}

/// `Σ_i s_i w_i A_i` where `A_i` is `logm S_{i,Y}`, optionally tangent-normalized.
pub fn unified_tangent(
    bundle: &SimilarityBundle,
    subset: &[usize],
    config: &RerankConfig,
) -> Result<SymMatrix> {
    tangent_terms(bundle, subset, config).map(|t| t.tangent)
}

/// `log f_ms(Y)` through the eigendecomposition path.
pub fn f_ms_log(bundle: &SimilarityBundle, subset: &[usize], config: &RerankConfig) -> Result<f64> {
    let terms = tangent_terms(bundle, subset, config)?;
    Ok(relevance_term(bundle, subset, config.alpha()?) + terms.tangent.trace())
}

fn f_ms_log_fast_resolved(
    bundle: &SimilarityBundle,
    attrs: &[(&AttributeSimilarity, f64)],
    subset: &[usize],
    alpha: f64,
) -> Result<f64> {
    let mut total = relevance_term(bundle, subset, alpha);
    for (a, sw) in attrs {
        if *sw != 0.0 {
            total += sw * log_det(&a.kernel.submatrix(subset))?;
        }
    }
    Ok(total)
}

/// `log f_ms(Y)` via per-attribute Cholesky log-determinants. Only valid
/// without tangent normalization.
pub fn f_ms_log_fast(
    bundle: &SimilarityBundle,
    subset: &[usize],
    config: &RerankConfig,
) -> Result<f64> {
    if config.tn_mode.is_active() {
        return Err(Error::Contract(format!(
            "fast log-det path is only valid with tn_mode=off (got {})",
            config.tn_mode
        )));
    }
    config.validate()?;
    check_subset(bundle, subset)?;
    let attrs = resolve(bundle, config)?;
    f_ms_log_fast_resolved(bundle, &attrs, subset, config.alpha()?)
}

/// Whether candidate evaluation within a greedy step fans out to a thread pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Total order used by every greedy selector: higher score, then higher raw
/// relevance, then ascending id. NaN scores rank last.
pub(crate) fn compare_candidates(
    bundle: &SimilarityBundle,
    a: (usize, f64),
    b: (usize, f64),
) -> Ordering {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    key(a.1)
        .total_cmp(&key(b.1))
        .then_with(|| bundle.relevance[a.0].total_cmp(&bundle.relevance[b.0]))
        .then_with(|| bundle.candidate_ids[b.0].cmp(&bundle.candidate_ids[a.0]))
}

pub(crate) fn pick_best(
    bundle: &SimilarityBundle,
    scored: impl IntoIterator<Item = (usize, f64)>,
) -> Option<(usize, f64)> {
    scored
        .into_iter()
        .max_by(|&a, &b| compare_candidates(bundle, a, b))
}

pub(crate) fn check_k(bundle: &SimilarityBundle, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::validation("k must be positive"));
    }
    if k > bundle.len() {
        return Err(Error::validation(format!(
            "k = {k} exceeds the {} available candidates",
            bundle.len()
        )));
    }
    Ok(())
}

/// Greedy MS-DPP selection with the default (parallel) execution.
pub fn greedy_rerank(bundle: &SimilarityBundle, config: &RerankConfig) -> Result<RankedList> {
    greedy_rerank_with(bundle, config, Execution::default())
}

/// Greedy MS-DPP selection: at each step append the candidate that maximizes
/// `log f_ms` of the grown subset.
pub fn greedy_rerank_with(
    bundle: &SimilarityBundle,
    config: &RerankConfig,
    exec: Execution,
) -> Result<RankedList> {
    config.validate()?;
    check_k(bundle, config.k)?;
    let attrs = resolve(bundle, config)?;
    let alpha = config.alpha()?;
    let tn = config.tn_mode;

    let objective = |subset: &[usize]| -> Result<f64> {
        if tn.is_active() {
            let t = tangent_terms_resolved(bundle, &attrs, subset, tn, alpha)?;
            Ok(relevance_term(bundle, subset, alpha) + t.tangent.trace())
        } else {
            f_ms_log_fast_resolved(bundle, &attrs, subset, alpha)
        }
    };

    let n = bundle.len();
    let mut selected: Vec<usize> = Vec::with_capacity(config.k);
    let mut taken = vec![false; n];
    let mut steps = Vec::with_capacity(config.k);
    let mut previous = 0.0;

    while selected.len() < config.k {
        let remaining: Vec<usize> = (0..n).filter(|&j| !taken[j]).collect();
        let evaluate = |j: usize| -> Result<(usize, f64)> {
            let mut subset = selected.clone();
            subset.push(j);
            Ok((j, objective(&subset)?))
        };
        let scored: Vec<(usize, f64)> = match exec {
            Execution::Serial => remaining.iter().map(|&j| evaluate(j)).collect::<Result<_>>()?,
            Execution::Parallel => remaining
                .par_iter()
                .map(|&j| evaluate(j))
                .collect::<Result<_>>()?,
        };
        let (best, value) = pick_best(bundle, scored)
            .ok_or_else(|| Error::validation("no candidates left to select"))?;

        selected.push(best);
        taken[best] = true;

        let log_dets = attrs
            .iter()
            .map(|(a, _)| log_det(&a.kernel.submatrix(&selected)))
            .collect::<Result<Vec<_>>>()?;
        let tn_scales = if tn.is_active() {
            tangent_terms_resolved(bundle, &attrs, &selected, tn, alpha)?.scales
        } else {
            None
        };
        steps.push(StepDiagnostic {
            id: bundle.candidate_ids[best].clone(),
            index: best,
            objective: value,
            gain: value - previous,
            log_dets,
            tn_scales,
        });
        previous = value;
    }

    Ok(RankedList {
        ids: selected.iter().map(|&j| bundle.candidate_ids[j].clone()).collect(),
        indices: selected,
        steps,
    })
}

/// Top-k candidates in relevance order (the un-diversified ranking).
pub fn relevance_rerank(bundle: &SimilarityBundle, k: usize) -> Result<RankedList> {
    check_k(bundle, k)?;
    let mut order: Vec<usize> = (0..bundle.len()).collect();
    order.sort_by(|&a, &b| compare_candidates(bundle, (b, 0.0), (a, 0.0)));
    order.truncate(k);
    let mut total = 0.0;
    let steps = order
        .iter()
        .map(|&j| {
            total += bundle.relevance[j];
            StepDiagnostic {
                id: bundle.candidate_ids[j].clone(),
                index: j,
                objective: total,
                gain: bundle.relevance[j],
                log_dets: Vec::new(),
                tn_scales: None,
            }
        })
        .collect();
    Ok(RankedList {
        ids: order.iter().map(|&j| bundle.candidate_ids[j].clone()).collect(),
        indices: order,
        steps,
    })
}
