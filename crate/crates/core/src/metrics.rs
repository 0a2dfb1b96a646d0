//! Diversity and retrieval metrics.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeSpec, Direction, SimilarityBundle};
use crate::engine::RankedList;
use crate::error::{Error, Result};
use crate::spd::{sym_eig, SymMatrix};

/// Vendi score order used for the diversity metric.
pub const VENDI_Q: f64 = 0.1;
pub const DEFAULT_NCS_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalKind {
    Map,
    NcsAtK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScore {
    pub kind: RetrievalKind,
    pub value: f64,
}

/// Diversity of one attribute over a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDiversity {
    pub name: String,
    /// `VS_q` of the top-k similarity submatrix.
    pub vs: f64,
    /// `VS/k` for increase, `1 − VS/k` for decrease.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalScore>,
    pub per_attribute: Vec<AttributeDiversity>,
    pub dm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prs: Option<f64>,
}

/// Vendi score of order `q`: the exponential of the order-`q` Rényi entropy
/// of the spectrum of `K / n`.
///
/// Eigenvalues below `n · ε · λ_max` are treated as zero. The sum is taken
/// relative to the support size `m`, `VS = m · (mean_k (m λ_k)^q)^{1/(1−q)}`,
/// which is algebraically the usual `(Σ λ^q)^{1/(1−q)}` and exact for flat spectra.
pub fn vendi_score(k_sub: &DMatrix<f64>, q: f64) -> Result<f64> {
    let (r, c) = k_sub.shape();
    if r != c || r == 0 {
        return Err(Error::validation(format!(
            "Vendi score needs a non-empty square matrix, got {r}x{c}"
        )));
    }
    if !(q > 0.0) || q == 1.0 || !q.is_finite() {
        return Err(Error::validation(format!("Vendi order q = {q} must be > 0 and != 1")));
    }
    let n = r as f64;
    let sym = SymMatrix::new(k_sub / n)?;
    let eig = sym_eig(&sym)?;
    let lmax = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if lmax <= 0.0 {
        return Err(Error::validation("similarity matrix has no positive eigenvalue"));
    }
    let cutoff = n * f64::EPSILON * lmax * 10.0;
    let support: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&l| l > cutoff).collect();
    let m = support.len() as f64;
    let mean = support.iter().map(|l| (m * l).powf(q)).sum::<f64>() / m;
    Ok(m * mean.powf(1.0 / (1.0 - q)))
}

/// `VS / k` (increase) or `1 − VS / k` (decrease).
pub fn normalized_diversity(vs: f64, k: usize, direction: Direction) -> f64 {
    let v = vs / k as f64;
    match direction {
        Direction::Increase => v,
        Direction::Decrease => 1.0 - v,
    }
}

/// `2xy / (x + y)`, zero when both vanish.
pub fn harmonic_mean(x: f64, y: f64) -> f64 {
    if x + y == 0.0 {
        0.0
    } else {
        2.0 * x * y / (x + y)
    }
}

/// Harmonic mean of several non-negative values; zero if any is zero.
pub fn harmonic_mean_all(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

/// Per-attribute Vendi scores of the top-`k` of `ranked` and their harmonic mean.
///
/// Uses the unrepaired inverse-distance similarity of each attribute.
pub fn diversity_metric(
    ranked: &RankedList,
    bundle: &SimilarityBundle,
    specs: &[AttributeSpec],
    k: usize,
) -> Result<(Vec<AttributeDiversity>, f64)> {
    if k == 0 || ranked.len() < k {
        return Err(Error::validation(format!(
            "ranked list of length {} is shorter than k = {k}",
            ranked.len()
        )));
    }
    let top = &ranked.indices[..k];
    let mut per = Vec::with_capacity(specs.len());
    for spec in specs {
        let attr = bundle
            .attribute(&spec.name)
            .ok_or_else(|| Error::validation(format!("bundle has no attribute '{}'", spec.name)))?;
        let sub = attr.raw.submatrix(top);
        let vs = vendi_score(sub.as_matrix(), VENDI_Q)?;
        per.push(AttributeDiversity {
            name: spec.name.clone(),
            vs,
            normalized: normalized_diversity(vs, k, spec.direction),
        });
    }
    let dm = harmonic_mean_all(&per.iter().map(|a| a.normalized).collect::<Vec<_>>());
    Ok((per, dm))
}

/// Average precision over the evaluated list, normalized by
/// `min(|relevant|, list length)`.
pub fn average_precision(ranking: &[String], relevant: &HashSet<String>) -> f64 {
    if relevant.is_empty() || ranking.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    sum / relevant.len().min(ranking.len()) as f64
}

/// Mean of [`average_precision`] over queries. Queries with an empty relevant
/// set are skipped with a warning.
pub fn mean_average_precision(rankings: &[Vec<String>], relevant: &[HashSet<String>]) -> Result<f64> {
    if rankings.len() != relevant.len() {
        return Err(Error::validation(format!(
            "{} rankings but {} relevance sets",
            rankings.len(),
            relevant.len()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for (q, (r, rel)) in rankings.iter().zip(relevant).enumerate() {
        if rel.is_empty() {
            log::warn!("query #{q} has no relevant items; excluded from MAP");
            continue;
        }
        total += average_precision(r, rel);
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

/// Semantic score of the top-`k` divided by the best achievable top-`k` score.
pub fn ncs_at_k(ranking: &[String], semantic_scores: &HashMap<String, f64>, k: usize) -> Result<f64> {
    if let Some((id, s)) = semantic_scores.iter().find(|(_, s)| !(**s >= 0.0) || !s.is_finite()) {
        return Err(Error::validation(format!("semantic score for '{id}' is {s}, expected >= 0")));
    }
    let got: f64 = ranking
        .iter()
        .take(k)
        .map(|id| semantic_scores.get(id).copied().unwrap_or(0.0))
        .sum();
    let mut all: Vec<f64> = semantic_scores.values().copied().collect();
    all.sort_by(|a, b| b.total_cmp(a));
    let best: f64 = all.iter().take(k).sum();
    Ok(if best > 0.0 { got / best } else { 0.0 })
}

fn check_sweep(div_values: &[f64], weights: &[f64]) -> Result<()> {
    if div_values.len() != weights.len() || div_values.len() < 2 {
        return Err(Error::validation(
            "PRS needs matching diversity and weight series of length >= 2",
        ));
    }
    if div_values.iter().chain(weights).any(|v| !v.is_finite()) {
        return Err(Error::validation("PRS inputs must be finite"));
    }
    if weights.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::validation("PRS weights must be non-decreasing"));
    }
    if !weights.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::validation("PRS weights need at least one strict increase"));
    }
    Ok(())
}

fn min_max(div_values: &[f64]) -> Option<Vec<f64>> {
    let lo = div_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = div_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi > lo).then(|| div_values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Preference reflection score: the sum over consecutive sweep points of
/// `(D̄_j − D̄_{j−1}) / (w_j − w_{j−1})`, with `D̄` min-max normalized.
/// Steps with equal weights contribute nothing; a constant series scores 0.
pub fn prs(div_values: &[f64], weights: &[f64]) -> Result<f64> {
    check_sweep(div_values, weights)?;
    let Some(norm) = min_max(div_values) else {
        return Ok(0.0);
    };
    // On a uniform grid the sum telescopes to (D̄_T − D̄_1) / Δw.
    let t = weights.len();
    let step = (weights[t - 1] - weights[0]) / (t - 1) as f64;
    let uniform = weights
        .windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step);
    if uniform {
        return Ok((norm[t - 1] - norm[0]) / step);
    }
    Ok(norm
        .windows(2)
        .zip(weights.windows(2))
        .filter(|(_, w)| w[1] > w[0])
        .map(|(d, w)| (d[1] - d[0]) / (w[1] - w[0]))
        .sum())
}

/// [`prs`] divided by the number of strictly increasing weight steps.
///
/// Not part of the reference definition; reported alongside it as a
/// mean-slope variant.
pub fn prs_mean_slope(div_values: &[f64], weights: &[f64]) -> Result<f64> {
    let total = prs(div_values, weights)?;
    let steps = weights.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(total / steps as f64)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either series is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman_rho needs equal-length series");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::AttributeKind;
    use crate::spd::SpdMatrix;

    fn set(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn list(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vendi_examples() {
        assert_eq!(vendi_score(&DMatrix::identity(20, 20), 0.1).unwrap(), 20.0);
        let ones = DMatrix::from_element(20, 20, 1.0);
        assert!((vendi_score(&ones, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let two = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let expected = (0.75f64.powf(0.1) + 0.25f64.powf(0.1)).powf(1.0 / 0.9);
        assert!((vendi_score(&two, 0.1).unwrap() - expected).abs() < 1e-12);
        assert!(vendi_score(&DMatrix::zeros(2, 3), 0.1).is_err());
        assert!(vendi_score(&two, 1.0).is_err());
    }

    #[test]
    fn dm_examples() {
        let b = SimilarityBundle::from_kernels(
            (0..20).map(|i| format!("c{i}")).collect(),
            vec![0.0; 20],
            vec![("t".into(), SpdMatrix::identity(20))],
        )
        .unwrap();
        let ranked = crate::engine::relevance_rerank(&b, 20).unwrap();
        let inc = [AttributeSpec::new("t", AttributeKind::Time, Direction::Increase, 1.0)];
        let (_, dm) = diversity_metric(&ranked, &b, &inc, 20).unwrap();
        assert_eq!(dm, 1.0);
        let dec = [AttributeSpec::new("t", AttributeKind::Time, Direction::Decrease, 1.0)];
        let (_, dm) = diversity_metric(&ranked, &b, &dec, 20).unwrap();
        assert_eq!(dm, 0.0);
        assert!(diversity_metric(&ranked, &b, &inc, 21).is_err());

        assert!((harmonic_mean_all(&[0.8, 0.4]) - 2.0 * 0.8 * 0.4 / 1.2).abs() < 1e-15);
    }

    #[test]
    fn map_examples() {
        assert_eq!(average_precision(&list(&["a", "b"]), &set(&["a"])), 1.0);
        assert_eq!(average_precision(&list(&["a", "b", "c"]), &set(&["a", "b"])), 1.0);
        let ap = average_precision(&list(&["a", "x", "b"]), &set(&["a", "b"]));
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);

        let map = mean_average_precision(
            &[list(&["a", "x", "b"]), list(&["q"]), list(&["z"])],
            &[set(&["a", "b"]), set(&[]), set(&["z"])],
        )
        .unwrap();
        assert!((map - ((1.0 + 2.0 / 3.0) / 2.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ncs_examples() {
        let scores: HashMap<String, f64> =
            [("a", 1.0), ("b", 0.5), ("c", 0.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(ncs_at_k(&list(&["a", "b"]), &scores, 2).unwrap(), 1.0);
        assert_eq!(ncs_at_k(&list(&["c"]), &scores, 1).unwrap(), 0.0);
        assert!((ncs_at_k(&list(&["a", "c"]), &scores, 2).unwrap() - 1.0 / 1.5).abs() < 1e-15);
        let zeros: HashMap<String, f64> = [("a".to_string(), 0.0)].into();
        assert_eq!(ncs_at_k(&list(&["a"]), &zeros, 1).unwrap(), 0.0);
        let neg: HashMap<String, f64> = [("a".to_string(), -1.0)].into();
        assert!(ncs_at_k(&list(&["a"]), &neg, 1).is_err());
    }

    #[test]
    fn hm_examples() {
        assert_eq!(harmonic_mean(1.0, 1.0), 1.0);
        assert_eq!(harmonic_mean(0.0, 0.7), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(0.8259, 0.8651) - 0.8450).abs() < 5e-5);
    }

    #[test]
    fn prs_examples() {
        let w: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mono: Vec<f64> = (0..=10).map(|i| (i as f64).powi(2)).collect();
        assert!((prs(&mono, &w).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(prs(&[0.3; 11], &w).unwrap(), 0.0);
        assert!((prs(&[0.0, 1.0, 0.5], &[0.0, 0.5, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        // Equal consecutive weights are skipped.
        assert!((prs(&[0.0, 0.2, 1.0], &[0.0, 0.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(prs(&[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(prs(&[0.0, 1.0], &[0.5, 0.5]).is_err());
        assert!((prs_mean_slope(&mono, &w).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman_rho(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }
}
