//! Reference diversifiers: MMR, greedy k-DPP and clustering-based re-ranking.
//!
//! Single-source variants take one attribute. Multi-source variants follow
//! the usual recipes: MMR and clustering run on concatenated features, each
//! block scaled by `s_i w_i`; k-DPP runs on the mean of `s_i w_i S_i`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attributes::{
    inverse_distance_similarity, relevance_alpha, AttributeSimilarity, AttributeSpec, Direction,
    SimilarityBundle,
};
use crate::engine::{check_k, compare_candidates, pick_best, RankedList, StepDiagnostic};
use crate::error::{Error, Result};
use crate::spd::{ensure_spd, SpdMatrix, SymMatrix, DEFAULT_SPD_FLOOR};

pub const CLUSTER_GRID: [usize; 3] = [40, 60, 80];
const KMEANS_MAX_ITER: usize = 50;
const KMEANS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Mmr,
    Kdpp,
    Clustering,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::Mmr => "mmr",
            BaselineMethod::Kdpp => "kdpp",
            BaselineMethod::Clustering => "clustering",
        })
    }
}

/// `Increase` when every attribute should become more diverse, `Mixed` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    Increase,
    Mixed,
}

impl DiversityMode {
    pub fn from_specs(specs: &[AttributeSpec]) -> Self {
        if specs.iter().all(|s| s.direction == Direction::Increase) {
            DiversityMode::Increase
        } else {
            DiversityMode::Mixed
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// MMR λ, or θ for k-DPP. Unused by clustering.
    pub lambda_or_theta: f64,
    pub num_clusters: usize,
    pub specs: Vec<AttributeSpec>,
    pub mode: DiversityMode,
    pub k: usize,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, lambda_or_theta: f64, specs: Vec<AttributeSpec>, k: usize) -> Self {
        BaselineConfig {
            method,
            lambda_or_theta,
            num_clusters: CLUSTER_GRID[0],
            mode: DiversityMode::from_specs(&specs),
            specs,
            k,
        }
    }

    pub fn with_clusters(mut self, n: usize) -> Self {
        self.num_clusters = n;
        self
    }
}

pub fn rerank(bundle: &SimilarityBundle, config: &BaselineConfig) -> Result<RankedList> {
    match config.method {
        BaselineMethod::Mmr => mmr_rerank(bundle, config),
        BaselineMethod::Kdpp => kdpp_rerank(bundle, config),
        BaselineMethod::Clustering => clustering_rerank(bundle, config),
    }
}

fn resolve<'a>(
    bundle: &'a SimilarityBundle,
    specs: &'a [AttributeSpec],
) -> Result<Vec<(&'a AttributeSimilarity, &'a AttributeSpec)>> {
    if specs.is_empty() {
        return Err(Error::validation("baseline needs at least one attribute"));
    }
    specs
        .iter()
        .map(|s| {
            bundle
                .attribute(&s.name)
                .map(|a| (a, s))
                .ok_or_else(|| Error::validation(format!("bundle has no attribute '{}'", s.name)))
        })
        .collect()
}

/// Concatenated features, each attribute block multiplied by `s_i w_i`.
fn concatenated_features(attrs: &[(&AttributeSimilarity, &AttributeSpec)], n: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); n];
    for (a, spec) in attrs {
        if a.features.len() != n {
            return Err(Error::validation(format!(
                "attribute '{}' carries no per-candidate features",
                a.name
            )));
        }
        let c = spec.signed_weight();
        for (row, f) in out.iter_mut().zip(&a.features) {
            row.extend(f.iter().map(|v| c * v));
        }
    }
    Ok(out)
}

/// Pairwise similarity used by MMR.
fn mmr_similarity(bundle: &SimilarityBundle, attrs: &[(&AttributeSimilarity, &AttributeSpec)]) -> Result<SymMatrix> {
    if let [(a, spec)] = attrs {
        return Ok(a.raw.scaled(spec.direction.sign()));
    }
    inverse_distance_similarity(&concatenated_features(attrs, bundle.len())?)
}

/// Maximal marginal relevance: `(1 − λ) r_j − λ max_{y∈Y} sim(j, y)`.
pub fn mmr_rerank(bundle: &SimilarityBundle, config: &BaselineConfig) -> Result<RankedList> {
    check_k(bundle, config.k)?;
    let lambda = config.lambda_or_theta;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::validation(format!("MMR lambda {lambda} outside [0, 1]")));
    }
    let attrs = resolve(bundle, &config.specs)?;
    let sim = mmr_similarity(bundle, &attrs)?;
    let n = bundle.len();

    let mut max_sim = vec![f64::NEG_INFINITY; n];
    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(config.k);
    let mut steps = Vec::with_capacity(config.k);
    let mut total = 0.0;
    for _ in 0..config.k {
        let scored = (0..n).filter(|&j| !taken[j]).map(|j| {
            let penalty = if indices.is_empty() { 0.0 } else { max_sim[j] };
            (j, (1.0 - lambda) * bundle.relevance[j] - lambda * penalty)
        });
        let (best, score) = pick_best(bundle, scored).expect("k <= n");
        taken[best] = true;
        indices.push(best);
        for (j, m) in max_sim.iter_mut().enumerate() {
            *m = m.max(sim.get(j, best));
        }
        total += score;
        steps.push(StepDiagnostic {
            id: bundle.candidate_ids[best].clone(),
            index: best,
            objective: total,
            gain: score,
            log_dets: Vec::new(),
            tn_scales: None,
        });
    }
    Ok(finish(bundle, indices, steps))
}

/// The k-DPP kernel: the attribute's kernel (negated and repaired for a
/// decrease direction), or the repaired mean of `s_i w_i S_i`.
pub fn kdpp_kernel(bundle: &SimilarityBundle, specs: &[AttributeSpec]) -> Result<SpdMatrix> {
    let attrs = resolve(bundle, specs)?;
    if let [(a, spec)] = attrs.as_slice() {
        if spec.direction == Direction::Increase {
            return Ok(a.kernel.clone());
        }
        return Ok(ensure_spd(&a.kernel.as_sym().scaled(-1.0), DEFAULT_SPD_FLOOR));
    }
    let n = bundle.len();
    let mut mean = SymMatrix::zeros(n);
    for (a, spec) in &attrs {
        mean.add_scaled(spec.signed_weight() / attrs.len() as f64, a.kernel.as_sym());
    }
    Ok(ensure_spd(&mean, DEFAULT_SPD_FLOOR))
}

/// Greedy MAP for `det(R_Y S_Y R_Y)`, `R = diag(e^{α r})`, using the
/// incremental Cholesky update: the log-det gain of candidate `j` is
/// `2α r_j + log d_j²`, where `d_j²` is its Schur complement against `Y`.
pub fn kdpp_rerank(bundle: &SimilarityBundle, config: &BaselineConfig) -> Result<RankedList> {
    check_k(bundle, config.k)?;
    let alpha = relevance_alpha(config.lambda_or_theta)?;
    let kernel = kdpp_kernel(bundle, &config.specs)?;
    let n = bundle.len();

    let mut chol_rows: Vec<Vec<f64>> = vec![Vec::with_capacity(config.k); n];
    let mut d2: Vec<f64> = (0..n).map(|j| kernel.get(j, j)).collect();
    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(config.k);
    let mut steps = Vec::with_capacity(config.k);
    let mut total = 0.0;

    for _ in 0..config.k {
        let scored = (0..n).filter(|&j| !taken[j]).map(|j| {
            let gain = if d2[j] > 0.0 {
                2.0 * alpha * bundle.relevance[j] + d2[j].ln()
            } else {
                f64::NEG_INFINITY
            };
            (j, gain)
        });
        let (best, gain) = pick_best(bundle, scored).expect("k <= n");
        if !gain.is_finite() {
            return Err(Error::domain(
                "k-DPP kernel became singular before k items were selected",
            ));
        }
        taken[best] = true;
        indices.push(best);
        total += gain;

        let pivot = d2[best].sqrt();
        let best_row = chol_rows[best].clone();
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let dot: f64 = chol_rows[j].iter().zip(&best_row).map(|(a, b)| a * b).sum();
            let e = (kernel.get(best, j) - dot) / pivot;
            chol_rows[j].push(e);
            d2[j] -= e * e;
        }
        steps.push(StepDiagnostic {
            id: bundle.candidate_ids[best].clone(),
            index: best,
            objective: total,
            gain,
            log_dets: Vec::new(),
            tn_scales: None,
        });
    }
    Ok(finish(bundle, indices, steps))
}

/// Lloyd's k-means with deterministic farthest-point seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeds from `first`, then repeatedly adds the point farthest from all
/// chosen centroids (lowest index on ties).
pub fn kmeans(points: &[Vec<f64>], k: usize, first: usize) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "number of clusters {k} must be in 1..={n}"
        )));
    }
    if first >= n {
        return Err(Error::validation("seed point out of range"));
    }
    let mut centroids = vec![points[first].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for j in 1..n {
            if nearest[j] > nearest[far] {
                far = j;
            }
        }
        centroids.push(points[far].clone());
        for (j, p) in points.iter().enumerate() {
            nearest[j] = nearest[j].min(sq_dist(p, &points[far]));
        }
    }

    let assign = |centroids: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, cen) in centroids.iter().enumerate() {
                    let d = sq_dist(p, cen);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect()
    };

    let dim = points[0].len();
    let mut assignments = assign(&centroids);
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            // An empty cluster keeps its previous centroid.
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved = moved.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        assignments = assign(&centroids);
        if moved < KMEANS_TOL {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
    })
}

/// Clusters candidates, ranks clusters by mean relevance, then either
/// round-robins over clusters (increase) or exhausts them in rank order (mixed).
pub fn clustering_rerank(bundle: &SimilarityBundle, config: &BaselineConfig) -> Result<RankedList> {
    check_k(bundle, config.k)?;
    let n = bundle.len();
    if config.num_clusters == 0 || config.num_clusters > n {
        return Err(Error::validation(format!(
            "num_clusters {} must be in 1..={n}",
            config.num_clusters
        )));
    }
    let attrs = resolve(bundle, &config.specs)?;
    let features = concatenated_features(&attrs, n)?;
    let top = pick_best(bundle, (0..n).map(|j| (j, 0.0))).expect("n > 0").0;
    let km = kmeans(&features, config.num_clusters, top)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); config.num_clusters];
    for (j, &c) in km.assignments.iter().enumerate() {
        members[c].push(j);
    }
    for m in &mut members {
        m.sort_by(|&a, &b| compare_candidates(bundle, (b, 0.0), (a, 0.0)));
    }
    let mut ranked: Vec<(usize, f64)> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, m)| (c, m.iter().map(|&j| bundle.relevance[j]).sum::<f64>() / m.len() as f64))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut indices = Vec::with_capacity(config.k);
    match config.mode {
        DiversityMode::Increase => {
            let mut cursor = vec![0usize; config.num_clusters];
            while indices.len() < config.k {
                for &(c, _) in &ranked {
                    if indices.len() == config.k {
                        break;
                    }
                    if let Some(&j) = members[c].get(cursor[c]) {
                        indices.push(j);
                        cursor[c] += 1;
                    }
                }
            }
        }
        DiversityMode::Mixed => {
            indices.extend(ranked.iter().flat_map(|&(c, _)| members[c].iter().copied()).take(config.k));
        }
    }

    let cluster_rank: Vec<usize> = {
        let mut r = vec![0; config.num_clusters];
        for (pos, &(c, _)) in ranked.iter().enumerate() {
            r[c] = pos;
        }
        r
    };
    let steps = indices
        .iter()
        .map(|&j| StepDiagnostic {
            id: bundle.candidate_ids[j].clone(),
            index: j,
            objective: cluster_rank[km.assignments[j]] as f64,
            gain: bundle.relevance[j],
            log_dets: Vec::new(),
            tn_scales: None,
        })
        .collect();
    Ok(finish(bundle, indices, steps))
}

fn finish(bundle: &SimilarityBundle, indices: Vec<usize>, steps: Vec<StepDiagnostic>) -> RankedList {
    RankedList {
        ids: indices.iter().map(|&j| bundle.candidate_ids[j].clone()).collect(),
        indices,
        steps,
    }
}

/// Cluster label of each candidate under the clustering baseline, exposed for
/// diagnostics and tests.
pub fn cluster_labels(bundle: &SimilarityBundle, config: &BaselineConfig) -> Result<Vec<usize>> {
    let attrs = resolve(bundle, &config.specs)?;
    let features = concatenated_features(&attrs, bundle.len())?;
    let top = pick_best(bundle, (0..bundle.len()).map(|j| (j, 0.0)))
        .ok_or_else(|| Error::validation("empty bundle"))?
        .0;
    Ok(kmeans(&features, config.num_clusters, top)?.assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::{AttributeKind, EmbeddingOptions, ImageRecord};
    use crate::attributes::build_bundle;
    use crate::engine::{greedy_rerank, relevance_rerank, RerankConfig, TnMode};
    use std::collections::{BTreeMap, HashMap};

    fn app_spec(dir: Direction) -> AttributeSpec {
        AttributeSpec::new("app", AttributeKind::Appearance, dir, 1.0)
    }

    fn bundle_from_points(points: &[Vec<f64>], relevance: &[f64]) -> SimilarityBundle {
        let gallery: Vec<ImageRecord> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ImageRecord {
                id: format!("i{i:03}"),
                appearance: p.clone(),
                time_minutes: None,
                lat_deg: None,
                lon_deg: None,
                extra: BTreeMap::new(),
            })
            .collect();
        let scores: HashMap<String, f64> = gallery
            .iter()
            .zip(relevance)
            .map(|(g, r)| (g.id.clone(), *r))
            .collect();
        build_bundle(&gallery, &scores, &[app_spec(Direction::Increase)], points.len(), &EmbeddingOptions::default()).unwrap()
    }

    #[test]
    fn mmr_first_pick_and_lambda_zero() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3, (i % 2) as f64]).collect();
        let rel = [0.2, 0.9, 0.4, 0.8, 0.1, 0.5];
        let b = bundle_from_points(&pts, &rel);
        let cfg = BaselineConfig::new(BaselineMethod::Mmr, 0.7, vec![app_spec(Direction::Increase)], 4);
        let r = mmr_rerank(&b, &cfg).unwrap();
        assert_eq!(r.ids[0], "i001");
        let cfg0 = BaselineConfig { lambda_or_theta: 0.0, ..cfg };
        assert_eq!(mmr_rerank(&b, &cfg0).unwrap().ids, relevance_rerank(&b, 4).unwrap().ids);
    }

    #[test]
    fn mmr_hand_example() {
        // sim(x,y)=0.9, sim(x,z)=0.2, sim(y,z)=0.3; r = (1.0, 0.9, 0.6).
        let s = SpdMatrix::new(
            SymMatrix::from_rows(&[vec![1.0, 0.9, 0.2], vec![0.9, 1.0, 0.3], vec![0.2, 0.3, 1.0]]).unwrap(),
        )
        .unwrap();
        let b = SimilarityBundle::from_kernels(
            vec!["x".into(), "y".into(), "z".into()],
            vec![1.0, 0.9, 0.6],
            vec![("app".into(), s)],
        )
        .unwrap();
        let cfg = BaselineConfig::new(BaselineMethod::Mmr, 0.5, vec![app_spec(Direction::Increase)], 2);
        let r = mmr_rerank(&b, &cfg).unwrap();
        // step 2: y -> 0.5*0.9 - 0.5*0.9 = 0.0 ; z -> 0.5*0.6 - 0.5*0.2 = 0.2
        assert_eq!(r.ids, vec!["x", "z"]);
        assert!((r.steps[0].gain - 0.5).abs() < 1e-15);
        assert!((r.steps[1].gain - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kdpp_identity_is_relevance_order() {
        let b = SimilarityBundle::from_kernels(
            (0..5).map(|i| format!("c{i}")).collect(),
            vec![0.3, 0.1, 0.9, 0.5, 0.7],
            vec![("app".into(), SpdMatrix::identity(5))],
        )
        .unwrap();
        let cfg = BaselineConfig::new(BaselineMethod::Kdpp, 0.8, vec![app_spec(Direction::Increase)], 5);
        assert_eq!(kdpp_rerank(&b, &cfg).unwrap().ids, vec!["c2", "c4", "c3", "c0", "c1"]);
    }

    #[test]
    fn kdpp_matches_single_attribute_msdpp() {
        let pts: Vec<Vec<f64>> = (0..15)
            .map(|i| vec![(i as f64 * 1.7).sin() * 2.0, (i as f64 * 0.9).cos()])
            .collect();
        let rel: Vec<f64> = (0..15).map(|i| ((i * 7 % 15) as f64) / 15.0).collect();
        let b = bundle_from_points(&pts, &rel);
        let cfg = BaselineConfig::new(BaselineMethod::Kdpp, 0.6, vec![app_spec(Direction::Increase)], 6);
        let rc = RerankConfig::new(0.6, 6, 15, TnMode::Off, vec![app_spec(Direction::Increase)]).unwrap();
        let a = kdpp_rerank(&b, &cfg).unwrap();
        let m = greedy_rerank(&b, &rc).unwrap();
        assert_eq!(a.ids, m.ids);
        for (x, y) in a.steps.iter().zip(&m.steps) {
            assert!((x.objective - y.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn kdpp_decrease_mode_runs() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let rel: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let b = bundle_from_points(&pts, &rel);
        let cfg = BaselineConfig::new(BaselineMethod::Kdpp, 0.5, vec![app_spec(Direction::Decrease)], 5);
        let r = kdpp_rerank(&b, &cfg).unwrap();
        assert_eq!(r.len(), 5);
        let mut ids = r.ids.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }

    fn two_blobs() -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut rel = Vec::new();
        for i in 0..8 {
            pts.push(vec![0.0 + 0.01 * i as f64, 0.0]);
            rel.push(0.9 - 0.01 * i as f64);
        }
        for i in 0..8 {
            pts.push(vec![50.0 + 0.01 * i as f64, 0.0]);
            rel.push(0.5 - 0.01 * i as f64);
        }
        (pts, rel)
    }

    #[test]
    fn clustering_single_cluster_is_relevance_order() {
        let (pts, rel) = two_blobs();
        let b = bundle_from_points(&pts, &rel);
        for dir in [Direction::Increase, Direction::Decrease] {
            let cfg = BaselineConfig::new(BaselineMethod::Clustering, 0.0, vec![app_spec(dir)], 6).with_clusters(1);
            assert_eq!(clustering_rerank(&b, &cfg).unwrap().ids, relevance_rerank(&b, 6).unwrap().ids);
        }
    }

    #[test]
    fn clustering_alternates_or_exhausts() {
        let (pts, rel) = two_blobs();
        let b = bundle_from_points(&pts, &rel);
        let blob = |id: &str| -> usize { (id[1..].parse::<usize>().unwrap() >= 8) as usize };

        let inc = BaselineConfig::new(BaselineMethod::Clustering, 0.0, vec![app_spec(Direction::Increase)], 6).with_clusters(2);
        let r = clustering_rerank(&b, &inc).unwrap();
        let labels: Vec<usize> = r.ids.iter().map(|i| blob(i)).collect();
        assert_eq!(labels, vec![0, 1, 0, 1, 0, 1]);

        let dec = BaselineConfig::new(BaselineMethod::Clustering, 0.0, vec![app_spec(Direction::Decrease)], 10).with_clusters(2);
        let r = clustering_rerank(&b, &dec).unwrap();
        let labels: Vec<usize> = r.ids.iter().map(|i| blob(i)).collect();
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn kmeans_is_reproducible() {
        let (pts, _) = two_blobs();
        let a = kmeans(&pts, 3, 0).unwrap();
        let b = kmeans(&pts, 3, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.iterations <= KMEANS_MAX_ITER);
        assert!(kmeans(&pts, 0, 0).is_err());
        assert!(kmeans(&pts, 17, 0).is_err());
    }
}
