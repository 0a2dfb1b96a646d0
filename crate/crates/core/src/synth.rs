//! Seeded synthetic galleries with clustered appearance, time and location.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::attributes::{ImageRecord, SimilarityBundle};
use crate::dataio::Query;
use crate::error::{Error, Result};
use crate::spd::{SpdMatrix, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub n_items: usize,
    pub n_clusters: usize,
    pub n_queries: usize,
    pub dim: usize,
    /// Spread of cluster centers.
    pub center_scale: f64,
    /// Per-item appearance noise.
    pub noise: f64,
    /// Standard deviation of capture time around the cluster's mean, in minutes.
    pub time_sigma_minutes: f64,
    /// Fraction of items whose time is uniform over the day.
    pub uniform_time_fraction: f64,
    /// Standard deviation of location around the cluster's site, in degrees.
    pub geo_sigma_deg: f64,
    /// Noise added to query relevance scores.
    pub relevance_noise: f64,
}

impl Default for SynthPlan {
    fn default() -> Self {
        SynthPlan {
            n_items: 600,
            n_clusters: 6,
            n_queries: 6,
            dim: 16,
            center_scale: 2.0,
            noise: 0.5,
            time_sigma_minutes: 90.0,
            uniform_time_fraction: 0.25,
            geo_sigma_deg: 5.0,
            relevance_noise: 0.05,
        }
    }
}

impl SynthPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_clusters == 0 || self.dim == 0 {
            return Err(Error::validation("n_items, n_clusters and dim must be positive"));
        }
        if self.n_clusters > self.n_items {
            return Err(Error::validation("more clusters than items"));
        }
        let nonneg = [
            self.center_scale,
            self.noise,
            self.time_sigma_minutes,
            self.geo_sigma_deg,
            self.relevance_noise,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::validation("synthetic spreads must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.uniform_time_fraction) {
            return Err(Error::validation("uniform_time_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub gallery: Vec<ImageRecord>,
    pub queries: Vec<Query>,
    /// Cluster of each gallery item, in gallery order.
    pub labels: Vec<usize>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Scales to unit length, like embeddings from contrastive retrieval models.
fn unit_length(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

/// Generates a gallery and queries. Appearance vectors are unit length.
/// Query `q` targets cluster `q mod n_clusters`;
/// its relevant ids are that cluster's members. The same seed and plan always
/// produce the same data.
pub fn gen_synthetic(seed: u64, plan: &SynthPlan) -> Result<SynthData> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = normal(1.0);
    let noise = normal(plan.noise);
    let time_noise = normal(plan.time_sigma_minutes);
    let geo_noise = normal(plan.geo_sigma_deg);

    let centers: Vec<Vec<f64>> = (0..plan.n_clusters)
        .map(|_| (0..plan.dim).map(|_| plan.center_scale * unit.sample(&mut rng)).collect())
        .collect();
    let mean_times: Vec<f64> = (0..plan.n_clusters).map(|_| rng.random_range(0.0..1440.0)).collect();
    let sites: Vec<(f64, f64)> = (0..plan.n_clusters)
        .map(|_| (rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0)))
        .collect();

    let width = plan.n_items.to_string().len();
    let mut gallery = Vec::with_capacity(plan.n_items);
    let mut labels = Vec::with_capacity(plan.n_items);
    for i in 0..plan.n_items {
        let c = i % plan.n_clusters;
        let appearance = unit_length(centers[c].iter().map(|m| m + noise.sample(&mut rng)).collect());
        let time = if rng.random_bool(plan.uniform_time_fraction) {
            rng.random_range(0.0..1440.0)
        } else {
            (mean_times[c] + time_noise.sample(&mut rng)).rem_euclid(1440.0)
        };
        // rem_euclid can round up to exactly 1440 for tiny negative inputs.
        let time = if time >= 1440.0 { 0.0 } else { time };
        let lat = (sites[c].0 + geo_noise.sample(&mut rng)).clamp(-89.0, 89.0);
        let lon = (sites[c].1 + geo_noise.sample(&mut rng)).clamp(-179.0, 179.0);
        gallery.push(ImageRecord {
            id: format!("img{i:0width$}"),
            appearance,
            time_minutes: Some(time),
            lat_deg: Some(lat),
            lon_deg: Some(lon),
            extra: BTreeMap::new(),
        });
        labels.push(c);
    }

    let rel_noise = normal(plan.relevance_noise);
    let mut queries = Vec::with_capacity(plan.n_queries);
    for q in 0..plan.n_queries {
        let c = q % plan.n_clusters;
        let target: Vec<f64> = centers[c].iter().map(|m| m + noise.sample(&mut rng)).collect();
        let mut relevance = BTreeMap::new();
        let mut semantic = BTreeMap::new();
        for rec in &gallery {
            let cos = cosine(&rec.appearance, &target);
            relevance.insert(rec.id.clone(), cos + rel_noise.sample(&mut rng));
            semantic.insert(rec.id.clone(), cos.max(0.0));
        }
        let relevant_ids = gallery
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r.id.clone())
            .collect();
        queries.push(Query {
            query_id: format!("q{q}"),
            text: Some(format!("cluster {c}")),
            relevance,
            relevant_ids: Some(relevant_ids),
            semantic_scores: Some(semantic),
        });
    }

    Ok(SynthData {
        gallery,
        queries,
        labels,
    })
}

/// Random SPD matrix `Q diag(λ) Qᵀ` with `Q` Haar-distributed and
/// log-uniform eigenvalues in `[min_eig, max_eig]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, min_eig: f64, max_eig: f64) -> SpdMatrix {
    assert!(dim > 0 && min_eig > 0.0 && max_eig >= min_eig);
    let unit = normal(1.0);
    let g = DMatrix::from_fn(dim, dim, |_, _| unit.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    // Sign-fix the columns so Q is uniformly distributed.
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let (lo, hi) = (min_eig.ln(), max_eig.ln());
    let eig: Vec<f64> = (0..dim)
        .map(|_| if hi > lo { rng.random_range(lo..hi).exp() } else { min_eig })
        .collect();
    let m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig)) * q.transpose();
    let sym = SymMatrix::new((&m + m.transpose()) * 0.5).expect("symmetric by construction");
    SpdMatrix::new(sym).expect("positive eigenvalues")
}

/// Random instance with `n` candidates named `c00, c01, ...`, relevance
/// uniform in `[0, 1)` and `n_attrs` random SPD kernels named `a0, a1, ...`.
pub fn random_bundle<R: Rng + ?Sized>(rng: &mut R, n: usize, n_attrs: usize) -> SimilarityBundle {
    let width = n.to_string().len().max(2);
    let ids = (0..n).map(|i| format!("c{i:0width$}")).collect();
    let relevance = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let kernels = (0..n_attrs)
        .map(|a| (format!("a{a}"), random_spd(rng, n, 0.05, 5.0)))
        .collect();
    SimilarityBundle::from_kernels(ids, relevance, kernels).expect("dimensions agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::kmeans;

    #[test]
    fn deterministic_for_seed() {
        let plan = SynthPlan {
            n_items: 60,
            ..SynthPlan::default()
        };
        let a = gen_synthetic(7, &plan).unwrap();
        let b = gen_synthetic(7, &plan).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(8, &plan).unwrap();
        assert_ne!(a.gallery, c.gallery);
    }

    #[test]
    fn kmeans_recovers_clusters() {
        let plan = SynthPlan {
            n_items: 200,
            n_clusters: 4,
            n_queries: 1,
            ..SynthPlan::default()
        };
        let data = gen_synthetic(11, &plan).unwrap();
        let points: Vec<Vec<f64>> = data.gallery.iter().map(|r| r.appearance.clone()).collect();
        let res = kmeans(&points, 4, 0).unwrap();
        let mut correct = 0;
        for cl in 0..4 {
            let mut counts = [0usize; 4];
            for (a, &t) in res.assignments.iter().zip(&data.labels) {
                if *a == cl {
                    counts[t] += 1;
                }
            }
            correct += counts.iter().max().unwrap();
        }
        let purity = correct as f64 / 200.0;
        assert!(purity >= 0.9, "purity {purity}");
    }

    #[test]
    fn fields_in_range() {
        let data = gen_synthetic(3, &SynthPlan::default()).unwrap();
        for r in &data.gallery {
            let t = r.time_minutes.unwrap();
            assert!((0.0..1440.0).contains(&t));
            assert!(r.lat_deg.unwrap().abs() <= 90.0);
        }
        assert_eq!(data.queries.len(), 6);
        assert_eq!(data.queries[0].relevance.len(), 600);
    }

    #[test]
    fn random_spd_spectrum_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spd(&mut rng, 8, 0.5, 2.0);
        let eig = crate::spd::sym_eig(s.as_sym()).unwrap().eigenvalues;
        assert!(eig.iter().all(|&l| (0.5 - 1e-9..=2.0 + 1e-9).contains(&l)), "{eig:?}");
    }
}
