//! Attribute embeddings, inverse-distance similarity, and per-query bundles.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::spd::{ensure_spd, SpdMatrix, SymMatrix, DEFAULT_SPD_FLOOR};

const MINUTES_PER_DAY: f64 = 1440.0;

/// One gallery item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// Appearance feature (already averaged upstream when the model emits several).
    pub appearance: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Appearance,
    Time,
    Geo,
    /// Reads the record's `extra[name]` vector.
    Generic,
}

/// Whether the diversity of an attribute should go up (+1) or down (-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Increase => Direction::Decrease,
            Direction::Decrease => Direction::Increase,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Increase => "+1",
            Direction::Decrease => "-1",
        })
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.sign() as i8)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Int(1) => Some(Direction::Increase),
            Raw::Int(-1) => Some(Direction::Decrease),
            Raw::Float(v) if v == 1.0 => Some(Direction::Increase),
            Raw::Float(v) if v == -1.0 => Some(Direction::Decrease),
            Raw::Text(t) => match t.as_str() {
                "increase" | "+1" | "1" => Some(Direction::Increase),
                "decrease" | "-1" => Some(Direction::Decrease),
                _ => None,
            },
            _ => None,
        };
        parsed.ok_or_else(|| {
            serde::de::Error::custom("direction must be +1, -1, \"increase\" or \"decrease\"")
        })
    }
}

/// An attribute's role in a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    pub direction: Direction,
    pub weight: f64,
}

impl AttributeSpec {
    pub fn new(name: &str, kind: AttributeKind, direction: Direction, weight: f64) -> Self {
        AttributeSpec {
            name: name.to_string(),
            kind,
            direction,
            weight,
        }
    }

    /// `s_i * w_i`.
    pub fn signed_weight(&self) -> f64 {
        self.direction.sign() * self.weight
    }
}

/// Rescales weights to sum to one. Rejects negative, non-finite or all-zero weights.
pub fn normalize_weights(specs: &[AttributeSpec]) -> Result<Vec<AttributeSpec>> {
    if specs.is_empty() {
        return Err(Error::validation("at least one attribute is required"));
    }
    if let Some(s) = specs.iter().find(|s| !(s.weight >= 0.0) || !s.weight.is_finite()) {
        return Err(Error::validation(format!(
            "attribute '{}' has invalid weight {}",
            s.name, s.weight
        )));
    }
    let total: f64 = specs.iter().map(|s| s.weight).sum();
    if total <= 0.0 {
        return Err(Error::validation("attribute weights sum to zero"));
    }
    Ok(specs
        .iter()
        .map(|s| AttributeSpec {
            weight: s.weight / total,
            ..s.clone()
        })
        .collect())
}

/// Options that control how raw attribute values become embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingOptions {
    /// Map the day onto a full circle (`z = 2π t / 1440`) instead of the
    /// half-circle default (`z = π t / 1440`).
    pub time_full_circle: bool,
    /// Relative eigenvalue floor for SPD repair.
    pub spd_floor: f64,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        EmbeddingOptions {
            time_full_circle: false,
            spd_floor: DEFAULT_SPD_FLOOR,
        }
    }
}

/// Embeds a time of day (minutes since midnight) as `(cos z, sin z)`, `z = π t / 1440`.
pub fn embed_time(time_minutes: f64, full_circle: bool) -> Result<[f64; 2]> {
    if !(0.0..MINUTES_PER_DAY).contains(&time_minutes) {
        return Err(Error::validation(format!(
            "time_minutes {time_minutes} outside [0, 1440)"
        )));
    }
    let turn = if full_circle { 2.0 * PI } else { PI };
    let z = time_minutes / MINUTES_PER_DAY * turn;
    Ok([z.cos(), z.sin()])
}

/// Embeds a location given in degrees onto the unit sphere.
pub fn embed_geo(lat_deg: f64, lon_deg: f64) -> Result<[f64; 3]> {
    if !(-90.0..=90.0).contains(&lat_deg) {
        return Err(Error::validation(format!("latitude {lat_deg} outside [-90, 90]")));
    }
    if !(lon_deg > -180.0 && lon_deg <= 180.0) {
        return Err(Error::validation(format!("longitude {lon_deg} outside (-180, 180]")));
    }
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    Ok([lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()])
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `1 / (‖e_i − e_j‖₂ + 1)` for every pair; unit diagonal, no repair.
pub fn inverse_distance_similarity(embeddings: &[Vec<f64>]) -> Result<SymMatrix> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::validation("similarity needs at least one embedding"));
    }
    let d = embeddings[0].len();
    if let Some((i, e)) = embeddings.iter().enumerate().find(|(_, e)| e.len() != d) {
        return Err(Error::validation(format!(
            "embedding {i} has dimension {}, expected {d}",
            e.len()
        )));
    }
    if embeddings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("embedding contains non-finite values"));
    }
    let mut m = nalgebra::DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 1.0 / (euclidean(&embeddings[i], &embeddings[j]) + 1.0);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    SymMatrix::new(m)
}

/// Repaired similarity kernel: inverse-distance similarity passed through
/// [`ensure_spd`] and rescaled back to a unit diagonal.
pub fn similarity_matrix(embeddings: &[Vec<f64>], floor: f64) -> Result<SpdMatrix> {
    let raw = inverse_distance_similarity(embeddings)?;
    Ok(repair_unit_diagonal(&raw, floor))
}

/// SPD repair that keeps self-similarity at exactly 1.
///
/// A diagonal congruence `D^{-1/2} M D^{-1/2}` preserves positive definiteness.
pub fn repair_unit_diagonal(raw: &SymMatrix, floor: f64) -> SpdMatrix {
    let fixed = ensure_spd(raw, floor);
    if fixed.as_sym() == raw {
        return fixed;
    }
    let m = fixed.as_sym().as_matrix();
    let n = m.nrows();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / m[(i, i)].sqrt()).collect();
    let scaled = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] * inv_sqrt[i] * inv_sqrt[j]
        }
    });
    let sym = SymMatrix::symmetrized(scaled);
    SpdMatrix::new(sym.clone()).unwrap_or_else(|_| ensure_spd(&sym, floor))
}

/// `α = θ / (2(1 − θ))`.
pub fn relevance_alpha(theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::validation(format!("theta {theta} outside (0, 1)")));
    }
    Ok(theta / (2.0 * (1.0 - theta)))
}

/// Feature vector of `record` for an attribute, or `None` when absent.
pub fn attribute_features(
    record: &ImageRecord,
    spec: &AttributeSpec,
    opts: &EmbeddingOptions,
) -> Result<Option<Vec<f64>>> {
    Ok(match spec.kind {
        AttributeKind::Appearance => Some(record.appearance.clone()),
        AttributeKind::Time => match record.time_minutes {
            Some(t) => Some(embed_time(t, opts.time_full_circle)?.to_vec()),
            None => None,
        },
        AttributeKind::Geo => match (record.lat_deg, record.lon_deg) {
            (Some(lat), Some(lon)) => Some(embed_geo(lat, lon)?.to_vec()),
            _ => None,
        },
        AttributeKind::Generic => record.extra.get(&spec.name).cloned(),
    })
}

/// Similarity data for one attribute over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSimilarity {
    pub name: String,
    pub kind: AttributeKind,
    /// Embedded features, one per candidate.
    pub features: Vec<Vec<f64>>,
    /// Inverse-distance similarity with unit diagonal, before repair.
    pub raw: SymMatrix,
    /// SPD kernel used for inference.
    pub kernel: SpdMatrix,
}

/// Everything the engine needs for one query: the prefiltered candidates,
/// one similarity kernel per attribute, and raw relevance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    pub candidate_ids: Vec<String>,
    pub attributes: Vec<AttributeSimilarity>,
    /// Raw relevance score per candidate, aligned with `candidate_ids`.
    pub relevance: Vec<f64>,
}

impl SimilarityBundle {
    pub fn len(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidate_ids.is_empty()
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSimilarity> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Builds a bundle directly from kernels, e.g. for synthetic instances.
    /// Kernels double as the raw similarity.
    pub fn from_kernels(
        candidate_ids: Vec<String>,
        relevance: Vec<f64>,
        kernels: Vec<(String, SpdMatrix)>,
    ) -> Result<Self> {
        let n = candidate_ids.len();
        if relevance.len() != n {
            return Err(Error::validation("relevance length differs from candidate count"));
        }
        if let Some((name, _)) = kernels.iter().find(|(_, k)| k.dim() != n) {
            return Err(Error::validation(format!(
                "kernel '{name}' does not match candidate count {n}"
            )));
        }
        let attributes = kernels
            .into_iter()
            .map(|(name, kernel)| AttributeSimilarity {
                name,
                kind: AttributeKind::Generic,
                features: Vec::new(),
                raw: kernel.as_sym().clone(),
                kernel,
            })
            .collect();
        Ok(SimilarityBundle {
            candidate_ids,
            attributes,
            relevance,
        })
    }
}

/// Selects the `top_n` candidates by relevance (ties by ascending id) and
/// builds one similarity kernel per attribute spec.
pub fn build_bundle(
    gallery: &[ImageRecord],
    scores: &HashMap<String, f64>,
    specs: &[AttributeSpec],
    top_n: usize,
    opts: &EmbeddingOptions,
) -> Result<SimilarityBundle> {
    if top_n == 0 {
        return Err(Error::validation("top_n must be positive"));
    }
    if specs.is_empty() {
        return Err(Error::validation("at least one attribute spec is required"));
    }
    let mut scored = Vec::with_capacity(gallery.len());
    for rec in gallery {
        let score = *scores.get(&rec.id).ok_or_else(|| {
            Error::validation(format!("no relevance score for gallery item '{}'", rec.id))
        })?;
        if !score.is_finite() {
            return Err(Error::validation(format!(
                "relevance score for '{}' is not finite",
                rec.id
            )));
        }
        scored.push((rec, score));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
    scored.truncate(top_n);

    let mut attributes = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut features = Vec::with_capacity(scored.len());
        for (rec, _) in &scored {
            let f = attribute_features(rec, spec, opts)?.ok_or_else(|| {
                Error::validation(format!(
                    "candidate '{}' has no value for attribute '{}'",
                    rec.id, spec.name
                ))
            })?;
            features.push(f);
        }
        let raw = inverse_distance_similarity(&features)?;
        let kernel = repair_unit_diagonal(&raw, opts.spd_floor);
        attributes.push(AttributeSimilarity {
            name: spec.name.clone(),
            kind: spec.kind,
            features,
            raw,
            kernel,
        });
    }

    Ok(SimilarityBundle {
        candidate_ids: scored.iter().map(|(r, _)| r.id.clone()).collect(),
        relevance: scored.iter().map(|(_, s)| *s).collect(),
        attributes,
    })
}
