//! Reference-embedding geometry and per-passage embedding scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::TranslatorId;

/// Mean drift below which the reference set is treated as a single point.
pub const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        if values.is_empty() || values.iter().all(|v| *v == 0.0) {
            return Err(MetricError::ZeroVector);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn scaled(&self, k: f64) -> Result<Self, MetricError> {
        EmbeddingVector::new(self.values.iter().map(|v| v * k).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = MetricError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)` as half the squared distance between the unit vectors,
/// which keeps small distances accurate.
fn cosine_distance_raw(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x / na - y / nb).powi(2)).sum();
    Ok((sq / 2.0).clamp(0.0, 2.0))
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MetricError> {
    cosine_raw(&a.values, &b.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct OutlierThreshold(f64);

impl OutlierThreshold {
    pub fn new(v: f64) -> Result<Self, MetricError> {
        if v > 1.0 && v.is_finite() {
            Ok(OutlierThreshold(v))
        } else {
            Err(MetricError::InvalidThreshold(v))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for OutlierThreshold {
    fn default() -> Self {
        OutlierThreshold(2.0)
    }
}

impl TryFrom<f64> for OutlierThreshold {
    type Error = MetricError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        OutlierThreshold::new(v)
    }
}

impl From<OutlierThreshold> for f64 {
    fn from(t: OutlierThreshold) -> f64 {
        t.0
    }
}

/// The references of one passage and their centroid.
///
/// The centroid is the arithmetic mean of the unit-normalized references, so
/// rescaling any single embedding leaves the geometry unchanged. For
/// providers that emit unit vectors this is the plain mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGeometry {
    translators: Vec<TranslatorId>,
    refs: Vec<EmbeddingVector>,
    centroid: Vec<f64>,
    drifts: Vec<f64>,
    mean_drift: f64,
}

impl ReferenceGeometry {
    pub fn translators(&self) -> &[TranslatorId] {
        &self.translators
    }

    pub fn reference(&self, t: &TranslatorId) -> Option<&EmbeddingVector> {
        self.translators.iter().position(|x| x == t).map(|i| &self.refs[i])
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    /// `1 - cos(ref, centroid)` per translator.
    pub fn drifts(&self) -> BTreeMap<TranslatorId, f64> {
        self.translators.iter().cloned().zip(self.drifts.iter().copied()).collect()
    }

    pub fn mean_drift(&self) -> f64 {
        self.mean_drift
    }

    pub fn is_degenerate(&self) -> bool {
        self.mean_drift < DEGENERATE_EPS
    }

    pub fn dim(&self) -> usize {
        self.centroid.len()
    }
}

pub fn reference_geometry(refs: &BTreeMap<TranslatorId, EmbeddingVector>) -> Result<ReferenceGeometry, MetricError> {
    if refs.len() < 2 {
        return Err(MetricError::TooFewReferences(refs.len()));
    }
    let dim = refs.values().next().unwrap().dim();
    let mut centroid = vec![0.0; dim];
    for v in refs.values() {
        if v.dim() != dim {
            return Err(MetricError::DimensionMismatch(dim, v.dim()));
        }
        let n = v.norm();
        for (c, x) in centroid.iter_mut().zip(v.values()) {
            *c += x / n;
        }
    }
    let k = refs.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= k);
    if norm(&centroid) < 1e-12 {
        return Err(MetricError::DegenerateCentroid);
    }
    let drifts: Vec<f64> = refs
        .values()
        .map(|v| cosine_distance_raw(v.values(), &centroid))
        .collect::<Result<_, _>>()?;
    let mean_drift = drifts.iter().sum::<f64>() / k;
    Ok(ReferenceGeometry {
        translators: refs.keys().cloned().collect(),
        refs: refs.values().cloned().collect(),
        centroid,
        drifts,
        mean_drift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingScores {
    pub sim_best: f64,
    pub sim_centroid: f64,
    /// `(1 - sim_centroid) / mean_drift`. For degenerate reference sets this
    /// is 0 when the hypothesis points along the shared direction and
    /// infinity otherwise, with `degenerate` set.
    pub normalized_drift: f64,
    pub outlier: bool,
    pub closest: TranslatorId,
    pub similarities: BTreeMap<TranslatorId, f64>,
    pub degenerate: bool,
}

pub fn passage_embedding_scores(
    mt: &EmbeddingVector,
    geo: &ReferenceGeometry,
    threshold: OutlierThreshold,
) -> Result<EmbeddingScores, MetricError> {
    let mut similarities = BTreeMap::new();
    let mut best: Option<(f64, &TranslatorId)> = None;
    // translators are sorted, so strict > keeps the alphabetically first on ties
    for (t, r) in geo.translators.iter().zip(&geo.refs) {
        let s = cosine(mt, r)?;
        similarities.insert(t.clone(), s);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, t));
        }
    }
    let (sim_best, closest) = best.expect("geometry has references");
    let sim_centroid = cosine_raw(mt.values(), &geo.centroid)?;
    let distance = cosine_distance_raw(mt.values(), &geo.centroid)?;
    let degenerate = geo.is_degenerate();
    let normalized_drift = if !degenerate {
        distance / geo.mean_drift
    } else if distance < DEGENERATE_EPS {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(EmbeddingScores {
        sim_best,
        sim_centroid,
        normalized_drift,
        outlier: normalized_drift > threshold.value(),
        closest: closest.clone(),
        similarities,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn refs(items: &[(&str, &[f64])]) -> BTreeMap<TranslatorId, EmbeddingVector> {
        items.iter().map(|(t, x)| (TranslatorId::new(*t), v(x))).collect()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[1.0, 2.0, 3.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert!((cosine(&a, &v(&[4.0, 5.0, 6.0])).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.97463).abs() < 1e-5);
        assert!(matches!(cosine(&a, &v(&[1.0])), Err(MetricError::DimensionMismatch(3, 1))));
        assert!(matches!(EmbeddingVector::new(vec![0.0, 0.0]), Err(MetricError::ZeroVector)));
        assert!(matches!(EmbeddingVector::new(vec![f64::NAN]), Err(MetricError::NonFinite)));
    }

    #[test]
    fn orthogonal_pair_geometry() {
        let geo = reference_geometry(&refs(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])])).unwrap();
        assert_eq!(geo.centroid(), &[0.5, 0.5]);
        let d = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        for drift in geo.drifts().values() {
            assert!((drift - d).abs() < 1e-12);
        }
        assert!((d - 0.29289).abs() < 1e-5);
        let s = passage_embedding_scores(&v(&[-1.0, 0.0]), &geo, OutlierThreshold::default()).unwrap();
        assert!((s.sim_centroid + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s.normalized_drift - 5.8284).abs() < 1e-4);
        assert!(s.outlier);
        // tie between a (-1) and b (0)? no: b is closer
        assert_eq!(s.closest.as_str(), "b");
    }

    #[test]
    fn identical_references_are_degenerate() {
        let geo = reference_geometry(&refs(&[("a", &[1.0, 1.0]), ("b", &[2.0, 2.0]), ("c", &[1.0, 1.0])])).unwrap();
        assert!(geo.is_degenerate());
        assert!(geo.drifts().values().all(|d| d.abs() < 1e-12));
        let along = passage_embedding_scores(&v(&[3.0, 3.0]), &geo, OutlierThreshold::default()).unwrap();
        assert_eq!((along.normalized_drift, along.outlier, along.degenerate), (0.0, false, true));
        let off = passage_embedding_scores(&v(&[1.0, 0.0]), &geo, OutlierThreshold::default()).unwrap();
        assert!(off.normalized_drift.is_infinite() && off.outlier);
        // equal similarities: alphabetical tie-break
        assert_eq!(along.closest.as_str(), "a");
    }

    #[test]
    fn centroid_direction_has_zero_drift() {
        let geo = reference_geometry(&refs(&[("a", &[1.0, 0.0, 0.0]), ("b", &[0.0, 1.0, 0.0]), ("c", &[0.0, 0.0, 1.0])])).unwrap();
        let s = passage_embedding_scores(&v(geo.centroid()), &geo, OutlierThreshold::default()).unwrap();
        assert!((s.sim_centroid - 1.0).abs() < 1e-12 && s.normalized_drift.abs() < 1e-9 && !s.outlier);
    }

    #[test]
    fn reference_as_hypothesis() {
        let geo = reference_geometry(&refs(&[("a", &[1.0, 0.2, 0.0]), ("b", &[0.1, 1.0, 0.3]), ("c", &[0.3, 0.1, 1.0])])).unwrap();
        let mut total = 0.0;
        for t in geo.translators().to_vec() {
            let s = passage_embedding_scores(geo.reference(&t).unwrap(), &geo, OutlierThreshold::default()).unwrap();
            assert_eq!(s.closest, t);
            total += s.normalized_drift;
        }
        assert!((total / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn few_references_and_thresholds() {
        assert!(matches!(reference_geometry(&refs(&[("a", &[1.0])])), Err(MetricError::TooFewReferences(1))));
        assert!(matches!(
            reference_geometry(&refs(&[("a", &[1.0, 0.0]), ("b", &[-1.0, 0.0])])),
            Err(MetricError::DegenerateCentroid)
        ));
        assert!(OutlierThreshold::new(1.0).is_err());
        assert_eq!(OutlierThreshold::default().value(), 2.0);
    }
}
