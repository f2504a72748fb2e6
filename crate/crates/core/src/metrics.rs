//! Evaluation: accuracy, normalized confusion matrices, per-distance
//! accuracy tables, and Frechet distance between Gaussian fits of deep
//! features, with a pluggable feature extractor.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::nn::{Images, Real};
use crate::types::{Domain, ImageChip, TensorBatch};

/// Row-indexed by true class; `normalized` rows sum to 1 except flagged
/// zero-support rows, which stay all-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
    pub zero_rows: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_pairs(truths: &[usize], preds: &[usize], num_classes: usize) -> Result<Self> {
        if truths.len() != preds.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} predictions", truths.len()),
                got: format!("{}", preds.len()),
            });
        }
        if truths.is_empty() {
            return Err(Error::DataEmpty {
                what: "confusion matrix of zero samples".into(),
            });
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truths.iter().zip(preds.iter()) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p),
                    num_classes,
                });
            }
            counts[t][p] += 1;
        }
        let mut normalized = vec![vec![0.0f64; num_classes]; num_classes];
        let mut zero_rows = Vec::new();
        for (r, row) in counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total == 0 {
                zero_rows.push(r);
                continue;
            }
            for (c, &v) in row.iter().enumerate() {
                normalized[r][c] = v as f64 / total as f64;
            }
        }
        Ok(ConfusionMatrix {
            counts,
            normalized,
            zero_rows,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts.iter().enumerate().map(|(i, r)| r[i]).sum()
    }

    /// Overall accuracy: trace over total.
    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Argmax predictions for chips at the given indices, eval mode, batched.
pub fn predict_labels<F: Real>(
    classifier: &mut Classifier<F>,
    chips: &[ImageChip],
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let refs: Vec<&ImageChip> = chunk.iter().map(|&i| &chips[i]).collect();
        let batch = TensorBatch::<F>::from_chips(&refs, false, refs[0].domain)?;
        let logits = classifier.predict(&batch.images)?;
        for row in logits.rows() {
            let mut best = 0;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            preds.push(best);
        }
    }
    Ok(preds)
}

/// Accuracy plus normalized confusion matrix on labeled chips.
pub fn evaluate_classifier<F: Real>(
    classifier: &mut Classifier<F>,
    chips: &[ImageChip],
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, ConfusionMatrix)> {
    if indices.is_empty() {
        return Err(Error::DataEmpty {
            what: "evaluation set".into(),
        });
    }
    let truths: Vec<usize> = indices
        .iter()
        .map(|&i| {
            chips[i].label.ok_or(Error::DataEmpty {
                what: "unlabeled chip in evaluation set".into(),
            })
        })
        .collect::<Result<_>>()?;
    let preds = predict_labels(classifier, chips, indices, batch_size)?;
    let cm = ConfusionMatrix::from_pairs(&truths, &preds, classifier.num_classes)?;
    Ok((cm.accuracy(), cm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub distance_m: f64,
    pub accuracy: f64,
    pub samples: usize,
}

/// Per-capture-distance accuracy, rows ordered by ascending distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAccuracyTable {
    pub rows: Vec<DistanceRow>,
}

impl DistanceAccuracyTable {
    pub fn total_samples(&self) -> usize {
        self.rows.iter().map(|r| r.samples).sum()
    }
}

pub fn accuracy_by_distance<F: Real>(
    classifier: &mut Classifier<F>,
    chips: &[ImageChip],
    indices: &[usize],
    batch_size: usize,
) -> Result<DistanceAccuracyTable> {
    if indices.is_empty() {
        return Err(Error::DataEmpty {
            what: "evaluation set".into(),
        });
    }
    for &i in indices {
        if chips[i].capture_distance_m.is_none() {
            return Err(Error::MissingDistance);
        }
    }
    let preds = predict_labels(classifier, chips, indices, batch_size)?;
    let mut groups: Vec<(f64, usize, usize)> = Vec::new(); // (distance, correct, total)
    for (&i, &p) in indices.iter().zip(preds.iter()) {
        let d = chips[i].capture_distance_m.unwrap();
        let label = chips[i].label.ok_or(Error::DataEmpty {
            what: "unlabeled chip in distance table".into(),
        })?;
        let slot = match groups.iter_mut().find(|(gd, _, _)| (*gd - d).abs() < 1e-9) {
            Some(s) => s,
            None => {
                groups.push((d, 0, 0));
                groups.last_mut().unwrap()
            }
        };
        if p == label {
            slot.1 += 1;
        }
        slot.2 += 1;
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(DistanceAccuracyTable {
        rows: groups
            .into_iter()
            .map(|(d, correct, total)| DistanceRow {
                distance_m: d,
                accuracy: correct as f64 / total as f64,
                samples: total,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Frechet distance between feature distributions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub value: f64,
    pub feature_dim: usize,
    pub samples_a: usize,
    pub samples_b: usize,
    /// Total magnitude of eigenvalues clamped to zero; nonzero values are
    /// logged so numerical trouble stays visible.
    pub clamped_mass: f64,
}

/// Column means and unbiased covariance of an (N, D) feature matrix.
pub fn gaussian_moments(features: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let (n, _d) = (features.shape()[0], features.shape()[1]);
    let mean: Vec<f64> = features
        .axis_iter(Axis(1))
        .map(|col| col.sum() / n as f64)
        .collect();
    let mut centered = features.clone();
    for mut row in centered.rows_mut() {
        for (v, m) in row.iter_mut().zip(mean.iter()) {
            *v -= m;
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t().dot(&centered) / denom;
    (mean, cov)
}

fn to_na(m: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(m.shape()[0], m.shape()[1], |i, j| m[[i, j]])
}

/// Symmetric PSD square root via eigendecomposition, clamping negative
/// eigenvalues. Returns the root and the clamped mass.
fn sym_sqrt(m: &nalgebra::DMatrix<f64>) -> (nalgebra::DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut clamped = 0.0;
    let roots: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < 0.0 {
                clamped += -l;
                0.0
            } else {
                l.sqrt()
            }
        })
        .collect();
    let d = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(roots));
    (&eig.eigenvectors * d * eig.eigenvectors.transpose(), clamped)
}

/// Frechet distance between Gaussian fits:
/// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)). The cross term is
/// computed as sqrt(sqrt(Sa) Sb sqrt(Sa)) so the eigendecomposition stays on
/// a symmetrized matrix; negative eigenvalues are clamped (tolerance -1e-6,
/// anything lower is logged).
pub fn frechet_from_moments(
    mean_a: &[f64],
    cov_a: &Array2<f64>,
    mean_b: &[f64],
    cov_b: &Array2<f64>,
) -> Result<(f64, f64)> {
    if mean_a.len() != mean_b.len() {
        return Err(Error::DimensionMismatch {
            a: mean_a.len(),
            b: mean_b.len(),
        });
    }
    let mean_sq: f64 = mean_a
        .iter()
        .zip(mean_b.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let ca = to_na(cov_a);
    let cb = to_na(cov_b);
    let (ra, clamp1) = sym_sqrt(&ca);
    let inner = &ra * &cb * &ra;
    let sym = (&inner + inner.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut clamped = clamp1;
    let mut trace_sqrt = 0.0;
    for &l in eig.eigenvalues.iter() {
        if l < 0.0 {
            clamped += -l;
            if l < -1e-6 {
                log::warn!("frechet cross-term eigenvalue {l} below clamp tolerance");
            }
        } else {
            trace_sqrt += l.sqrt();
        }
    }
    let value = mean_sq + ca.trace() + cb.trace() - 2.0 * trace_sqrt;
    // The analytic value is nonnegative; tiny negatives are fp residue.
    let value = if value < 0.0 {
        log::warn!("clamping negative frechet distance {value} to 0");
        0.0
    } else {
        value
    };
    Ok((value, clamped))
}

/// Frechet distance between two raw feature sets (rows = samples).
pub fn fid(features_a: &Array2<f64>, features_b: &Array2<f64>) -> Result<FidResult> {
    let (na, da) = (features_a.shape()[0], features_a.shape()[1]);
    let (nb, db) = (features_b.shape()[0], features_b.shape()[1]);
    if da != db {
        return Err(Error::DimensionMismatch { a: da, b: db });
    }
    if na == 0 || nb == 0 {
        return Err(Error::DataEmpty {
            what: "feature set for frechet distance".into(),
        });
    }
    for (name, f) in [("features_a", features_a), ("features_b", features_b)] {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { what: name.into() });
        }
    }
    if na < da + 1 || nb < da + 1 {
        log::warn!(
            "frechet distance with fewer samples ({na}, {nb}) than dim+1 ({})",
            da + 1
        );
    }
    let (ma, ca) = gaussian_moments(features_a);
    let (mb, cb) = gaussian_moments(features_b);
    let (value, clamped_mass) = frechet_from_moments(&ma, &ca, &mb, &cb)?;
    Ok(FidResult {
        value,
        feature_dim: da,
        samples_a: na,
        samples_b: nb,
        clamped_mass,
    })
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Something that maps images to one feature row per image.
pub trait FeatureExtractor<F: Real> {
    fn extract(&mut self, images: &Images<F>) -> Result<Array2<f64>>;
    fn feature_dim(&self) -> usize;
}

/// Penultimate (pooled) activations of a classifier; the desk-scale default.
pub struct PenultimateFeatures<'a, F: Real>(pub &'a mut Classifier<F>);

impl<F: Real> FeatureExtractor<F> for PenultimateFeatures<'_, F> {
    fn extract(&mut self, images: &Images<F>) -> Result<Array2<f64>> {
        let feats = self.0.penultimate(images)?;
        Ok(feats.mapv(|v| v.to_f64c()))
    }

    fn feature_dim(&self) -> usize {
        self.0.feat_dim
    }
}

/// Registered extractor names. `classifier-penultimate` is built in; an
/// external inception-style network can be plugged through the
/// `FeatureExtractor` trait but ships with no weights here.
pub fn lookup_extractor(name: &str) -> Result<&'static str> {
    match name {
        "classifier-penultimate" => Ok("classifier-penultimate"),
        _ => Err(Error::UnknownExtractor { name: name.into() }),
    }
}

/// Row-per-image features for chips at `indices`, batched, eval mode.
pub fn extract_features<F: Real>(
    extractor: &mut dyn FeatureExtractor<F>,
    chips: &[ImageChip],
    indices: &[usize],
    batch_size: usize,
) -> Result<Array2<f64>> {
    if indices.is_empty() {
        return Err(Error::DataEmpty {
            what: "feature extraction set".into(),
        });
    }
    let mut out = Array2::<f64>::zeros((indices.len(), extractor.feature_dim()));
    let mut row = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let refs: Vec<&ImageChip> = chunk.iter().map(|&i| &chips[i]).collect();
        let batch = TensorBatch::<F>::from_chips(&refs, false, Domain::Source)?;
        let feats = extractor.extract(&batch.images)?;
        for r in feats.rows() {
            out.row_mut(row).assign(&r);
            row += 1;
        }
    }
    Ok(out)
}
