//! Distance-based classification and exact nearest-neighbor retrieval over
//! unit embeddings.

use crate::labels::LabelVector;
use crate::numerics::{gaussian_kernel, norm, sq_dist};
use crate::proxies::ProxyBank;
use crate::{Error, Result};

/// A database row: unit embedding plus the labels it was stored with.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub id: String,
    pub embedding: Vec<f64>,
    pub labels: LabelVector,
}

/// An in-memory retrieval database, scanned linearly and exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalIndex {
    rows: Vec<IndexRow>,
}

/// One retrieval result, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub id: String,
    /// Euclidean distance from the query embedding.
    pub distance: f64,
    pub labels: LabelVector,
}

impl RetrievalIndex {
    pub fn new(rows: Vec<IndexRow>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: IndexRow) {
        self.rows.push(row);
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::NonUnitInput { norm: n });
    }
    Ok(())
}

/// Per-class scores in [0, 1]: the best Gaussian similarity over each class's
/// proxies. A score near 1 means the embedding sits on top of some proxy of
/// that class.
pub fn classify(v_unit: &[f64], bank: &ProxyBank) -> Result<Vec<f64>> {
    check_unit(v_unit)?;
    if v_unit.len() != bank.d() {
        return Err(Error::DimensionMismatch {
            expected: bank.d(),
            got: v_unit.len(),
        });
    }
    let view = bank.normalized_view()?;
    let sigma = bank.sigma();
    let mut scores = Vec::with_capacity(bank.c_total());
    for j in 0..bank.c_total() {
        let mut best = f64::NEG_INFINITY;
        for i in 0..bank.m() {
            let d2 = sq_dist(v_unit, view.unit_row(i, j))?;
            let k = gaussian_kernel(d2, sigma)?;
            if k > best {
                best = k;
            }
        }
        scores.push(best);
    }
    Ok(scores)
}

/// Thresholds scores into hard predictions. Strictly above the threshold is
/// positive; equal is negative.
pub fn predict(scores: &[f64], thresholds: &[f64]) -> Result<Vec<bool>> {
    if scores.len() != thresholds.len() {
        return Err(Error::DimensionMismatch {
            expected: thresholds.len(),
            got: scores.len(),
        });
    }
    Ok(scores.iter().zip(thresholds).map(|(s, t)| s > t).collect())
}

/// The k nearest database rows by Euclidean distance, nearest first. Exact
/// ties order by ascending id so results never depend on insertion order.
/// Asks for more rows than exist? You get them all.
pub fn retrieve(v_unit: &[f64], index: &RetrievalIndex, k: usize) -> Result<Vec<RetrievalHit>> {
    check_unit(v_unit)?;
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut scored = Vec::with_capacity(index.len());
    for row in index.rows() {
        let d2 = sq_dist(v_unit, &row.embedding)?;
        scored.push((d2.sqrt(), row));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(distance, row)| RetrievalHit {
            id: row.id.clone(),
            distance,
            labels: row.labels.clone(),
        })
        .collect())
}

/// Picks one decision threshold per class by maximizing Youden's J
/// (sensitivity + specificity - 1) over the candidate thresholds midway
/// between consecutive distinct scores. Classes with only one observed truth
/// value fall back to 0.5. Ties prefer the smallest threshold.
pub fn calibrate_thresholds(scores: &[Vec<f64>], truths: &[Vec<bool>]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: scores.len(),
        });
    }
    let c = scores[0].len();
    for (s, t) in scores.iter().zip(truths) {
        if s.len() != c || t.len() != c {
            return Err(Error::ShapeMismatch(
                "ragged score or truth rows in threshold calibration".into(),
            ));
        }
    }

    let mut thresholds = Vec::with_capacity(c);
    for j in 0..c {
        let n_pos = truths.iter().filter(|t| t[j]).count();
        let n_neg = truths.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            thresholds.push(0.5);
            continue;
        }
        let mut column: Vec<(f64, bool)> = scores
            .iter()
            .zip(truths)
            .map(|(s, t)| (s[j], t[j]))
            .collect();
        column.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut candidates = vec![column[0].0 - 1.0];
        for w in column.windows(2) {
            if w[1].0 > w[0].0 {
                candidates.push(0.5 * (w[0].0 + w[1].0));
            }
        }
        let mut best_t = 0.5;
        let mut best_j = f64::NEG_INFINITY;
        for &t in &candidates {
            let tp = column.iter().filter(|(s, y)| *y && *s > t).count();
            let tn = column.iter().filter(|(s, y)| !*y && *s <= t).count();
            let youden = tp as f64 / n_pos as f64 + tn as f64 / n_neg as f64 - 1.0;
            if youden > best_j {
                best_j = youden;
                best_t = t;
            }
        }
        thresholds.push(best_t);
    }
    Ok(thresholds)
}
