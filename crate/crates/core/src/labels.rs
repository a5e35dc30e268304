//! Tri-state labels and their training-time form.
//!
//! Each sample carries one of three states per class: positive, negative, or
//! uncertain. Training works on an augmented binary view: positives become 1,
//! negatives 0, and uncertain entries become 0 but are masked out of the loss
//! entirely. When the negative class is enabled, an extra slot is appended
//! that is set only for samples with no positive and no uncertain entry, so
//! that "certainly nothing" gets its own anchor while "maybe something" does
//! not.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One class annotation on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelState {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
    #[serde(rename = "unc")]
    Uncertain,
}

/// Per-sample label states over the disease classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector(pub Vec<LabelState>);

impl LabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn states(&self) -> &[LabelState] {
        &self.0
    }

    /// Classes treated as present for retrieval purposes: positive entries
    /// plus uncertain ones, which may turn out positive.
    pub fn effective_bits(&self) -> Vec<bool> {
        self.0
            .iter()
            .map(|s| matches!(s, LabelState::Positive | LabelState::Uncertain))
            .collect()
    }

    /// True when no entry is positive or uncertain.
    pub fn is_all_negative(&self) -> bool {
        self.0.iter().all(|s| matches!(s, LabelState::Negative))
    }
}

/// Binary training view of a label vector, with the per-class exclusion mask
/// produced alongside it. When the negative class is enabled the vectors are
/// one slot longer than the disease-class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedLabels {
    bits: Vec<bool>,
    mask: Vec<bool>,
}

impl AugmentedLabels {
    pub fn c_total(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// True entries are excluded from every loss term.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn any_positive(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }
}

/// Builds the binary training view of `y`.
///
/// Positive maps to 1, negative to 0, uncertain to 0 with its class masked.
/// With `use_negative_class` an extra unmasked slot is appended that is 1
/// only when the sample has no positive and no uncertain entry.
pub fn augment(y: &LabelVector, use_negative_class: bool) -> AugmentedLabels {
    let c = y.len();
    let mut bits = Vec::with_capacity(c + 1);
    let mut mask = Vec::with_capacity(c + 1);
    for state in y.states() {
        bits.push(*state == LabelState::Positive);
        mask.push(*state == LabelState::Uncertain);
    }
    if use_negative_class {
        let certainly_nothing = y.states().iter().all(|s| *s == LabelState::Negative);
        bits.push(certainly_nothing);
        mask.push(false);
    }
    AugmentedLabels { bits, mask }
}

/// Per-class positive and negative term weights.
///
/// The positive weight of a class is the fraction of its unmasked samples
/// that are negative, and vice versa, so rare classes get their positive
/// terms upweighted. The two weights of a class sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

impl ClassWeights {
    pub fn c_total(&self) -> usize {
        self.pos.len()
    }
}

/// Counts positives and negatives per class over the unmasked entries of
/// `labels` and turns the counts into weights.
pub fn compute_class_weights(labels: &[AugmentedLabels]) -> Result<ClassWeights> {
    let first = labels.first().ok_or(Error::EmptyDataset)?;
    let c_total = first.c_total();
    let mut n_pos = vec![0u64; c_total];
    let mut n_neg = vec![0u64; c_total];
    for l in labels {
        if l.c_total() != c_total {
            return Err(Error::DimensionMismatch {
                expected: c_total,
                got: l.c_total(),
            });
        }
        for j in 0..c_total {
            if l.mask[j] {
                continue;
            }
            if l.bits[j] {
                n_pos[j] += 1;
            } else {
                n_neg[j] += 1;
            }
        }
    }
    let mut pos = Vec::with_capacity(c_total);
    let mut neg = Vec::with_capacity(c_total);
    for j in 0..c_total {
        let total = n_pos[j] + n_neg[j];
        if total == 0 {
            return Err(Error::EmptyClass { class: j });
        }
        pos.push(n_neg[j] as f64 / total as f64);
        neg.push(n_pos[j] as f64 / total as f64);
    }
    Ok(ClassWeights { pos, neg })
}
