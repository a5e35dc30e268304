//! Training losses with exact analytic gradients.
//!
//! The main loss treats each class as a Bernoulli event whose probability is
//! the mean Gaussian similarity between the embedding and the class's
//! proxies. Positive classes pay `-w_pos log g`, negative classes pay
//! `-w_neg log(1 - g)`, masked classes pay nothing and receive no gradient.
//! Two baselines share the module: a single-proxy NCA ratio loss and a
//! weighted BCE head on raw logits.
//!
//! Proxy gradients are returned with respect to the bank's raw parameters;
//! the normalization of proxy rows happens inside the loss and its Jacobian
//! is already applied. The embedding gradient is with respect to the unit
//! embedding passed in, since embedding normalization lives in the trainer.

use crate::labels::{AugmentedLabels, ClassWeights};
use crate::numerics::{log_mean_exp, norm, sq_dist_raw};
use crate::proxies::ProxyBank;
use crate::{Error, Result};

/// Class probabilities are clamped to `[CLAMP, 1 - CLAMP]` before the logs.
/// On the unit sphere with the default sigma only the upper bound can ever
/// bind; the lower bound guards configurations with very small sigma.
pub const PROB_CLAMP: f64 = 1e-7;

/// Maximum deviation from unit norm accepted for embeddings.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Value and gradients of a proxy-based loss at one sample.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient with respect to the unit embedding.
    pub grad_embedding: Vec<f64>,
    /// Gradient with respect to the bank's raw parameters, flat in bank
    /// layout. Rows of masked classes are exactly zero.
    pub grad_proxies: Vec<f64>,
}

/// Value and gradient of the logit-space baseline loss at one sample.
#[derive(Debug, Clone)]
pub struct LogitLossOutput {
    pub value: f64,
    pub grad_logits: Vec<f64>,
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitInput { norm: n });
    }
    Ok(())
}

fn check_dims(v_unit: &[f64], labels: &AugmentedLabels, bank: &ProxyBank) -> Result<()> {
    if v_unit.len() != bank.d() {
        return Err(Error::DimensionMismatch {
            expected: bank.d(),
            got: v_unit.len(),
        });
    }
    if labels.c_total() != bank.c_total() {
        return Err(Error::DimensionMismatch {
            expected: bank.c_total(),
            got: labels.c_total(),
        });
    }
    Ok(())
}

/// Weighted multi-label proxy loss over all unmasked classes.
///
/// For class `j`, `g_j` is the mean of `exp(-|v - p_ij|^2 / 2 sigma^2)` over
/// that class's normalized proxies, evaluated in the log domain. The loss is
/// the weighted binary cross-entropy of `g_j` against the class bit. Where
/// the clamp binds, both value and gradient saturate.
pub fn multilabel_proxy_loss(
    v_unit: &[f64],
    labels: &AugmentedLabels,
    weights: &ClassWeights,
    bank: &ProxyBank,
) -> Result<LossOutput> {
    check_unit(v_unit)?;
    check_dims(v_unit, labels, bank)?;
    if weights.c_total() != bank.c_total() {
        return Err(Error::DimensionMismatch {
            expected: bank.c_total(),
            got: weights.c_total(),
        });
    }

    let (m, c_total, d) = (bank.m(), bank.c_total(), bank.d());
    let view = bank.normalized_view()?;
    let sigma2 = bank.sigma() * bank.sigma();
    let inv_m = 1.0 / m as f64;

    let mut value = 0.0;
    let mut grad_v = vec![0.0; d];
    let mut grad_units = vec![0.0; bank.params().len()];
    let mut terms = vec![0.0; m];

    for j in 0..c_total {
        if labels.mask()[j] {
            continue;
        }
        for (i, term) in terms.iter_mut().enumerate() {
            *term = -sq_dist_raw(v_unit, view.unit_row(i, j)) / (2.0 * sigma2);
        }
        let log_g = log_mean_exp(&terms)?;
        let g = log_g.exp();

        // dl_dg stays zero where the clamp binds, matching the saturated value.
        let (term_value, dl_dg) = if labels.bits()[j] {
            let w = weights.pos[j];
            if g < PROB_CLAMP {
                (-w * PROB_CLAMP.ln(), 0.0)
            } else if g > 1.0 - PROB_CLAMP {
                (-w * (-PROB_CLAMP).ln_1p(), 0.0)
            } else {
                (-w * log_g, -w / g)
            }
        } else {
            let w = weights.neg[j];
            if g < PROB_CLAMP {
                (-w * (-PROB_CLAMP).ln_1p(), 0.0)
            } else if g > 1.0 - PROB_CLAMP {
                (-w * PROB_CLAMP.ln(), 0.0)
            } else {
                (-w * (-g).ln_1p(), w / (1.0 - g))
            }
        };
        value += term_value;

        if dl_dg != 0.0 {
            let scale = dl_dg * inv_m / sigma2;
            for (i, term) in terms.iter().enumerate() {
                let u = view.unit_row(i, j);
                let k = term.exp();
                let o = (i * c_total + j) * d;
                for t in 0..d {
                    let diff = v_unit[t] - u[t];
                    grad_v[t] -= scale * k * diff;
                    grad_units[o + t] += scale * k * diff;
                }
            }
        }
    }

    let grad_proxies = view.grad_to_raw(&grad_units)?;
    Ok(LossOutput {
        value,
        grad_embedding: grad_v,
        grad_proxies,
    })
}

fn log_sum_exp(terms: &[f64]) -> Result<f64> {
    Ok(log_mean_exp(terms)? + (terms.len() as f64).ln())
}

/// Single-proxy NCA ratio baseline.
///
/// With one proxy per class and similarities `a_j`, the loss is
/// `-log(sum over positive classes of a_j / sum over all classes of a_j)`.
/// The label mask is not consulted: uncertain classes simply contribute to
/// the denominator like any other non-positive class. A sample with no
/// positive bit has no numerator and is rejected.
pub fn ml_proxy_nca_loss(
    v_unit: &[f64],
    labels: &AugmentedLabels,
    bank: &ProxyBank,
) -> Result<LossOutput> {
    check_unit(v_unit)?;
    check_dims(v_unit, labels, bank)?;
    if bank.m() != 1 {
        return Err(Error::InvalidConfig(format!(
            "the NCA baseline uses one proxy per class, got m={}",
            bank.m()
        )));
    }
    if !labels.any_positive() {
        return Err(Error::NoPositiveLabel);
    }

    let (c_total, d) = (bank.c_total(), bank.d());
    let view = bank.normalized_view()?;
    let sigma2 = bank.sigma() * bank.sigma();

    let terms: Vec<f64> = (0..c_total)
        .map(|j| -sq_dist_raw(v_unit, view.unit_row(0, j)) / (2.0 * sigma2))
        .collect();
    let positive_terms: Vec<f64> = (0..c_total)
        .filter(|&j| labels.bits()[j])
        .map(|j| terms[j])
        .collect();
    let lse_all = log_sum_exp(&terms)?;
    let lse_pos = log_sum_exp(&positive_terms)?;
    let value = lse_all - lse_pos;

    let mut grad_v = vec![0.0; d];
    let mut grad_units = vec![0.0; bank.params().len()];
    for (j, &term) in terms.iter().enumerate() {
        let p = (term - lse_all).exp();
        let q = if labels.bits()[j] {
            (term - lse_pos).exp()
        } else {
            0.0
        };
        let coeff = (p - q) / sigma2;
        let u = view.unit_row(0, j);
        let o = j * d;
        for t in 0..d {
            let diff = v_unit[t] - u[t];
            grad_v[t] -= coeff * diff;
            grad_units[o + t] += coeff * diff;
        }
    }

    let grad_proxies = view.grad_to_raw(&grad_units)?;
    Ok(LossOutput {
        value,
        grad_embedding: grad_v,
        grad_proxies,
    })
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weighted binary cross-entropy on raw logits, the classification baseline.
/// Masked classes contribute neither value nor gradient.
pub fn weighted_bce_loss(
    logits: &[f64],
    labels: &AugmentedLabels,
    weights: &ClassWeights,
) -> Result<LogitLossOutput> {
    if logits.len() != labels.c_total() {
        return Err(Error::DimensionMismatch {
            expected: labels.c_total(),
            got: logits.len(),
        });
    }
    if weights.c_total() != labels.c_total() {
        return Err(Error::DimensionMismatch {
            expected: labels.c_total(),
            got: weights.c_total(),
        });
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for j in 0..logits.len() {
        if labels.mask()[j] {
            continue;
        }
        let z = logits[j];
        let s = sigmoid(z);
        if labels.bits()[j] {
            value += weights.pos[j] * softplus(-z);
            grad[j] = -weights.pos[j] * (1.0 - s);
        } else {
            value += weights.neg[j] * softplus(z);
            grad[j] = weights.neg[j] * s;
        }
    }
    Ok(LogitLossOutput {
        value,
        grad_logits: grad,
    })
}
