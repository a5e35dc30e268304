//! The proxy bank: `m` learnable vectors per class, stored raw and consumed
//! through a normalized view.
//!
//! Raw parameters live off the unit sphere; every loss evaluation normalizes
//! them first. The view keeps the norms it divided by so gradients taken with
//! respect to the unit rows can be mapped back to raw parameters through the
//! normalization Jacobian: for a raw row `p` with unit direction `u`, a unit
//! gradient `g` becomes `(g - (g . u) u) / |p|`, the tangent-space projection
//! scaled by the inverse norm.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{l2_normalize, NORM_EPSILON};
use crate::{Error, Result};

/// Learnable proxy parameters: `m * c_total` rows of dimension `d`, stored
/// flat with row `(i, j)` at offset `(i * c_total + j) * d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyBank {
    m: usize,
    c_total: usize,
    d: usize,
    sigma: f64,
    params: Vec<f64>,
}

impl ProxyBank {
    /// Draws every row from an isotropic normal distribution and normalizes
    /// it, giving uniformly distributed directions. Deterministic per seed.
    pub fn new_random(m: usize, c_total: usize, d: usize, sigma: f64, seed: u64) -> Result<Self> {
        if m == 0 || c_total == 0 || d == 0 {
            return Err(Error::InvalidConfig(format!(
                "proxy bank needs m, c_total, d >= 1, got m={m}, c_total={c_total}, d={d}"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidSigma { sigma });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(m * c_total * d);
        for _ in 0..m * c_total {
            loop {
                let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                if let Ok((unit, _)) = l2_normalize(&row) {
                    params.extend_from_slice(&unit);
                    break;
                }
            }
        }
        Ok(Self {
            m,
            c_total,
            d,
            sigma,
            params,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn c_total(&self) -> usize {
        self.c_total
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_rows(&self) -> usize {
        self.m * self.c_total
    }

    #[inline]
    pub fn row_offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.m && j < self.c_total);
        (i * self.c_total + j) * self.d
    }

    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let o = self.row_offset(i, j);
        &self.params[o..o + self.d]
    }

    /// The raw rows of one class, in proxy order.
    pub fn proxies_of_class(&self, j: usize) -> Result<Vec<&[f64]>> {
        if j >= self.c_total {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.c_total,
            });
        }
        Ok((0..self.m).map(|i| self.row(i, j)).collect())
    }

    /// Normalizes every row, keeping the norms for gradient mapping.
    pub fn normalized_view(&self) -> Result<NormalizedProxies> {
        let rows = self.n_rows();
        let mut units = Vec::with_capacity(self.params.len());
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.params[r * self.d..(r + 1) * self.d];
            let (unit, n) = l2_normalize(row)?;
            units.extend_from_slice(&unit);
            norms.push(n);
        }
        Ok(NormalizedProxies {
            m: self.m,
            c_total: self.c_total,
            d: self.d,
            units,
            norms,
        })
    }

    /// Structural consistency check, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.c_total == 0 || self.d == 0 {
            return Err(Error::ShapeMismatch(
                "proxy bank dimensions must be positive".into(),
            ));
        }
        if self.params.len() != self.m * self.c_total * self.d {
            return Err(Error::ShapeMismatch(format!(
                "proxy bank has {} parameters, expected {}",
                self.params.len(),
                self.m * self.c_total * self.d
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidSigma { sigma: self.sigma });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ShapeMismatch(
                "proxy bank contains non-finite parameters".into(),
            ));
        }
        for r in 0..self.n_rows() {
            let row = &self.params[r * self.d..(r + 1) * self.d];
            if crate::numerics::norm(row) < NORM_EPSILON {
                return Err(Error::ShapeMismatch(format!(
                    "proxy row {r} has near-zero norm"
                )));
            }
        }
        Ok(())
    }
}

/// Unit-normalized snapshot of a bank, with enough context to push gradients
/// back onto the raw parameters.
#[derive(Debug, Clone)]
pub struct NormalizedProxies {
    m: usize,
    c_total: usize,
    d: usize,
    units: Vec<f64>,
    norms: Vec<f64>,
}

impl NormalizedProxies {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn c_total(&self) -> usize {
        self.c_total
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn unit_row(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.c_total + j) * self.d;
        &self.units[o..o + self.d]
    }

    /// Maps a gradient taken with respect to the unit rows (flat, same layout
    /// as the bank parameters) back to a gradient on the raw parameters.
    pub fn grad_to_raw(&self, grad_units: &[f64]) -> Result<Vec<f64>> {
        if grad_units.len() != self.units.len() {
            return Err(Error::DimensionMismatch {
                expected: self.units.len(),
                got: grad_units.len(),
            });
        }
        let mut raw = vec![0.0; grad_units.len()];
        for r in 0..self.norms.len() {
            let o = r * self.d;
            let u = &self.units[o..o + self.d];
            let g = &grad_units[o..o + self.d];
            let dot: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
            let inv_norm = 1.0 / self.norms[r];
            for t in 0..self.d {
                raw[o + t] = (g[t] - dot * u[t]) * inv_norm;
            }
        }
        Ok(raw)
    }
}
