//! Deterministic synthetic multimorbidity datasets.
//!
//! Each class owns a small set of prototype directions on the unit sphere
//! (one per mode); a sample's feature vector is the sum of one prototype per
//! present class plus isotropic Gaussian noise. Samples with no findings sit
//! around a dedicated healthy prototype. Prototypes are drawn as a
//! Haar-random orthonormal frame (each is uniform on the sphere, and they
//! are mutually orthogonal while `n_classes * modes_per_class + 1` fits in
//! `input_dim`), so task difficulty depends on the noise level rather than
//! on prototype-placement luck. Labels are drawn per class from configured
//! prevalences, with multiplicative co-occurrence boosts applied once
//! earlier classes in the draw order came out positive, and a configurable
//! fraction of positives is degraded to uncertain.
//!
//! Generation is a pure function of the config: one seeded stream drives
//! prototypes first, then each sample in order, so equal configs produce
//! byte-identical files.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::labels::{LabelState, LabelVector};
use crate::numerics::l2_normalize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_classes: usize,
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    /// Per-class positive rate in the non-negative branch. Empty means 0.08
    /// for every class, which keeps multimorbid samples present but rare.
    pub prevalence: Vec<f64>,
    /// Multiplicative boost `cooccurrence[k][j]` applied to class `j`'s rate
    /// when the earlier class `k` was drawn positive. Empty means no boosts.
    pub cooccurrence: Vec<Vec<f64>>,
    /// Probability that a sample is emitted with no findings at all.
    pub negative_fraction: f64,
    /// Probability that a drawn positive is degraded to uncertain.
    pub uncertain_fraction: f64,
    pub modes_per_class: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_classes: 4,
            input_dim: 16,
            prevalence: Vec::new(),
            cooccurrence: Vec::new(),
            negative_fraction: 0.3,
            uncertain_fraction: 0.05,
            modes_per_class: 2,
            noise_std: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if self.n_classes == 0 || self.input_dim == 0 || self.modes_per_class == 0 {
            return bad("n_classes, input_dim, and modes_per_class must be at least 1".into());
        }
        if !self.prevalence.is_empty() {
            if self.prevalence.len() != self.n_classes {
                return bad(format!(
                    "prevalence has {} entries for {} classes",
                    self.prevalence.len(),
                    self.n_classes
                ));
            }
            if self.prevalence.iter().any(|p| !(p > &0.0 && p <= &1.0)) {
                return bad("prevalence entries must lie in (0, 1]".into());
            }
        }
        if !self.cooccurrence.is_empty() {
            if self.cooccurrence.len() != self.n_classes
                || self.cooccurrence.iter().any(|r| r.len() != self.n_classes)
            {
                return bad("cooccurrence must be an n_classes x n_classes matrix".into());
            }
            if self
                .cooccurrence
                .iter()
                .flatten()
                .any(|b| !(b.is_finite() && *b >= 0.0))
            {
                return bad("cooccurrence boosts must be finite and non-negative".into());
            }
        }
        for (name, v) in [
            ("negative_fraction", self.negative_fraction),
            ("uncertain_fraction", self.uncertain_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std must be finite and non-negative".into());
        }
        Ok(())
    }

    /// The prevalence vector and co-occurrence matrix after filling empty
    /// fields with their defaults, exposed so oracles can reuse the exact
    /// priors `generate` samples from.
    pub fn resolved_priors(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let prevalence = if self.prevalence.is_empty() {
            vec![0.08; self.n_classes]
        } else {
            self.prevalence.clone()
        };
        let cooccurrence = if self.cooccurrence.is_empty() {
            vec![vec![1.0; self.n_classes]; self.n_classes]
        } else {
            self.cooccurrence.clone()
        };
        (prevalence, cooccurrence)
    }
}

fn random_unit(rng: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok((unit, _)) = l2_normalize(&v) {
            return unit;
        }
    }
}

/// The prototype directions a config generates, exposed so oracles can score
/// samples against the true generative model.
#[derive(Debug, Clone)]
pub struct Prototypes {
    /// `class_modes[j][m]` is the unit prototype of class `j`, mode `m`.
    pub class_modes: Vec<Vec<Vec<f64>>>,
    pub healthy: Vec<f64>,
}

/// Draws the next frame vector: a unit Gaussian direction orthogonalized
/// against the accepted frame. Once the frame spans the space, further
/// prototypes are plain unit draws.
fn next_frame_vector(rng: &mut ChaCha20Rng, d: usize, frame: &mut Vec<Vec<f64>>) -> Vec<f64> {
    loop {
        let mut v = random_unit(rng, d);
        if frame.len() < d {
            for row in frame.iter() {
                let dot: f64 = v.iter().zip(row).map(|(a, b)| a * b).sum();
                for (vi, ri) in v.iter_mut().zip(row) {
                    *vi -= dot * ri;
                }
            }
        }
        // A residual this small means the draw was (numerically) inside the
        // current span; retry with a fresh direction.
        if let Ok((unit, norm)) = l2_normalize(&v) {
            if norm > 1e-8 {
                if frame.len() < d {
                    frame.push(unit.clone());
                }
                return unit;
            }
        }
    }
}

fn draw_prototypes(rng: &mut ChaCha20Rng, config: &SynthConfig) -> Prototypes {
    let mut frame: Vec<Vec<f64>> = Vec::new();
    let class_modes = (0..config.n_classes)
        .map(|_| {
            (0..config.modes_per_class)
                .map(|_| next_frame_vector(rng, config.input_dim, &mut frame))
                .collect()
        })
        .collect();
    let healthy = next_frame_vector(rng, config.input_dim, &mut frame);
    Prototypes {
        class_modes,
        healthy,
    }
}

/// Recomputes the prototypes `generate` would use for this config.
pub fn prototypes_of(config: &SynthConfig) -> Result<Prototypes> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    Ok(draw_prototypes(&mut rng, config))
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let (prevalence, cooccurrence) = config.resolved_priors();
    let (c, d, modes) = (config.n_classes, config.input_dim, config.modes_per_class);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let prototypes = draw_prototypes(&mut rng, config);

    let mut samples = Vec::with_capacity(config.n_samples);
    for s in 0..config.n_samples {
        let all_negative = rng.gen::<f64>() < config.negative_fraction;
        let mut states = vec![LabelState::Negative; c];
        if !all_negative {
            // Redraw until at least one class comes out positive.
            let bits = loop {
                let mut bits = vec![false; c];
                for j in 0..c {
                    let mut p = prevalence[j];
                    for k in 0..j {
                        if bits[k] {
                            p *= cooccurrence[k][j];
                        }
                    }
                    bits[j] = rng.gen::<f64>() < p.min(1.0);
                }
                if bits.iter().any(|&b| b) {
                    break bits;
                }
            };
            for j in 0..c {
                if bits[j] {
                    states[j] = if rng.gen::<f64>() < config.uncertain_fraction {
                        LabelState::Uncertain
                    } else {
                        LabelState::Positive
                    };
                }
            }
        }
        let mode_pick: Vec<usize> = (0..c).map(|_| rng.gen_range(0..modes)).collect();

        let labels = LabelVector(states);
        let mut x = vec![0.0; d];
        if labels.is_all_negative() {
            x.copy_from_slice(&prototypes.healthy);
        } else {
            for (j, present) in labels.effective_bits().iter().enumerate() {
                if *present {
                    let proto = &prototypes.class_modes[j][mode_pick[j]];
                    for (xi, pi) in x.iter_mut().zip(proto) {
                        *xi += pi;
                    }
                }
            }
        }
        for xi in &mut x {
            let noise: f64 = rng.sample(StandardNormal);
            *xi += config.noise_std * noise;
        }

        samples.push(Sample {
            id: format!("s{s:06}"),
            features: x,
            labels,
        });
    }

    Ok(Dataset {
        n_classes: c,
        input_dim: d,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    n_classes: usize,
    input_dim: usize,
}

#[derive(Serialize)]
struct RowRef<'a> {
    id: &'a str,
    features: &'a [f64],
    labels: &'a LabelVector,
}

#[derive(Deserialize)]
struct RowOwned {
    id: String,
    features: Vec<f64>,
    labels: LabelVector,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.features.len() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim,
                    got: s.features.len(),
                });
            }
            if s.labels.len() != self.n_classes {
                return Err(Error::DimensionMismatch {
                    expected: self.n_classes,
                    got: s.labels.len(),
                });
            }
            if s.features.iter().any(|f| !f.is_finite()) {
                return Err(Error::Parse(format!(
                    "sample {} has non-finite features",
                    s.id
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Parse(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(())
    }

    /// Writes the newline-delimited JSON form: a header line followed by one
    /// row object per sample.
    pub fn save(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            version: 1,
            n_classes: self.n_classes,
            input_dim: self.input_dim,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            let row = RowRef {
                id: &s.id,
                features: &s.features,
                labels: &s.labels,
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_path(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Parse("dataset file is empty".into()))??;
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| Error::Parse(format!("bad header line: {e}")))?;
        if header.version != 1 {
            return Err(Error::Parse(format!(
                "unsupported dataset version {}",
                header.version
            )));
        }
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: RowOwned = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?;
            samples.push(Sample {
                id: row.id,
                features: row.features,
                labels: row.labels,
            });
        }
        let dataset = Dataset {
            n_classes: header.n_classes,
            input_dim: header.input_dim,
            samples,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn load_path(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_samples: 200,
            n_classes: 3,
            input_dim: 6,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config()).unwrap();
        let b = generate(&small_config()).unwrap();
        assert_eq!(a, b);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.save(&mut bytes_a).unwrap();
        b.save(&mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&small_config()).unwrap();
        let b = generate(&SynthConfig {
            seed: 8,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shapes_and_ids_are_as_configured() {
        let data = generate(&small_config()).unwrap();
        assert_eq!(data.len(), 200);
        assert_eq!(data.samples[0].id, "s000000");
        assert_eq!(data.samples[199].id, "s000199");
        for s in &data.samples {
            assert_eq!(s.features.len(), 6);
            assert_eq!(s.labels.len(), 3);
        }
        data.validate().unwrap();
    }

    #[test]
    fn negative_fraction_bounds_hold_at_the_extremes() {
        let none = generate(&SynthConfig {
            negative_fraction: 0.0,
            ..small_config()
        })
        .unwrap();
        assert!(none.samples.iter().all(|s| !s.labels.is_all_negative()));

        let all = generate(&SynthConfig {
            negative_fraction: 1.0,
            ..small_config()
        })
        .unwrap();
        assert!(all.samples.iter().all(|s| s.labels.is_all_negative()));
    }

    #[test]
    fn uncertain_fraction_bounds_hold_at_the_extremes() {
        let crisp = generate(&SynthConfig {
            uncertain_fraction: 0.0,
            ..small_config()
        })
        .unwrap();
        assert!(crisp
            .samples
            .iter()
            .all(|s| !s.labels.states().contains(&LabelState::Uncertain)));

        let hazy = generate(&SynthConfig {
            uncertain_fraction: 1.0,
            negative_fraction: 0.0,
            ..small_config()
        })
        .unwrap();
        assert!(hazy
            .samples
            .iter()
            .all(|s| !s.labels.states().contains(&LabelState::Positive)));
        assert!(hazy
            .samples
            .iter()
            .any(|s| s.labels.states().contains(&LabelState::Uncertain)));
    }

    #[test]
    fn round_trip_preserves_the_dataset() {
        let data = generate(&small_config()).unwrap();
        let mut bytes = Vec::new();
        data.save(&mut bytes).unwrap();
        let loaded = Dataset::load(&bytes[..]).unwrap();
        assert_eq!(data, loaded);
    }

    #[test]
    fn save_then_load_then_save_is_byte_identical() {
        let data = generate(&small_config()).unwrap();
        let mut first = Vec::new();
        data.save(&mut first).unwrap();
        let loaded = Dataset::load(&first[..]).unwrap();
        let mut second = Vec::new();
        loaded.save(&mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn load_rejects_bad_inputs() {
        let cases: &[&str] = &[
            "",
            "not json\n",
            "{\"version\":2,\"n_classes\":1,\"input_dim\":1}\n",
            // Wrong feature length.
            "{\"version\":1,\"n_classes\":1,\"input_dim\":2}\n{\"id\":\"a\",\"features\":[1.0],\"labels\":[\"pos\"]}\n",
            // Duplicate ids.
            "{\"version\":1,\"n_classes\":1,\"input_dim\":1}\n{\"id\":\"a\",\"features\":[1.0],\"labels\":[\"pos\"]}\n{\"id\":\"a\",\"features\":[2.0],\"labels\":[\"neg\"]}\n",
            // Unknown label state.
            "{\"version\":1,\"n_classes\":1,\"input_dim\":1}\n{\"id\":\"a\",\"features\":[1.0],\"labels\":[\"maybe\"]}\n",
        ];
        for case in cases {
            assert!(
                Dataset::load(case.as_bytes()).is_err(),
                "accepted: {case:?}"
            );
        }
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut c = small_config();
        c.prevalence = vec![0.5];
        assert!(c.validate().is_err());

        let mut c = small_config();
        c.negative_fraction = 1.5;
        assert!(c.validate().is_err());

        let mut c = small_config();
        c.modes_per_class = 0;
        assert!(c.validate().is_err());

        let mut c = small_config();
        c.cooccurrence = vec![vec![1.0; 2]; 2];
        assert!(c.validate().is_err());
    }

    #[test]
    fn prototypes_form_an_orthonormal_frame_while_dims_last() {
        // 3 classes x 2 modes + healthy = 7 prototypes in 8 dims: all unit
        // norm and pairwise orthogonal.
        let config = SynthConfig {
            n_classes: 3,
            modes_per_class: 2,
            input_dim: 8,
            ..small_config()
        };
        let protos = prototypes_of(&config).unwrap();
        let mut all: Vec<&Vec<f64>> = protos.class_modes.iter().flatten().collect();
        all.push(&protos.healthy);
        assert_eq!(all.len(), 7);
        for (i, u) in all.iter().enumerate() {
            let n: f64 = u.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            for w in &all[i + 1..] {
                let dot: f64 = u.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-10, "prototypes {i} not orthogonal: {dot}");
            }
        }
    }

    #[test]
    fn prototypes_beyond_capacity_are_still_unit_norm() {
        // 4 classes x 3 modes + healthy = 13 prototypes in 4 dims: the frame
        // covers the first 4, the rest are plain unit draws.
        let config = SynthConfig {
            n_classes: 4,
            modes_per_class: 3,
            input_dim: 4,
            ..small_config()
        };
        let protos = prototypes_of(&config).unwrap();
        let mut all: Vec<&Vec<f64>> = protos.class_modes.iter().flatten().collect();
        all.push(&protos.healthy);
        assert_eq!(all.len(), 13);
        for u in &all {
            let n: f64 = u.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prototypes_match_generation() {
        // All-negative samples sit near the healthy prototype: with tiny
        // noise their features recover it almost exactly.
        let config = SynthConfig {
            n_samples: 50,
            negative_fraction: 1.0,
            noise_std: 1e-9,
            ..small_config()
        };
        let protos = prototypes_of(&config).unwrap();
        let data = generate(&config).unwrap();
        for s in &data.samples {
            let d2 = crate::numerics::sq_dist(&s.features, &protos.healthy).unwrap();
            assert!(d2 < 1e-12);
        }
    }
}
