//! Model persistence: one JSON document holding the trained parameters and
//! the exact configuration that produced them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::trainer::{LossKind, TrainedModel};
use crate::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

/// On-disk form of a trained model. Serialization keeps every parameter in
/// shortest round-trip decimal form, so save, load, and save again produces
/// the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub n_classes: usize,
    pub config: crate::trainer::TrainConfig,
    pub encoder: crate::encoder::MlpEncoder,
    pub bank: Option<crate::proxies::ProxyBank>,
    pub weights: crate::labels::ClassWeights,
    pub thresholds: Option<Vec<f64>>,
    pub loss_curve: Vec<f64>,
}

impl From<TrainedModel> for ModelFile {
    fn from(m: TrainedModel) -> Self {
        Self {
            version: MODEL_VERSION,
            n_classes: m.n_classes,
            config: m.config,
            encoder: m.encoder,
            bank: m.bank,
            weights: m.weights,
            thresholds: m.thresholds,
            loss_curve: m.loss_curve,
        }
    }
}

impl ModelFile {
    /// Structural checks tying the pieces together: recognized version,
    /// internally valid encoder and bank, and cross-shape agreement between
    /// encoder output, bank dimensionality, class count, and weights.
    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Parse(format!(
                "unrecognized model version {}, expected {}",
                self.version, MODEL_VERSION
            )));
        }
        self.config.validate()?;
        self.encoder.validate()?;
        if self.n_classes == 0 {
            return Err(Error::ShapeMismatch("model has zero classes".into()));
        }
        let c_total = self.config.c_total(self.n_classes);
        let is_bce = self.config.loss == LossKind::Bce;
        match (&self.bank, is_bce) {
            (Some(_), true) => {
                return Err(Error::ShapeMismatch(
                    "BCE models must not carry a proxy bank".into(),
                ))
            }
            (None, false) => {
                return Err(Error::ShapeMismatch(
                    "proxy models must carry a proxy bank".into(),
                ))
            }
            (Some(bank), false) => {
                bank.validate()?;
                if bank.c_total() != c_total {
                    return Err(Error::ShapeMismatch(format!(
                        "bank covers {} classes, config implies {}",
                        bank.c_total(),
                        c_total
                    )));
                }
                if bank.d() != self.encoder.output_dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "bank dimension {} does not match encoder output {}",
                        bank.d(),
                        self.encoder.output_dim()
                    )));
                }
            }
            (None, true) => {
                if self.encoder.output_dim() != c_total {
                    return Err(Error::ShapeMismatch(format!(
                        "BCE head width {} does not match class count {}",
                        self.encoder.output_dim(),
                        c_total
                    )));
                }
                if self.encoder.linear_tail() != 2 {
                    return Err(Error::ShapeMismatch(
                        "BCE models embed from a linear layer under the head".into(),
                    ));
                }
            }
        }
        if !is_bce && self.encoder.linear_tail() != 1 {
            return Err(Error::ShapeMismatch(
                "proxy models end in a single linear output layer".into(),
            ));
        }
        if self.weights.c_total() != c_total {
            return Err(Error::ShapeMismatch(format!(
                "class weights cover {} classes, config implies {}",
                self.weights.c_total(),
                c_total
            )));
        }
        if let Some(t) = &self.thresholds {
            if t.len() != c_total {
                return Err(Error::ShapeMismatch(format!(
                    "{} thresholds for {} classes",
                    t.len(),
                    c_total
                )));
            }
        }
        if self.loss_curve.iter().any(|l| !l.is_finite()) {
            return Err(Error::ShapeMismatch(
                "loss curve contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        self.validate()?;
        Ok(TrainedModel {
            encoder: self.encoder,
            bank: self.bank,
            weights: self.weights,
            config: self.config,
            n_classes: self.n_classes,
            thresholds: self.thresholds,
            loss_curve: self.loss_curve,
        })
    }

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn save_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(r: impl Read) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(r)?;
        file.validate()?;
        Ok(file)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(BufReader::new(File::open(path)?))
    }
}

/// Convenience for the common load-and-use path.
pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    ModelFile::load_path(path)?.into_model()
}
