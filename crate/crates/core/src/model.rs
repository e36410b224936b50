//! Serializable models: what `train` produces and what `eval`, `check-linear`
//! and `sample` consume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elbo::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::linear_vsfa::LinearVsfaParams;
use crate::net::MlpParams;
use crate::series::TimeSeries;
use crate::sfa_classic::{self, SfaModel};

/// JSON layout: `{"kind": "linear" | "mlp" | "sfa", ...fields}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearVsfaParams),
    Mlp { encoder: MlpParams, decoder: MlpParams },
    Sfa(SfaModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Linear(_) => "linear",
            Model::Mlp { .. } => "mlp",
            Model::Sfa(_) => "sfa",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear(p) => p.input_dim(),
            Model::Mlp { encoder, .. } => encoder.input_dim(),
            Model::Sfa(m) => m.input_dim(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Model::Linear(p) => p.latent_dim(),
            Model::Mlp { encoder, .. } => encoder.output_dim(),
            Model::Sfa(m) => m.output_dim(),
        }
    }

    /// Encoder mean map; classic SFA has none.
    pub fn encoder(&self) -> Option<Encoder> {
        match self {
            Model::Linear(p) => Some(p.encoder()),
            Model::Mlp { encoder, .. } => Some(Encoder::Mlp(encoder.clone())),
            Model::Sfa(_) => None,
        }
    }

    pub fn decoder(&self) -> Option<Decoder> {
        match self {
            Model::Linear(p) => Some(p.decoder()),
            Model::Mlp { decoder, .. } => Some(Decoder::Mlp(decoder.clone())),
            Model::Sfa(_) => None,
        }
    }

    /// Encoded features, `T × d`.
    pub fn features(&self, x: &TimeSeries) -> Result<Matrix> {
        if x.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "features",
                left: (self.input_dim(), self.latent_dim()),
                right: (x.len(), x.dim()),
            });
        }
        match self {
            Model::Sfa(m) => Ok(sfa_classic::transform(m, x)?.into_matrix()),
            _ => self
                .encoder()
                .expect("variational models have an encoder")
                .encode_all(x.as_matrix()),
        }
    }

    /// Input-space directions whose span the features live in, for linear maps.
    pub fn linear_subspace(&self) -> Option<&Matrix> {
        match self {
            Model::Linear(p) => Some(&p.w),
            Model::Sfa(m) => Some(&m.w),
            Model::Mlp { .. } => None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: Model = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Linear(p) => p.validate(),
            Model::Mlp { encoder, decoder } => {
                encoder.validate()?;
                decoder.validate()?;
                if encoder.output_dim() != decoder.input_dim() || decoder.output_dim() != encoder.input_dim() {
                    return Err(Error::Shape(format!(
                        "encoder {}→{} does not chain with decoder {}→{}",
                        encoder.input_dim(),
                        encoder.output_dim(),
                        decoder.input_dim(),
                        decoder.output_dim()
                    )));
                }
                Ok(())
            }
            Model::Sfa(m) => {
                if m.w.rows() != m.mean.len() || m.w.cols() != m.delta.len() {
                    return Err(Error::Shape("inconsistent sfa model".into()));
                }
                Ok(())
            }
        }
    }
}
