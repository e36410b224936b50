//! Variational slow feature analysis: classic SFA, the linear variational
//! model with closed-form objective and gradients, MLP encoders/decoders, and
//! a trainer that maximizes the β-weighted evidence lower bound.

pub mod elbo;
pub mod error;
pub mod linalg;
pub mod linear_vsfa;
pub mod model;
pub mod net;
pub mod rng;
pub mod series;
pub mod sfa_classic;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use linear_vsfa::LinearVsfaParams;
pub use model::Model;
pub use series::{GeneratorSpec, Mixing, Moments, TimeSeries};
pub use train::{train, TrainConfig, TrainReport};
