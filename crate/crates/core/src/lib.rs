//! Learning-to-rank blind image quality assessment.
//!
//! Quality-discriminable pairs and lists are generated from agreeing
//! full-reference oracles, then used to train pairwise or listwise scoring
//! networks. The numeric core is generic over [`Scalar`] (`f32` or `f64`).

pub mod data;
pub mod error;
pub mod evalsuite;
pub mod experiment;
pub mod froracles;
pub mod gmad;
pub mod listrank;
pub mod pairgen;
pub mod pairrank;
pub mod qnet;
pub mod scalar;

pub use data::{Dataset, Distortion, FeatureMatrix, FeatureScaling, ImageRecord};
pub use error::{Error, Result};
pub use evalsuite::{EvalReport, SessionConfig};
pub use pairgen::{Dil, DilConfig, Dip, DipConfig};
pub use pairrank::TrainConfig;
pub use qnet::{LinearModel, ModelMeta, QNetModel, QualityModel};
pub use scalar::Scalar;

pub type QNet = QNetModel<f64>;
pub type QNet32 = QNetModel<f32>;
pub type Linear = LinearModel<f64>;
pub type Linear32 = LinearModel<f32>;
pub type Features = FeatureMatrix<f64>;
