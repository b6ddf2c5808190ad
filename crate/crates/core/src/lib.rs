//! Resilient quantized control of sampled linear plants over channels subject
//! to denial-of-service attacks.
//!
//! The pipeline is: sample a [`ContinuousPlant`] into a [`DiscretePlant`],
//! synthesize gains ([`gains`]), derive the range growth factors and check the
//! stability conditions ([`conditions`]), then simulate one of the closed
//! loops in [`controlloop`] against a [`DoSPattern`].

pub mod casestudy;
pub mod conditions;
pub mod controlloop;
pub mod discretize;
pub mod dos;
pub mod error;
pub mod gains;
pub mod matrix;
pub mod quantizer;

pub use conditions::{ConditionReport, DecayCertificate, ThetaSet, ThetaVariant};
pub use discretize::{ContinuousPlant, DiscretePlant};
pub use dos::{DoSParams, DoSPattern};
pub use error::{Error, Result};
pub use gains::{AckConstants, DecayConstants, GainSet};
pub use matrix::Matrix;
