//! Desk-scale acoustic-to-articulatory (A2A) inversion toolkit.
//!
//! The crate trains mixture-density-network inversion models with a
//! multi-task loss, smooths generated trajectories with maximum-likelihood
//! parameter generation (MLPG), and bridges acoustic domain mismatch with a
//! two-level bottleneck adaptation stack (MLAN). A seeded synthetic parallel
//! corpus makes every stage verifiable without licensed speech corpora.
//!
//! Module map:
//! - [`features`]: mel filterbank front end, CMVN, context splicing, deltas,
//!   speed perturbation.
//! - [`neuralnet`]: minimal feed-forward engine with multiple heads, a
//!   bottleneck tap, LHUC speaker scaling and deterministic training.
//! - [`mdn`]: MDN head parameterization, the mixture NLL and the auxiliary
//!   MSE / Pearson / cross-entropy losses plus their multi-task blend.
//! - [`mlpg`]: banded maximum-likelihood parameter generation over
//!   static+delta+delta-delta streams.
//! - [`mlan`]: two-level cross-domain bottleneck feature adaptation.
//! - [`pipeline`]: end-to-end training, generation, evaluation and fusion.
//! - [`dataio`]: AFM1/TRJ1/A2AM file formats, manifests, WAV I/O and the
//!   synthetic corpus generator.

pub mod dataio;
pub mod error;
pub mod features;
pub mod mdn;
pub mod mlan;
pub mod mlpg;
pub mod neuralnet;
pub mod pipeline;

pub use error::{Error, Result};
