//! Affect-conditioned generation of facial behavior for one partner of a
//! dyadic interaction.
//!
//! Faces are represented by the shape parameters of a 68-landmark point
//! distribution model ([`pdm`]). Given the partner's per-frame affect
//! ([`corpus`]), shape-parameter sequences are produced by sampling an
//! affect-shape dictionary ([`dictionary`]), by a conditional LSTM
//! ([`clstm`]), or by a conditional GAN over shape vectors ([`cgan`]), then
//! rendered as one-pixel line sketches ([`sketch`]) and scored ([`eval`]).

pub mod cgan;
pub mod cli;
pub mod clstm;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod dictionary;
mod face_template;
pub mod optim;
pub mod pdm;
pub mod sketch;
pub mod standardize;
mod textio;

pub use error::{Error, Result};
