//! Reference-free pseudo-label data selection for ASR adaptation.
//!
//! The pipeline: utterance-level MFCC features drive a target-aware facility
//! location preselection ([`flmi`]); each preselected utterance is decoded
//! under a fixed set of perturbations, every hypothesis is scored with a
//! predicted WER and speech/text embedding alignment ([`predictor`],
//! [`alignment`]); percentile rules over the improvements relative to the
//! unperturbed baseline pick the training subset ([`rules`]).

pub mod corpus;
pub mod error;

pub mod alignment;
pub mod flmi;
pub mod metrics;
pub mod mfcc;
pub mod predictor;
pub mod rules;
pub mod synth;

pub use error::{Error, Result};
