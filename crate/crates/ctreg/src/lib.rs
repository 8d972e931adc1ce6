//! Deformable whole-body PET registration with CT-guided spatially-varying
//! regularization.
//!
//! The crate aligns a moving PET/CT/segmentation triple to a fixed one by
//! optimizing a dense displacement field against a weakly supervised
//! objective: CT soft Dice + sampled mask soft Dice + a smoothness penalty
//! whose per-voxel weight is derived from the moving CT. Evaluation metrics,
//! a synthetic phantom generator with ground-truth deformations, volume I/O
//! (NIfTI-1 and a raw bundle format), and a CLI frontend round out the
//! pipeline.

pub mod cli;
pub mod engine;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod util;
pub mod volume;
pub mod weight_map;

pub mod io;

pub use error::{Error, Result};
pub use volume::{DisplacementField, Grid, LabelVolume, RegistrationPair, Volume};
