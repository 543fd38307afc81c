//! Text-anchored vision-language contrastive distillation at desk scale.
//!
//! A frozen teacher encoder is distilled into a smaller student encoder
//! using a contrastive image/text objective plus a norm-distillation term
//! anchored on the paired text features. An optional predistillation stage
//! first pulls the student toward the teacher on an unlabeled corpus.
//! Encoders are evaluated with linear probes scored by AUC-ROC.

pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod numerics;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Rng, Tape, Tensor, Var};
