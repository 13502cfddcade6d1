//! Two-stage generative modelling of matrix-valued data.
//!
//! Stage I learns shared row and column subspaces `(U, V)` on the Stiefel
//! manifold, with an alternating fill-in scheme when entries are missing.
//! Stage II trains a flow-matching model on the small core matrices
//! `U^T M V`, and new matrices are decoded as `U S V^T`.

pub mod baselines;
pub mod batch;
pub mod error;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod patch;
pub mod pipeline;
pub mod rng;
pub mod stage1;
pub mod stiefel;
pub mod synth;

pub use batch::{Mask, MatrixBatch};
pub use error::{Error, Result};
pub use linalg::Mat;
pub use stage1::LossRecord;
pub use stiefel::{StiefelPair, StiefelPoint};
