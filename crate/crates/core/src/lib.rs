//! Iterative pruning of hidden units and convolutional filters by the lowest
//! expected absolute post-activation value.
//!
//! A [`model::MaskedModel`] carries a fixed initialisation and a binary unit
//! mask. [`prune::run_dropnet`] alternates between training to early stop,
//! scoring the live units with a [`stats::Metric`] and dropping the lowest
//! scoring fraction, always reverting to the original initialisation before
//! the next round of training.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod prune;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{Dataset, Split, Splits};
pub use error::{Error, Result};
pub use model::{Mask, MaskedModel, ModelSpec};
pub use oracle::{oracle_select, run_oracle};
pub use params::ParamSet;
pub use prune::{one_shot, run_dropnet, CycleRecord, PruneConfig, ReinitMode};
pub use rng::Rng;
pub use stats::{ActivationStats, DropBudget, Metric, Scope};
pub use tensor::{Real, Tensor};
