//! Multiple-instance learning toolkit built around attention pooling as an
//! expectation under a learned per-bag probability measure.
//!
//! A *bag* is a set of instance feature vectors sharing one multi-hot label.
//! The model embeds instances with a shared stack of dense layers, scores
//! each instance per class with a sigmoid classifier head, and (for the
//! attention strategies) weights instances with a non-negative measure head
//! normalized over the bag. Collective (mean), maximum-selection, and
//! weighted-collective pooling are provided alongside attention for
//! controlled comparisons, together with a synthetic weakly-labelled data
//! generator, a class-balanced batch sampler, ranking metrics (mAP / AUC /
//! d-prime), and a reproducible training loop.

pub mod data;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use data::{Bag, DataError, Dataset};
pub use model::{MilNetwork, ModelError, Phi, PoolingStrategy};
pub use rng::Rng;
pub use tensor::{Axis, Matrix, TensorError};
