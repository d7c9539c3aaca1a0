//! Dense-network building blocks with exact, hand-written backward passes.

mod activation;
mod adam;
mod batchnorm;
mod dense;
mod dropout;
mod loss;
mod matrix;

pub use activation::{leaky_relu, leaky_relu_backward, leaky_relu_scalar, DEFAULT_LEAKY_SLOPE};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{
    BatchNormCache, BatchNormGrads, BatchNormLayer, BatchStatistics, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM,
};
pub use dense::{DenseGrads, DenseLayer};
pub use dropout::{DropoutMask, DropoutSpec};
pub use loss::{softmax, softmax_cross_entropy, triplet_loss, TripletLossOutput};
pub use matrix::{dot, squared_distance, Matrix};

/// Execution mode shared by the stochastic / stateful layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batchnorm uses (and updates) batch statistics.
    Train,
    /// Dropout active, batchnorm uses its frozen running statistics.
    FrozenStatistics,
    /// No dropout, batchnorm uses running statistics.
    Infer,
}

impl Mode {
    pub fn uses_batch_statistics(self) -> bool {
        matches!(self, Mode::Train)
    }

    pub fn applies_dropout(self) -> bool {
        !matches!(self, Mode::Infer)
    }
}
