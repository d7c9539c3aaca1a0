//! The RamanNet architecture: per-window dense blocks, concatenation,
//! summarization, an embedding layer trained with an auxiliary triplet loss,
//! and a softmax head.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{count_parameters, num_windows, ModelConfig};
pub use network::{
    split_windows, ForwardPass, Gradients, LossBreakdown, NormedDense, Objective, RamanNet,
};

#[cfg(test)]
mod tests;
