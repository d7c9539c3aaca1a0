//! Datasets, evaluation splits and triplet sampling.

mod dataset;
mod split;
mod triplet;

pub use dataset::{class_counts, filter_min_class_size, FilteredDataset, LabeledDataset, SampleSource};
pub use split::{holdout_split, make_splits, Split, SplitPlan, SplitVariant};
pub use triplet::{mine_batch_hard, sample_random, sample_triplets, TripletBatch, TripletStrategy};
