use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM, DEFAULT_LEAKY_SLOPE};

/// Architecture hyperparameters of a RamanNet instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spectrum length in samples.
    pub input_len: usize,
    /// Samples per window.
    pub window_len: usize,
    /// Offset between consecutive windows.
    pub window_step: usize,
    /// Units in each per-window dense block.
    pub block_units: usize,
    /// Units in the summarizing dense layer.
    pub summary_units: usize,
    /// Units in the embedding layer.
    pub embed_units: usize,
    pub num_classes: usize,
    /// Dropout after concatenating the block features.
    pub dropout_concat: f64,
    /// Dropout after the summary layer.
    pub dropout_summary: f64,
    /// Dropout between the embedding and the softmax head.
    pub dropout_embedding: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl ModelConfig {
    /// Published hyperparameters (w=50, dw=25, n1=25, n2=512, nf=256,
    /// dropouts 0.5/0.4/0.25) for the given input length and class count.
    pub fn new(input_len: usize, num_classes: usize) -> Self {
        Self {
            input_len,
            window_len: 50,
            window_step: 25,
            block_units: 25,
            summary_units: 512,
            embed_units: 256,
            num_classes,
            dropout_concat: 0.5,
            dropout_summary: 0.4,
            dropout_embedding: 0.25,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_epsilon: DEFAULT_BN_EPSILON,
        }
    }

    pub fn num_windows(&self) -> usize {
        num_windows(self.input_len, self.window_len, self.window_step)
    }

    /// Width of the concatenated block features.
    pub fn concat_width(&self) -> usize {
        self.num_windows() * self.block_units
    }

    /// Samples past the last full window that the model never sees.
    pub fn dropped_tail(&self) -> usize {
        self.input_len - ((self.num_windows() - 1) * self.window_step + self.window_len)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.window_len == 0 || self.window_step == 0 {
            return fail("window length and step must be at least 1".into());
        }
        if self.window_len > self.input_len {
            return Err(Error::InputTooShort {
                len: self.input_len,
                window: self.window_len,
            });
        }
        if self.window_step > self.window_len {
            return fail(format!(
                "window step {} exceeds window length {} (samples would be skipped)",
                self.window_step, self.window_len
            ));
        }
        if self.block_units == 0 || self.summary_units == 0 || self.embed_units == 0 {
            return fail("layer widths must be at least 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        for (name, rate) in [
            ("dropout_concat", self.dropout_concat),
            ("dropout_summary", self.dropout_summary),
            ("dropout_embedding", self.dropout_embedding),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} = {rate} must be in [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return fail(format!("leaky slope {} must be in [0, 1)", self.leaky_slope));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || !(self.bn_epsilon > 0.0) {
            return fail("batchnorm momentum must be in (0, 1) and epsilon positive".into());
        }
        Ok(())
    }
}

/// `floor((len − window) / step) + 1`, or 0 when the input is shorter than a window.
pub fn num_windows(len: usize, window: usize, step: usize) -> usize {
    if len < window || step == 0 {
        0
    } else {
        (len - window) / step + 1
    }
}

/// Trainable parameter count (dense weights and biases, batchnorm scale and
/// shift); running statistics are not counted.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let w = config.window_len;
    let n1 = config.block_units;
    let n2 = config.summary_units;
    let nf = config.embed_units;
    let c = config.num_classes;
    let blocks = config.num_windows() * (w * n1 + n1 + 2 * n1);
    let summary = config.num_windows() * n1 * n2 + n2 + 2 * n2;
    let embedding = n2 * nf + nf + 2 * nf;
    let head = nf * c + c;
    blocks + summary + embedding + head
}
