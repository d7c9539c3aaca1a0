use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

use super::config::ModelConfig;
use crate::data::TripletBatch;
use crate::error::{ensure_shape, Error, Result};
use crate::numerics::{
    leaky_relu, leaky_relu_backward, softmax_cross_entropy, triplet_loss, BatchNormCache,
    BatchNormLayer, BatchStatistics, DenseLayer, DropoutMask, DropoutSpec, Matrix, Mode,
};

/// Split one spectrum into overlapping windows: row `i` is
/// `spectrum[i·step .. i·step + window]`. Samples after the last full window
/// are dropped.
pub fn split_windows(spectrum: &[f64], window: usize, step: usize) -> Result<Matrix> {
    if window == 0 || step == 0 {
        return Err(Error::Config("window length and step must be at least 1".into()));
    }
    if spectrum.len() < window {
        return Err(Error::InputTooShort {
            len: spectrum.len(),
            window,
        });
    }
    let count = super::num_windows(spectrum.len(), window, step);
    let rows: Vec<&[f64]> = (0..count)
        .map(|i| &spectrum[i * step..i * step + window])
        .collect();
    Matrix::from_rows(&rows)
}

/// Dense → batchnorm → LeakyReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NormedDense {
    pub dense: DenseLayer,
    pub norm: BatchNormLayer,
}

#[derive(Debug, Clone)]
struct NormedDenseCache {
    input: Matrix,
    norm: BatchNormCache,
    pre_activation: Matrix,
}

struct NormedDenseGrads {
    weights: Matrix,
    bias: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    input: Matrix,
}

impl NormedDense {
    fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            dense: DenseLayer::glorot(in_dim, out_dim, rng),
            norm: BatchNormLayer::new(out_dim, cfg.bn_momentum, cfg.bn_epsilon)?,
        })
    }

    fn forward(
        &self,
        input: Matrix,
        mode: Mode,
        slope: f64,
    ) -> Result<(Matrix, NormedDenseCache, Option<BatchStatistics>)> {
        let z = self.dense.forward(&input)?;
        let (pre_activation, norm, stats) = self.norm.normalize(&z, mode)?;
        let out = leaky_relu(&pre_activation, slope);
        let cache = NormedDenseCache {
            input,
            norm,
            pre_activation,
        };
        Ok((out, cache, stats))
    }

    fn backward(&self, cache: &NormedDenseCache, upstream: &Matrix, slope: f64) -> Result<NormedDenseGrads> {
        let d_pre = leaky_relu_backward(&cache.pre_activation, upstream, slope)?;
        let bn = self.norm.backward(&cache.norm, &d_pre)?;
        let dense = self.dense.backward(&cache.input, &bn.input)?;
        Ok(NormedDenseGrads {
            weights: dense.weights,
            bias: dense.bias,
            gamma: bn.gamma,
            beta: bn.beta,
            input: dense.input,
        })
    }

    fn parameters(&self) -> [&[f64]; 4] {
        [
            self.dense.weights.as_slice(),
            &self.dense.bias,
            &self.norm.gamma,
            &self.norm.beta,
        ]
    }

    fn parameters_mut(&mut self) -> [&mut [f64]; 4] {
        let NormedDense { dense, norm } = self;
        [
            dense.weights.as_mut_slice(),
            &mut dense.bias,
            &mut norm.gamma,
            &mut norm.beta,
        ]
    }
}

/// The shifted-window dense network.
///
/// Window `i` of the input goes through its own [`NormedDense`] block; no
/// parameters are shared between blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RamanNet {
    config: ModelConfig,
    pub blocks: Vec<NormedDense>,
    pub summary: NormedDense,
    pub embedding: NormedDense,
    pub head: DenseLayer,
}

/// Outputs and cached intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Matrix,
    /// Embedding-layer activations (before the last dropout).
    pub embeddings: Matrix,
    /// Concatenated block outputs before the first dropout; columns
    /// `i·block_units .. (i+1)·block_units` belong to window `i`.
    pub block_features: Matrix,
    cache: ForwardCache,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    blocks: Vec<NormedDenseCache>,
    concat_mask: DropoutMask,
    summary: NormedDenseCache,
    summary_mask: DropoutMask,
    embedding: NormedDenseCache,
    embedding_mask: DropoutMask,
    head_input: Matrix,
}

/// Weights of the joint objective `ce_weight·CE + triplet_weight·Triplet`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub ce_weight: f64,
    pub triplet_weight: f64,
    pub margin: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            ce_weight: 1.0,
            triplet_weight: 1.0,
            margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub triplet: f64,
    /// Weighted total that the gradients differentiate.
    pub total: f64,
}

/// Parameter gradients in [`RamanNet::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    arrays: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.arrays.iter().map(Vec::as_slice).collect()
    }

    pub fn arrays(&self) -> &[Vec<f64>] {
        &self.arrays
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().flatten().all(|g| g.is_finite())
    }
}

impl RamanNet {
    /// Glorot-uniform dense weights, zero biases, unit batchnorm scale.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.num_windows())
            .map(|_| NormedDense::new(config.window_len, config.block_units, &config, rng))
            .collect::<Result<Vec<_>>>()?;
        let summary = NormedDense::new(config.concat_width(), config.summary_units, &config, rng)?;
        let embedding = NormedDense::new(config.summary_units, config.embed_units, &config, rng)?;
        let head = DenseLayer::glorot(config.embed_units, config.num_classes, rng);
        Ok(Self {
            config,
            blocks,
            summary,
            embedding,
            head,
        })
    }

    /// All parameters zero (batchnorm scale included), running statistics at
    /// their initial values.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let normed = |i, o| -> Result<NormedDense> {
            let mut norm = BatchNormLayer::new(o, config.bn_momentum, config.bn_epsilon)?;
            norm.gamma.iter_mut().for_each(|g| *g = 0.0);
            Ok(NormedDense {
                dense: DenseLayer::zeros(i, o),
                norm,
            })
        };
        Ok(Self {
            blocks: (0..config.num_windows())
                .map(|_| normed(config.window_len, config.block_units))
                .collect::<Result<Vec<_>>>()?,
            summary: normed(config.concat_width(), config.summary_units)?,
            embedding: normed(config.summary_units, config.embed_units)?,
            head: DenseLayer::zeros(config.embed_units, config.num_classes),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Forward pass. In [`Mode::Train`] the batchnorm running statistics are
    /// updated; `rng` drives dropout in the train modes.
    pub fn forward<R: Rng + ?Sized>(&mut self, batch: &Matrix, mode: Mode, rng: &mut R) -> Result<ForwardPass> {
        let (pass, stats) = self.forward_pure(batch, mode, rng)?;
        for (layer, s) in self.normed_layers_mut().zip(stats) {
            if let Some(s) = s {
                layer.norm.update_running(&s);
            }
        }
        Ok(pass)
    }

    /// Inference-mode forward pass: `(logits, embeddings)`.
    pub fn infer(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        // the rng is never drawn from in inference mode
        let mut rng = crate::rng::rng_from_seed(0);
        let (pass, _) = self.forward_pure(batch, Mode::Infer, &mut rng)?;
        Ok((pass.logits, pass.embeddings))
    }

    fn forward_pure<R: Rng + ?Sized>(
        &self,
        batch: &Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ForwardPass, Vec<Option<BatchStatistics>>)> {
        let cfg = &self.config;
        ensure_shape("input length", cfg.input_len, batch.cols())?;
        let slope = cfg.leaky_slope;
        let n1 = cfg.block_units;
        let mut stats = Vec::with_capacity(self.blocks.len() + 2);

        let mut block_features = Matrix::zeros(batch.rows(), cfg.concat_width());
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let window = batch.column_block(i * cfg.window_step, cfg.window_len);
            let (out, cache, s) = block.forward(window, mode, slope)?;
            block_features.set_column_block(i * n1, &out);
            block_caches.push(cache);
            stats.push(s);
        }

        let (concat, concat_mask) = DropoutSpec::new(cfg.dropout_concat)?.apply(&block_features, mode, rng);
        let (summary_out, summary_cache, s) = self.summary.forward(concat, mode, slope)?;
        stats.push(s);
        let (summary_dropped, summary_mask) =
            DropoutSpec::new(cfg.dropout_summary)?.apply(&summary_out, mode, rng);
        let (embeddings, embedding_cache, s) = self.embedding.forward(summary_dropped, mode, slope)?;
        stats.push(s);
        let (head_input, embedding_mask) =
            DropoutSpec::new(cfg.dropout_embedding)?.apply(&embeddings, mode, rng);
        let logits = self.head.forward(&head_input)?;

        let pass = ForwardPass {
            logits,
            embeddings,
            block_features,
            cache: ForwardCache {
                blocks: block_caches,
                concat_mask,
                summary: summary_cache,
                summary_mask,
                embedding: embedding_cache,
                embedding_mask,
                head_input,
            },
        };
        Ok((pass, stats))
    }

    /// Loss and gradients of the joint objective for a cached forward pass.
    /// Triplet indices refer to rows of the batch; an empty triplet batch
    /// contributes nothing.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        labels: &[usize],
        triplets: &TripletBatch,
        objective: Objective,
    ) -> Result<(LossBreakdown, Gradients)> {
        let slope = self.config.leaky_slope;
        let n = pass.logits.rows();
        ensure_shape("label count", n, labels.len())?;
        if let Some(index) = triplets.iter().flat_map(|(a, p, q)| [a, p, q]).find(|&i| i >= n) {
            return Err(Error::IndexOutOfRange { index, len: n });
        }

        let (cross_entropy, mut d_logits) = softmax_cross_entropy(&pass.logits, labels)?;
        d_logits
            .as_mut_slice()
            .iter_mut()
            .for_each(|g| *g *= objective.ce_weight);

        let mut d_embeddings = Matrix::zeros(n, self.config.embed_units);
        let mut triplet = 0.0;
        if !triplets.is_empty() {
            let emb = &pass.embeddings;
            let out = triplet_loss(
                &emb.select_rows(&triplets.anchor),
                &emb.select_rows(&triplets.positive),
                &emb.select_rows(&triplets.negative),
                objective.margin,
            )?;
            triplet = out.loss;
            for (t, (a, p, q)) in triplets.iter().enumerate() {
                for (idx, grad) in [
                    (a, &out.grad_anchor),
                    (p, &out.grad_positive),
                    (q, &out.grad_negative),
                ] {
                    for (d, g) in d_embeddings.row_mut(idx).iter_mut().zip(grad.row(t)) {
                        *d += objective.triplet_weight * g;
                    }
                }
            }
        }

        let cache = &pass.cache;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(4 * (self.blocks.len() + 2) + 2);
        let head = self.head.backward(&cache.head_input, &d_logits)?;
        let d_head_input = cache.embedding_mask.backward(&head.input)?;
        for (d, g) in d_embeddings.as_mut_slice().iter_mut().zip(d_head_input.as_slice()) {
            *d += g;
        }

        let emb = self.embedding.backward(&cache.embedding, &d_embeddings, slope)?;
        let d_summary = cache.summary_mask.backward(&emb.input)?;
        let summary = self.summary.backward(&cache.summary, &d_summary, slope)?;
        let d_concat = cache.concat_mask.backward(&summary.input)?;

        let n1 = self.config.block_units;
        for (i, block) in self.blocks.iter().enumerate() {
            let upstream = d_concat.column_block(i * n1, n1);
            let g = block.backward(&cache.blocks[i], &upstream, slope)?;
            grads.extend([g.weights.into_vec(), g.bias, g.gamma, g.beta]);
        }
        for g in [summary, emb] {
            grads.extend([g.weights.into_vec(), g.bias, g.gamma, g.beta]);
        }
        grads.extend([head.weights.into_vec(), head.bias]);

        let losses = LossBreakdown {
            cross_entropy,
            triplet,
            total: objective.ce_weight * cross_entropy + objective.triplet_weight * triplet,
        };
        Ok((losses, Gradients { arrays: grads }))
    }

    fn normed_layers(&self) -> impl Iterator<Item = &NormedDense> {
        self.blocks.iter().chain([&self.summary, &self.embedding])
    }

    fn normed_layers_mut(&mut self) -> impl Iterator<Item = &mut NormedDense> {
        self.blocks
            .iter_mut()
            .chain([&mut self.summary, &mut self.embedding])
    }

    /// Trainable arrays: `weights, bias, gamma, beta` for each block, then the
    /// summary and embedding layers, followed by the head's `weights, bias`.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.normed_layers().flat_map(NormedDense::parameters).collect();
        out.extend([self.head.weights.as_slice(), &self.head.bias[..]]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let RamanNet {
            blocks,
            summary,
            embedding,
            head,
            ..
        } = self;
        for layer in blocks.iter_mut().chain([summary, embedding]) {
            out.extend(layer.parameters_mut());
        }
        out.push(head.weights.as_mut_slice());
        out.push(&mut head.bias);
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let layer_names = (0..self.blocks.len())
            .map(|i| format!("block{i}"))
            .chain(["summary".into(), "embedding".into()]);
        for layer in layer_names {
            for field in ["weights", "bias", "gamma", "beta"] {
                names.push(format!("{layer}.{field}"));
            }
        }
        names.extend(["head.weights".into(), "head.bias".into()]);
        names
    }

    /// Batchnorm running statistics: `running_mean, running_var` per normalized layer.
    pub fn running_statistics(&self) -> Vec<&[f64]> {
        self.normed_layers()
            .flat_map(|l| [&l.norm.running_mean[..], &l.norm.running_var[..]])
            .collect()
    }

    /// Every stored array in checkpoint order: for each normalized layer
    /// `weights, bias, gamma, beta, running_mean, running_var`, then the head.
    pub fn all_arrays(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.normed_layers() {
            out.extend(l.parameters());
            out.extend([&l.norm.running_mean[..], &l.norm.running_var[..]]);
        }
        out.extend([self.head.weights.as_slice(), &self.head.bias[..]]);
        out
    }

    pub fn all_arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let RamanNet {
            blocks,
            summary,
            embedding,
            head,
            ..
        } = self;
        for l in blocks.iter_mut().chain([summary, embedding]) {
            let NormedDense { dense, norm } = l;
            out.extend([
                dense.weights.as_mut_slice(),
                &mut dense.bias[..],
                &mut norm.gamma[..],
                &mut norm.beta[..],
                &mut norm.running_mean[..],
                &mut norm.running_var[..],
            ]);
        }
        out.push(head.weights.as_mut_slice());
        out.push(&mut head.bias);
        out
    }

    /// Trainable parameters actually instantiated; equals [`super::count_parameters`].
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}
