//! Plain mini-batch SGD on softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureCode, Network};
use crate::error::{Error, Result};
use crate::grid::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_acc: f64,
    pub initial_val_acc: Option<f64>,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainReport {
    pub fn final_train_acc(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_train_acc, |e| e.train_acc)
    }

    pub fn final_val_acc(&self) -> Option<f64> {
        self.epochs
            .last()
            .map_or(self.initial_val_acc, |e| e.val_acc)
    }
}

/// Softmax cross-entropy loss and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, e)| e / total - if k == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// Input gradient and parameter gradients of `⟨forward(input, upto), cotangent⟩`.
pub fn parameter_gradients(
    net: &Network,
    input: &Image,
    upto: usize,
    cotangent: &FeatureCode,
) -> Result<(Image, Vec<Vec<Vec<f64>>>)> {
    let trace = net.forward_trace(input, upto)?;
    let mut grads = net.zero_param_grads();
    let gi = net.backward_from_trace(&trace, upto, cotangent, Some(&mut grads))?;
    Ok((gi, grads))
}

/// Index of the largest logit; the first one wins ties.
pub fn predict(net: &Network, image: &Image) -> Result<usize> {
    let logits = net.logits(image)?;
    let mut best = 0;
    for (k, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Fraction of correctly classified examples.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Parameter("accuracy of an empty dataset".into()));
    }
    let hits = data
        .images
        .par_iter()
        .zip(&data.labels)
        .map(|(im, &l)| predict(net, im).map(|p| usize::from(p == l)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

/// Trains a copy of `net`. Per-example gradients may be computed in
/// parallel; they are summed in batch order, so results do not depend on
/// the thread count.
pub fn train(
    net: &Network,
    data: &Dataset,
    validation: Option<&Dataset>,
    options: &TrainOptions,
) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Parameter("training dataset is empty".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    if !(options.learning_rate.is_finite() && options.learning_rate >= 0.0) {
        return Err(Error::Parameter(format!(
            "learning rate must be finite and non-negative, got {}",
            options.learning_rate
        )));
    }
    let out_layer = net.output_layer();
    let n_out = net.layer_shape(out_layer)?.len();
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= n_out) {
        return Err(Error::Dimension(format!(
            "label {bad} exceeds the {n_out} network outputs"
        )));
    }
    let validation = validation.filter(|v| !v.is_empty());

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        initial_train_acc: accuracy(&net, data)?,
        initial_val_acc: validation.map(|v| accuracy(&net, v)).transpose()?,
        epochs: Vec::with_capacity(options.epochs),
    };

    for epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(options.batch_size) {
            let per_item = batch
                .par_iter()
                .map(|&i| {
                    let image = &data.images[i];
                    let logits = net.logits(image)?;
                    let (loss, dlogits) = cross_entropy(&logits, data.labels[i]);
                    let cot = FeatureCode::new(dlogits, out_layer);
                    let (_, grads) = parameter_gradients(&net, image, out_layer, &cot)?;
                    Ok((loss, grads))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Numerical(format!("epoch {epoch}: {e}")))?;

            let mut sum = net.zero_param_grads();
            for (loss, grads) in &per_item {
                epoch_loss += loss;
                for (sl, gl) in sum.iter_mut().zip(grads) {
                    for (st, gt) in sl.iter_mut().zip(gl) {
                        for (s, g) in st.iter_mut().zip(gt) {
                            *s += g;
                        }
                    }
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged in epoch {epoch}: loss is {epoch_loss}"
                )));
            }
            let step = options.learning_rate / batch.len() as f64;
            for (pl, gl) in net.params_mut().iter_mut().zip(&sum) {
                for (pt, gt) in pl.iter_mut().zip(gl) {
                    for (p, g) in pt.data.iter_mut().zip(gt) {
                        *p -= step * g;
                    }
                }
            }
            if net.params().iter().flatten().flat_map(|t| &t.data).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "training diverged in epoch {epoch}: non-finite weights"
                )));
            }
        }
        report.epochs.push(EpochMetrics {
            epoch,
            loss: epoch_loss / data.len() as f64,
            train_acc: accuracy(&net, data)?,
            val_acc: validation.map(|v| accuracy(&net, v)).transpose()?,
        });
    }
    Ok((net, report))
}
