use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Classifier, Dims, Layer, ParamGrads};
use crate::cloud::PointCloud;
use crate::{Error, Result, Scalar};

/// Mini-batch SGD with momentum and step decay, cross-entropy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// The learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            h1: 64,
            h2: 128,
            h3: 64,
            epochs: 60,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            decay_every: 20,
            decay_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub model: Classifier<T>,
    /// Mean cross-entropy over each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Glorot-uniform weights and zero biases.
pub(crate) fn init_model<T: Scalar>(dims: Dims, seed: u64) -> Classifier<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Classifier::zeros(dims, seed);
    for layer in model.layers_mut() {
        let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut layer.weight {
            *w = T::of(rng.random_range(-bound..=bound));
        }
    }
    model
}

/// Fraction of clouds whose predicted class equals their label.
pub fn accuracy<T: Scalar>(model: &Classifier<T>, clouds: &[PointCloud<T>]) -> f64 {
    if clouds.is_empty() {
        return 0.0;
    }
    let correct = clouds
        .iter()
        .filter(|c| c.label() == Some(model.predict(c)))
        .count();
    correct as f64 / clouds.len() as f64
}

fn softmax_xent<T: Scalar>(logits: &[T], label: usize, dlogits: &mut [T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (d, &z) in dlogits.iter_mut().zip(logits) {
        *d = (z - max).exp();
        total += *d;
    }
    for d in dlogits.iter_mut() {
        *d /= total;
    }
    let loss = -(dlogits[label].max(T::min_positive_value())).ln();
    dlogits[label] -= T::one();
    loss
}

fn sgd_step<T: Scalar>(param: &mut Layer<T>, velocity: &mut Layer<T>, grad: &Layer<T>, lr: T, momentum: T, scale: T) {
    for ((w, v), g) in param
        .weight
        .iter_mut()
        .chain(param.bias.iter_mut())
        .zip(velocity.weight.iter_mut().chain(velocity.bias.iter_mut()))
        .zip(grad.weight.iter().chain(grad.bias.iter()))
    {
        *v = momentum * *v + *g * scale;
        *w -= lr * *v;
    }
}

/// Trains a classifier on labeled clouds and reports held-out accuracy on `test`.
/// Deterministic for a fixed seed.
pub fn train<T: Scalar>(
    train_set: &[PointCloud<T>],
    test_set: &[PointCloud<T>],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainReport<T>> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::invalid("epochs and batch size must be positive"));
    }
    let mut labels = Vec::with_capacity(train_set.len());
    for (i, c) in train_set.iter().enumerate() {
        labels.push(c.label().ok_or_else(|| Error::invalid(format!("training cloud {i} has no label")))?);
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|s| **s).count()
    };
    if distinct < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    if let Some(c) = test_set.iter().find(|c| c.label().is_none_or(|l| l >= classes)) {
        return Err(Error::invalid(format!("test cloud has label {:?} outside the training classes", c.label())));
    }

    let dims = Dims {
        h1: config.h1,
        h2: config.h2,
        h3: config.h3,
        classes,
    };
    let mut model: Classifier<T> = init_model(dims, seed);
    let mut velocity = ParamGrads::zeros(dims);
    let mut grads = ParamGrads::zeros(dims);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let momentum = T::of(config.momentum);
    let mut dlogits = vec![T::zero(); classes];
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.decay_factor.powi((epoch / config.decay_every.max(1)) as i32);
        let lr = T::of(lr);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            for layer in grads.layers_mut() {
                layer.weight.iter_mut().chain(layer.bias.iter_mut()).for_each(|v| *v = T::zero());
            }
            for &i in batch {
                let cloud = &train_set[i];
                let pass = model.forward_pass(cloud);
                epoch_loss += softmax_xent(&pass.logits, labels[i], &mut dlogits).to_f64_lossy();
                model.backward(cloud, &pass, &dlogits, Some(&mut grads), None);
            }
            let scale = T::one() / T::of(batch.len() as f64);
            let [p1, p2, p3, p4] = model.layers_mut();
            let [v1, v2, v3, v4] = velocity.layers_mut();
            sgd_step(p1, v1, &grads.point1, lr, momentum, scale);
            sgd_step(p2, v2, &grads.point2, lr, momentum, scale);
            sgd_step(p3, v3, &grads.head1, lr, momentum, scale);
            sgd_step(p4, v4, &grads.head2, lr, momentum, scale);
        }
        epoch_losses.push(epoch_loss / train_set.len() as f64);
    }

    let train_accuracy = accuracy(&model, train_set);
    let test_accuracy = accuracy(&model, test_set);
    Ok(TrainReport {
        model,
        epoch_losses,
        train_accuracy,
        test_accuracy,
    })
}
