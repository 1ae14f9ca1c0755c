//! Max-pooling point-set classifier with exact reverse-mode input gradients.
//!
//! Architecture: a shared per-point stage `3 -> h1 -> h2` (affine + ReLU),
//! channel-wise max over points, then a head `h2 -> h3 -> C` with a ReLU
//! between. The network is piecewise linear in the input coordinates.
//!
//! Subgradient conventions: ReLU has derivative 0 at exactly 0, the hinge has
//! derivative 0 when the loss is exactly 0, and max-pool ties route the
//! gradient to the lowest-index maximizing point.

mod io;
mod train;

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{accuracy, train, TrainConfig, TrainReport};

use crate::cloud::{Point3, PointCloud};
use crate::Scalar;

/// Layer widths. `classes` is the size of the logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
    pub classes: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            h1: 64,
            h2: 128,
            h3: 64,
            classes: 6,
        }
    }
}

/// Affine map stored input-major: `weight[i * outputs + o]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub(crate) fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[T] {
        &self.weight[i * self.outputs..(i + 1) * self.outputs]
    }

    /// `out = bias + sum_i x_i * W[i]`, skipping exact-zero inputs.
    #[inline]
    fn apply(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
    }

    /// `sum_o W[i][o] * g[o]` for every input `i`.
    fn transpose_apply(&self, g: &[T], out: &mut [T]) {
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&w, &gv) in self.row(i).iter().zip(g) {
                acc += w * gv;
            }
            *slot = acc;
        }
    }

    fn accumulate(&self, grad: &mut Layer<T>, x: &[T], g: &[T]) {
        for (b, &gv) in grad.bias.iter_mut().zip(g) {
            *b += gv;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &mut grad.weight[i * self.outputs..(i + 1) * self.outputs];
            for (w, &gv) in row.iter_mut().zip(g) {
                *w += xi * gv;
            }
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn tensors(&self) -> [&Vec<T>; 2] {
        [&self.weight, &self.bias]
    }
}

#[inline]
fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
}

/// Trained network weights plus the seed they were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub(crate) dims: Dims,
    pub(crate) point1: Layer<T>,
    pub(crate) point2: Layer<T>,
    pub(crate) head1: Layer<T>,
    pub(crate) head2: Layer<T>,
    pub(crate) seed: u64,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<T> {
    /// Channel-wise max of the per-point features.
    pub pooled: Vec<T>,
    /// Point index that attains each pooled channel (lowest index on ties).
    pub argmax: Vec<usize>,
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
}

/// Per-point gradient triples of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<T>(pub Vec<Point3<T>>);

impl<T: Scalar> GradientField<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![[T::zero(); 3]; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn point_norm(&self, i: usize) -> T {
        let g = &self.0[i];
        (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|v| *v == T::zero())
    }
}

/// C&W hinge `max(0, z_y - max_{i != y} z_i + kappa)`.
///
/// Panics if there are fewer than two logits or `label` is out of range.
pub fn cw_loss<T: Scalar>(logits: &[T], label: usize, kappa: T) -> T {
    let (other, _) = best_other(logits, label);
    (logits[label] - other + kappa).max(T::zero())
}

fn best_other<T: Scalar>(logits: &[T], label: usize) -> (T, usize) {
    assert!(logits.len() >= 2, "cw_loss needs at least two classes");
    assert!(label < logits.len(), "label {label} out of range for {} classes", logits.len());
    let mut best = (T::neg_infinity(), usize::MAX);
    for (i, &z) in logits.iter().enumerate() {
        if i != label && (best.1 == usize::MAX || z > best.0) {
            best = (z, i);
        }
    }
    best
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Parameter gradients with the same layout as the model.
#[derive(Debug, Clone)]
pub(crate) struct ParamGrads<T> {
    pub point1: Layer<T>,
    pub point2: Layer<T>,
    pub head1: Layer<T>,
    pub head2: Layer<T>,
}

impl<T: Scalar> ParamGrads<T> {
    pub(crate) fn zeros(d: Dims) -> Self {
        Self {
            point1: Layer::zeros(3, d.h1),
            point2: Layer::zeros(d.h1, d.h2),
            head1: Layer::zeros(d.h2, d.h3),
            head2: Layer::zeros(d.h3, d.classes),
        }
    }

    pub(crate) fn layers_mut(&mut self) -> [&mut Layer<T>; 4] {
        [&mut self.point1, &mut self.point2, &mut self.head1, &mut self.head2]
    }
}

/// Scratch buffers for the per-point stage.
pub(crate) struct PointScratch<T> {
    pub h1: Vec<T>,
    pub h2: Vec<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.dims.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Untrained network with Glorot-uniform weights and zero biases.
    pub fn random(dims: Dims, seed: u64) -> Self {
        train::init_model(dims, seed)
    }

    pub(crate) fn zeros(dims: Dims, seed: u64) -> Self {
        Self {
            dims,
            point1: Layer::zeros(3, dims.h1),
            point2: Layer::zeros(dims.h1, dims.h2),
            head1: Layer::zeros(dims.h2, dims.h3),
            head2: Layer::zeros(dims.h3, dims.classes),
            seed,
        }
    }

    pub(crate) fn layers(&self) -> [&Layer<T>; 4] {
        [&self.point1, &self.point2, &self.head1, &self.head2]
    }

    pub(crate) fn layers_mut(&mut self) -> [&mut Layer<T>; 4] {
        [&mut self.point1, &mut self.point2, &mut self.head1, &mut self.head2]
    }

    /// Converts weights to another precision.
    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        let cast_layer = |l: &Layer<T>| Layer {
            inputs: l.inputs,
            outputs: l.outputs,
            weight: l.weight.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            bias: l.bias.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        };
        Classifier {
            dims: self.dims,
            point1: cast_layer(&self.point1),
            point2: cast_layer(&self.point2),
            head1: cast_layer(&self.head1),
            head2: cast_layer(&self.head2),
            seed: self.seed,
        }
    }

    pub(crate) fn scratch(&self) -> PointScratch<T> {
        PointScratch {
            h1: vec![T::zero(); self.dims.h1],
            h2: vec![T::zero(); self.dims.h2],
        }
    }

    /// Per-point features (post-ReLU, width `h2`) left in `scratch.h2`.
    #[inline]
    pub(crate) fn point_features(&self, p: &Point3<T>, scratch: &mut PointScratch<T>) {
        self.point1.apply(p, &mut scratch.h1);
        relu_in_place(&mut scratch.h1);
        self.point2.apply(&scratch.h1, &mut scratch.h2);
        relu_in_place(&mut scratch.h2);
    }

    /// Head applied to pooled features: returns `(hidden, logits)`.
    pub(crate) fn head(&self, pooled: &[T]) -> (Vec<T>, Vec<T>) {
        let mut hidden = vec![T::zero(); self.dims.h3];
        self.head1.apply(pooled, &mut hidden);
        relu_in_place(&mut hidden);
        let mut logits = vec![T::zero(); self.dims.classes];
        self.head2.apply(&hidden, &mut logits);
        (hidden, logits)
    }

    pub fn forward_pass(&self, cloud: &PointCloud<T>) -> ForwardPass<T> {
        let mut scratch = self.scratch();
        let h2 = self.dims.h2;
        let mut pooled = vec![T::neg_infinity(); h2];
        let mut argmax = vec![0usize; h2];
        for (i, p) in cloud.points().iter().enumerate() {
            self.point_features(p, &mut scratch);
            for c in 0..h2 {
                if scratch.h2[c] > pooled[c] {
                    pooled[c] = scratch.h2[c];
                    argmax[c] = i;
                }
            }
        }
        let (hidden, logits) = self.head(&pooled);
        ForwardPass {
            pooled,
            argmax,
            hidden,
            logits,
        }
    }

    pub fn forward(&self, cloud: &PointCloud<T>) -> Vec<T> {
        self.forward_pass(cloud).logits
    }

    pub fn predict(&self, cloud: &PointCloud<T>) -> usize {
        argmax(&self.forward(cloud))
    }

    pub fn loss(&self, cloud: &PointCloud<T>, label: usize, kappa: T) -> T {
        cw_loss(&self.forward(cloud), label, kappa)
    }

    /// Backpropagates `dlogits` through the network, accumulating parameter
    /// gradients and/or writing per-point input gradients.
    pub(crate) fn backward(
        &self,
        cloud: &PointCloud<T>,
        pass: &ForwardPass<T>,
        dlogits: &[T],
        mut params: Option<&mut ParamGrads<T>>,
        mut input: Option<&mut GradientField<T>>,
    ) {
        let d = self.dims;
        if let Some(g) = params.as_deref_mut() {
            self.head2.accumulate(&mut g.head2, &pass.hidden, dlogits);
        }
        let mut dhidden = vec![T::zero(); d.h3];
        self.head2.transpose_apply(dlogits, &mut dhidden);
        for (g, &h) in dhidden.iter_mut().zip(&pass.hidden) {
            if !(h > T::zero()) {
                *g = T::zero();
            }
        }
        if let Some(g) = params.as_deref_mut() {
            self.head1.accumulate(&mut g.head1, &pass.pooled, &dhidden);
        }
        let mut dpooled = vec![T::zero(); d.h2];
        self.head1.transpose_apply(&dhidden, &mut dpooled);

        // Route each live pooled channel to its maximizing point.
        let mut routes: Vec<(usize, usize)> = (0..d.h2)
            .filter(|&c| pass.pooled[c] > T::zero() && dpooled[c] != T::zero())
            .map(|c| (pass.argmax[c], c))
            .collect();
        routes.sort_unstable();

        let mut scratch = self.scratch();
        let mut dpre2 = vec![T::zero(); d.h2];
        let mut dh1 = vec![T::zero(); d.h1];
        let mut dxyz = [T::zero(); 3];
        let mut start = 0;
        while start < routes.len() {
            let point = routes[start].0;
            let end = start + routes[start..].iter().take_while(|r| r.0 == point).count();
            let p = &cloud.points()[point];
            self.point_features(p, &mut scratch);
            dpre2.iter_mut().for_each(|v| *v = T::zero());
            for &(_, c) in &routes[start..end] {
                dpre2[c] = dpooled[c];
            }
            if let Some(g) = params.as_deref_mut() {
                self.point2.accumulate(&mut g.point2, &scratch.h1, &dpre2);
            }
            self.point2.transpose_apply(&dpre2, &mut dh1);
            for (g, &h) in dh1.iter_mut().zip(&scratch.h1) {
                if !(h > T::zero()) {
                    *g = T::zero();
                }
            }
            if let Some(g) = params.as_deref_mut() {
                self.point1.accumulate(&mut g.point1, p, &dh1);
            }
            if let Some(field) = input.as_deref_mut() {
                self.point1.transpose_apply(&dh1, &mut dxyz);
                field.0[point] = dxyz;
            }
            start = end;
        }
    }

    /// Hinge loss and its exact gradient w.r.t. every input coordinate.
    pub fn loss_and_gradient(&self, cloud: &PointCloud<T>, label: usize, kappa: T) -> (T, GradientField<T>, ForwardPass<T>) {
        let pass = self.forward_pass(cloud);
        let loss = cw_loss(&pass.logits, label, kappa);
        let mut field = GradientField::zeros(cloud.len());
        if loss > T::zero() {
            let (_, other) = best_other(&pass.logits, label);
            let mut dlogits = vec![T::zero(); self.dims.classes];
            dlogits[label] = T::one();
            dlogits[other] = -T::one();
            self.backward(cloud, &pass, &dlogits, None, Some(&mut field));
        }
        (loss, field, pass)
    }

    pub fn input_gradient(&self, cloud: &PointCloud<T>, label: usize, kappa: T) -> GradientField<T> {
        self.loss_and_gradient(cloud, label, kappa).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{generate_shape, ShapeClass};

    fn model(seed: u64) -> Classifier<f64> {
        train::init_model(Dims::default(), seed)
    }

    #[test]
    fn cw_loss_examples() {
        assert_eq!(cw_loss(&[2.0, 5.0], 0, 0.0), 0.0);
        assert_eq!(cw_loss(&[5.0, 2.0], 0, 0.0), 3.0);
        assert_eq!(cw_loss(&[5.0, 4.5], 0, 1.0), 1.5);
        assert_eq!(cw_loss(&[1.0, 3.0, 2.0], 1, 0.0), 1.0);
    }

    #[test]
    #[should_panic]
    fn cw_loss_label_out_of_range() {
        cw_loss(&[1.0, 2.0], 2, 0.0);
    }

    #[test]
    fn forward_is_permutation_invariant() {
        let m = model(3);
        let c = generate_shape::<f64>(ShapeClass::Cone, 128, 4).unwrap();
        let mut order: Vec<usize> = (0..c.len()).rev().collect();
        order.rotate_left(17);
        let shuffled = c.permuted(&order).unwrap();
        assert_eq!(m.forward(&c), m.forward(&shuffled));
    }

    #[test]
    fn single_point_cloud() {
        let m = model(1);
        let c = PointCloud::new(vec![[0.1, -0.2, 0.3]], Some(0)).unwrap();
        let logits = m.forward(&c);
        assert_eq!(logits.len(), 6);
        assert!(logits.iter().all(|v| v.is_finite()));
        let g = m.input_gradient(&c, m.predict(&c), 0.5);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn gradient_zero_when_hinge_inactive() {
        let m = model(5);
        let c = generate_shape::<f64>(ShapeClass::Torus, 64, 2).unwrap();
        let logits = m.forward(&c);
        let pred = argmax(&logits);
        let wrong = (pred + 1) % logits.len();
        // Misclassified by a margin larger than kappa.
        let margin = logits[pred] - logits[wrong];
        let g = m.input_gradient(&c, wrong, 0.0);
        assert!(margin > 0.0);
        assert!(g.is_zero());
        assert_eq!(g.len(), 64);
    }

    #[test]
    fn hinge_kink_has_zero_gradient() {
        let m = model(6);
        let c = generate_shape::<f64>(ShapeClass::Sphere, 32, 9).unwrap();
        let logits = m.forward(&c);
        let pred = argmax(&logits);
        let (other, _) = best_other(&logits, pred);
        // kappa chosen so the hinge argument is exactly zero.
        let kappa = other - logits[pred];
        assert_eq!(logits[pred] - other + kappa, 0.0);
        let (loss, g, _) = m.loss_and_gradient(&c, pred, kappa);
        assert_eq!(loss, 0.0);
        assert!(g.is_zero());
    }

    #[test]
    fn relu_kink_has_zero_derivative() {
        // A single-channel network whose per-point pre-activation is exactly 0.
        let dims = Dims { h1: 1, h2: 1, h3: 1, classes: 2 };
        let mut m = Classifier::<f64>::zeros(dims, 0);
        m.point1.weight = vec![1.0, 0.0, 0.0];
        m.point1.bias = vec![-0.25];
        m.point2.weight = vec![1.0];
        m.point2.bias = vec![0.5];
        m.head1.weight = vec![1.0];
        m.head2.weight = vec![1.0, -1.0];
        m.head2.bias = vec![1.0, 0.0];
        let at_kink = PointCloud::new(vec![[0.25, 0.0, 0.0]], Some(0)).unwrap();
        let (loss, g, _) = m.loss_and_gradient(&at_kink, 0, 0.0);
        assert!(loss > 0.0);
        assert_eq!(g.0[0], [0.0; 3]);
        let above = PointCloud::new(vec![[0.5, 0.0, 0.0]], Some(0)).unwrap();
        let (_, g, _) = m.loss_and_gradient(&above, 0, 0.0);
        assert_eq!(g.0[0], [2.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_lowest_index() {
        let dims = Dims { h1: 1, h2: 1, h3: 1, classes: 2 };
        let mut m = Classifier::<f64>::zeros(dims, 0);
        m.point1.weight = vec![1.0, 0.0, 0.0];
        m.point2.weight = vec![1.0];
        m.head1.weight = vec![1.0];
        m.head2.weight = vec![1.0, -1.0];
        let c = PointCloud::new(vec![[0.1, 0.0, 0.0], [0.3, 0.0, 0.0], [0.3, 1.0, 0.0]], Some(0)).unwrap();
        let (_, g, pass) = m.loss_and_gradient(&c, 0, 0.0);
        assert_eq!(pass.argmax, vec![1]);
        assert_eq!(g.0[1], [2.0, 0.0, 0.0]);
        assert_eq!(g.0[2], [0.0; 3]);
    }

    #[test]
    fn forward_is_deterministic_and_castable() {
        let m = model(8);
        let c = generate_shape::<f64>(ShapeClass::Plane, 64, 1).unwrap();
        assert_eq!(m.forward(&c), m.forward(&c));
        let m32: Classifier<f32> = m.cast();
        let l32 = m32.forward(&c.cast::<f32>());
        for (a, b) in m.forward(&c).iter().zip(&l32) {
            assert!((a - *b as f64).abs() < 1e-3);
        }
    }
}
