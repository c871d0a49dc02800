use super::real::{Dtype, Real};
use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One fully-connected layer. `weight` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl<T: Real> Layer<T> {
    pub fn new(
        weight: Vec<T>,
        bias: Vec<T>,
        inputs: usize,
        activation: Activation,
    ) -> Result<Self> {
        let outputs = bias.len();
        if weight.len() != outputs * inputs {
            return Err(Error::DimensionMismatch {
                context: "layer weight",
                expected: outputs * inputs,
                got: weight.len(),
            });
        }
        Ok(Layer {
            weight,
            bias,
            inputs,
            outputs,
            activation,
        })
    }

    /// Zero bias; weights uniform in ±sqrt(6 / in) for relu layers (keeps
    /// activation energy constant with depth) and ±sqrt(6 / (in + out)) otherwise.
    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let fan = match activation {
            Activation::Relu => inputs,
            _ => inputs + outputs,
        };
        let limit = (6.0 / fan as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| T::of_f64(rng.gen_range(-limit..limit)))
            .collect();
        Layer {
            weight,
            bias: vec![T::zero(); outputs],
            inputs,
            outputs,
            activation,
        }
    }
}

/// Stack of fully-connected layers whose final layer is linear.
#[derive(Debug, Clone)]
pub struct DenseNet<T> {
    layers: Vec<Layer<T>>,
    /// Bumped on every parameter mutation so stale forward caches are caught.
    generation: u64,
}

impl<T: PartialEq> PartialEq for DenseNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer intermediate values from a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    generation: u64,
    batch: usize,
    dims: Vec<(usize, usize)>,
    /// Input to each layer (`batch × inputs`).
    inputs: Vec<Vec<T>>,
    /// Pre-activation of each layer (`batch × outputs`).
    pre: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn pre_activation(&self, layer: usize) -> &[T] {
        &self.pre[layer]
    }

    /// Post-activation output of `layer`.
    pub fn activation(&self, layer: usize) -> Vec<T> {
        match self.inputs.get(layer + 1) {
            Some(next) => next.clone(),
            None => self.pre[layer].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients, shape-congruent with the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![T::zero(); l.weight.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers.iter().position(|l| {
            l.weight
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
        })
    }

    pub(crate) fn congruent(&self, net: &DenseNet<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weight.len() == l.weight.len() && g.bias.len() == l.bias.len()
            })
    }
}

impl<T: Real> DenseNet<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    context: "layer chain",
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::DimensionMismatch {
                    context: "layer parameters",
                    expected: l.inputs * l.outputs,
                    got: l.weight.len(),
                });
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Linear) {
            return Err(Error::InvalidConfig("final layer must be linear".into()));
        }
        Ok(DenseNet {
            layers,
            generation: 0,
        })
    }

    /// Randomly initialized net with layer widths `sizes[0] → … → sizes[n]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output size");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Linear } else { hidden };
                Layer::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        DenseNet {
            layers,
            generation: 0,
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access to one layer; invalidates outstanding forward caches.
    pub fn layer_mut(&mut self, index: usize) -> &mut Layer<T> {
        self.generation += 1;
        &mut self.layers[index]
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> DenseNet<U> {
        DenseNet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                    inputs: l.inputs,
                    outputs: l.outputs,
                    activation: l.activation,
                })
                .collect(),
            generation: 0,
        }
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.forward_batch(input, 1)
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<(Vec<T>, ForwardCache<T>)> {
        let in_dim = self.input_dim();
        if inputs.len() != batch * in_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: batch * in_dim,
                got: inputs.len(),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = inputs.to_vec();
        for layer in &self.layers {
            let z = affine(layer, &x, batch);
            let a = match layer.activation {
                Activation::Linear => z.clone(),
                Activation::Relu => z.iter().map(|&v| relu(v)).collect(),
            };
            layer_inputs.push(x);
            pre.push(z);
            x = a;
        }
        let cache = ForwardCache {
            generation: self.generation,
            batch,
            dims: self.layers.iter().map(|l| (l.inputs, l.outputs)).collect(),
            inputs: layer_inputs,
            pre,
        };
        Ok((x, cache))
    }

    /// Forward pass without retaining intermediates.
    pub fn predict_batch(&self, inputs: &[T], batch: usize) -> Result<Vec<T>> {
        self.activations_upto(inputs, batch, self.layers.len() - 1)
    }

    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.predict_batch(input, 1)
    }

    /// Post-activation output of layer `last` (0-based).
    pub fn activations_upto(&self, inputs: &[T], batch: usize, last: usize) -> Result<Vec<T>> {
        let in_dim = self.input_dim();
        if inputs.len() != batch * in_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: batch * in_dim,
                got: inputs.len(),
            });
        }
        let mut x = inputs.to_vec();
        for layer in &self.layers[..=last] {
            let mut z = affine(layer, &x, batch);
            if layer.activation == Activation::Relu {
                z.iter_mut().for_each(|v| *v = relu(*v));
            }
            x = z;
        }
        Ok(x)
    }

    /// Gradients of a loss w.r.t. every parameter, summed over the batch.
    /// `loss_grad` is ∂loss/∂output, `batch × output_dim`.
    pub fn backward(&self, cache: &ForwardCache<T>, loss_grad: &[T]) -> Result<Gradients<T>> {
        self.backward_impl(cache, loss_grad, false).map(|(g, _)| g)
    }

    /// Like [`backward`](Self::backward) but also returns ∂loss/∂input.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        loss_grad: &[T],
    ) -> Result<(Gradients<T>, Vec<T>)> {
        self.backward_impl(cache, loss_grad, true)
            .map(|(g, dx)| (g, dx.unwrap_or_default()))
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        loss_grad: &[T],
        want_input: bool,
    ) -> Result<(Gradients<T>, Option<Vec<T>>)> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache("parameters changed since forward"));
        }
        let same_shape = cache.dims.len() == self.layers.len()
            && cache
                .dims
                .iter()
                .zip(&self.layers)
                .all(|(&(i, o), l)| i == l.inputs && o == l.outputs);
        if !same_shape {
            return Err(Error::StaleCache("layer shapes differ"));
        }
        let batch = cache.batch;
        if loss_grad.len() != batch * self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "loss gradient",
                expected: batch * self.output_dim(),
                got: loss_grad.len(),
            });
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = loss_grad.to_vec();
        let mut input_grad = None;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let mut dz = upstream;
            if layer.activation == Activation::Relu {
                for (g, &z) in dz.iter_mut().zip(&cache.pre[idx]) {
                    if z <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            let x = &cache.inputs[idx];

            // dW = dZᵀ · X   (out × batch)(batch × in)
            let mut dw = vec![T::zero(); n_out * n_in];
            T::gemm(
                n_out,
                batch,
                n_in,
                T::one(),
                &dz,
                (1, n_out),
                x,
                (n_in, 1),
                T::zero(),
                &mut dw,
                (n_in, 1),
            );
            let mut db = vec![T::zero(); n_out];
            for row in dz.chunks_exact(n_out) {
                for (b, &g) in db.iter_mut().zip(row) {
                    *b += g;
                }
            }

            if idx > 0 || want_input {
                // dX = dZ · W   (batch × out)(out × in)
                let mut dx = vec![T::zero(); batch * n_in];
                T::gemm(
                    batch,
                    n_out,
                    n_in,
                    T::one(),
                    &dz,
                    (n_out, 1),
                    &layer.weight,
                    (n_in, 1),
                    T::zero(),
                    &mut dx,
                    (n_in, 1),
                );
                if idx == 0 {
                    input_grad = Some(dx.clone());
                }
                upstream = dx;
            } else {
                upstream = Vec::new();
            }
            grads.push(LayerGrad {
                weight: dw,
                bias: db,
            });
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, input_grad))
    }

    /// Applies `f(param, grad)` to every parameter; used by optimizers.
    pub(crate) fn update_params(
        &mut self,
        grads: &Gradients<T>,
        mut f: impl FnMut(usize, usize, &mut T, T),
    ) {
        self.generation += 1;
        let mut slot = 0;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (i, (w, &gw)) in layer.weight.iter_mut().zip(&g.weight).enumerate() {
                f(slot, i, w, gw);
            }
            slot += 1;
            for (i, (b, &gb)) in layer.bias.iter_mut().zip(&g.bias).enumerate() {
                f(slot, i, b, gb);
            }
            slot += 1;
        }
    }

    /// Flat list of parameter tensors: weight, bias per layer.
    pub(crate) fn param_slots(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }
}

#[inline]
fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Z = X · Wᵀ + b for a row-major batch.
fn affine<T: Real>(layer: &Layer<T>, x: &[T], batch: usize) -> Vec<T> {
    let (n_in, n_out) = (layer.inputs, layer.outputs);
    if batch == 1 {
        // gemm would repack the whole weight matrix for a single row
        return layer
            .weight
            .chunks_exact(n_in)
            .zip(&layer.bias)
            .map(|(w, &b)| b + dot(w, x))
            .collect();
    }
    let mut z = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        z.extend_from_slice(&layer.bias);
    }
    T::gemm(
        batch,
        n_in,
        n_out,
        T::one(),
        x,
        (n_in, 1),
        &layer.weight,
        (1, n_in),
        T::one(),
        &mut z,
        (n_out, 1),
    );
    z
}

/// Dot product with eight independent accumulators so it vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
