//! Fully connected network with rectifier hidden layers.
//!
//! Parameters live in one flat vector: for each layer, the `out x in`
//! row-major weight matrix followed by the `out` biases.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchCache {
    batch: usize,
    /// `activations[0]` is the input; `activations[l + 1]` the output of
    /// layer `l` (post-rectifier for hidden layers).
    activations: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `B x C` output logits.
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("cache has an output layer")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// He-uniform weights, zero biases. `sizes` = `[inputs, hidden.., outputs]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(
            sizes.len() >= 2 && sizes.iter().all(|&s| s > 0),
            "invalid layer sizes {sizes:?}"
        );
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: sizes.len(),
            });
        }
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[1] * w[0] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Logits for one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .forward_batch(input, 1)?
            .activations
            .pop()
            .expect("output layer"))
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<BatchCache> {
        if inputs.len() != batch * self.inputs() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.inputs(),
                actual: inputs.len(),
            });
        }
        let last = self.sizes.len() - 2;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(inputs.to_vec());
        for (layer, (offset, n_in, n_out)) in self.layers().enumerate() {
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let x = activations.last().expect("input present");
            let mut out = vec![0.0; batch * n_out];
            for b in 0..batch {
                let xb = &x[b * n_in..(b + 1) * n_in];
                for j in 0..n_out {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    let mut acc = bias[j];
                    for (w, xi) in row.iter().zip(xb) {
                        acc += w * xi;
                    }
                    out[b * n_out + j] = if layer < last { acc.max(0.0) } else { acc };
                }
            }
            activations.push(out);
        }
        Ok(BatchCache { batch, activations })
    }

    /// Parameter gradient for one input given `upstream = dLoss/dlogits`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_batch(input, 1)?;
        let mut grad = vec![0.0; self.num_params()];
        self.backward_batch(&cache, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates the parameter gradient of a batch into `grad`.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let batch = cache.batch;
        if cache.activations.len() != self.sizes.len()
            || cache
                .activations
                .iter()
                .zip(&self.sizes)
                .any(|(a, &s)| a.len() != batch * s)
        {
            return Err(Error::DimensionMismatch {
                expected: self.sizes.len(),
                actual: cache.activations.len(),
            });
        }
        if upstream.len() != batch * self.outputs() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.outputs(),
                actual: upstream.len(),
            });
        }
        if grad.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: grad.len(),
            });
        }
        let layers: Vec<_> = self.layers().collect();
        let mut delta = upstream.to_vec();
        for (layer, &(offset, n_in, n_out)) in layers.iter().enumerate().rev() {
            let x = &cache.activations[layer];
            let (w_grad, rest) =
                grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for b in 0..batch {
                let xb = &x[b * n_in..(b + 1) * n_in];
                for j in 0..n_out {
                    let d = delta[b * n_out + j];
                    if d == 0.0 {
                        continue;
                    }
                    rest[j] += d;
                    for (g, xi) in w_grad[j * n_in..(j + 1) * n_in].iter_mut().zip(xb) {
                        *g += d * xi;
                    }
                }
            }
            if layer == 0 {
                break;
            }
            let weights = &self.params[offset..offset + n_in * n_out];
            let mut prev = vec![0.0; batch * n_in];
            for b in 0..batch {
                let pb = &mut prev[b * n_in..(b + 1) * n_in];
                for j in 0..n_out {
                    let d = delta[b * n_out + j];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in pb.iter_mut().zip(&weights[j * n_in..(j + 1) * n_in]) {
                        *p += d * w;
                    }
                }
                // Rectifier derivative: active where the stored output is positive.
                for (p, &a) in pb.iter_mut().zip(&x[b * n_in..(b + 1) * n_in]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(())
    }
}
