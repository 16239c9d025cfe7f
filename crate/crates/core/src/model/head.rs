//! MLP projection head over mean-pooled decoder states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRepresentation {
    pub vector: Vec<f64>,
}

/// Dense layers with `tanh` between them (none after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    dims: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Post-activation output of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

impl ProjectionHead {
    /// Random head with layer widths `dims` (at least input and output).
    pub fn new(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "a head needs an input and an output width");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in dims.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..=bound)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Self {
            dims: dims.to_vec(),
            params,
        }
    }

    /// Single identity layer.
    pub fn identity(dim: usize) -> Self {
        let mut params = vec![0.0; dim * dim + dim];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        Self {
            dims: vec![dim, dim],
            params,
        }
    }

    /// Single all-zero layer.
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            dims: vec![input, output],
            params: vec![0.0; input * output + output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.dims.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, HeadCache), ModelError> {
        if input.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        let layers = self.dims.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut hidden = Vec::with_capacity(layers.saturating_sub(1));
        let mut x = input.to_vec();
        for (li, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let mut y = self.params[off + n_in * n_out..off + n_in * n_out + n_out].to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &self.params[off + o * n_in..off + (o + 1) * n_in];
                *yo += row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
            }
            inputs.push(std::mem::take(&mut x));
            if li + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
                hidden.push(y.clone());
            }
            x = y;
        }
        Ok((x, HeadCache { inputs, hidden }))
    }

    /// Accumulate parameter gradients and return the gradient with respect to the input.
    pub fn backward(&self, cache: &HeadCache, grad_output: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let offsets: Vec<_> = self.layer_offsets().collect();
        let mut g = grad_output.to_vec();
        for (li, &(off, n_in, n_out)) in offsets.iter().enumerate().rev() {
            if li + 1 < offsets.len() {
                // through tanh of this layer's output
                for (gv, h) in g.iter_mut().zip(&cache.hidden[li]) {
                    *gv *= 1.0 - h * h;
                }
            }
            let x = &cache.inputs[li];
            let mut gx = vec![0.0; n_in];
            for o in 0..n_out {
                let go = g[o];
                grads[off + n_in * n_out + o] += go;
                for k in 0..n_in {
                    grads[off + o * n_in + k] += go * x[k];
                    gx[k] += go * self.params[off + o * n_in + k];
                }
            }
            g = gx;
        }
        g
    }
}

/// Unweighted mean over all token states.
pub fn mean_pool(states: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    let first = states.first().ok_or(ModelError::EmptySummary)?;
    let mut pooled = vec![0.0; first.len()];
    for s in states {
        if s.len() != pooled.len() {
            return Err(ModelError::DimensionMismatch {
                expected: pooled.len(),
                found: s.len(),
            });
        }
        for (p, v) in pooled.iter_mut().zip(s) {
            *p += v;
        }
    }
    let n = states.len() as f64;
    pooled.iter_mut().for_each(|p| *p /= n);
    Ok(pooled)
}

pub fn mean_pool_backward(grad_pooled: &[f64], count: usize) -> Vec<Vec<f64>> {
    let share: Vec<f64> = grad_pooled.iter().map(|g| g / count as f64).collect();
    vec![share; count]
}

/// Apply the head to a pooled vector.
pub fn project(head: &ProjectionHead, pooled: &[f64]) -> Result<SummaryRepresentation, ModelError> {
    let (vector, _) = head.forward(pooled)?;
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Backend("projection produced a non-finite value".into()));
    }
    Ok(SummaryRepresentation { vector })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_zero_heads() {
        let x = [0.3, -1.2, 2.0];
        assert_eq!(project(&ProjectionHead::identity(3), &x).unwrap().vector, x.to_vec());
        assert_eq!(project(&ProjectionHead::zeros(3, 2), &x).unwrap().vector, vec![0.0, 0.0]);
    }

    #[test]
    fn mean_pooling_then_head() {
        let pooled = mean_pool(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(pooled, vec![2.0, 3.0]);
        let head = ProjectionHead::new(&[2, 5, 3], 1);
        assert_eq!(project(&head, &pooled).unwrap(), project(&head, &[2.0, 3.0]).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let head = ProjectionHead::new(&[4, 8, 2], 0);
        assert!(matches!(project(&head, &[1.0, 2.0]), Err(ModelError::DimensionMismatch { expected: 4, found: 2 })));
        assert!(mean_pool(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(mean_pool(&[]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut head = ProjectionHead::new(&[3, 4, 2], 9);
        let x = vec![0.4, -0.7, 1.1];
        let w = [0.8, -1.3];
        let f = |h: &ProjectionHead, x: &[f64]| h.forward(x).unwrap().0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = head.forward(&x).unwrap();
        let mut grads = vec![0.0; head.params().len()];
        let gx = head.backward(&cache, &w, &mut grads);
        let h = 1e-6;
        for i in 0..head.params().len() {
            let orig = head.params[i];
            head.params[i] = orig + h;
            let up = f(&head, &x);
            head.params[i] = orig - h;
            let down = f(&head, &x);
            head.params[i] = orig;
            assert!(((up - down) / (2.0 * h) - grads[i]).abs() < 1e-7);
        }
        for k in 0..3 {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            assert!(((f(&head, &xp) - f(&head, &xm)) / (2.0 * h) - gx[k]).abs() < 1e-7);
        }
    }
}
