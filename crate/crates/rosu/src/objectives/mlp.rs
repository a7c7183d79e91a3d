//! Small tanh MLP with softmax cross-entropy, manual backprop, and the seeded
//! Gaussian-blobs dataset used by the toy forgetting protocols.

use super::{check_dim, fd_hvp, Objective};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;

/// Feed-forward architecture: tanh on hidden layers, raw logits at the output.
/// Parameter layout per layer: row-major weight (out × in) followed by bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
}

impl MlpNetwork {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.len() > 4 {
            return Err(Error::Config(
                "network must have between 1 and 3 weight layers".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0 || s > 64) {
            return Err(Error::Config("layer widths must be in 1..=64".into()));
        }
        Ok(MlpNetwork { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_len(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|p| (p[0] + 1) * p[1])
            .sum()
    }

    /// Seeded small random initialization.
    pub fn init_params(&self, seed: u64) -> Vector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Vec::with_capacity(self.param_len());
        for pair in self.layer_sizes.windows(2) {
            let scale = 1.0 / (pair[0] as f64).sqrt();
            for _ in 0..pair[0] * pair[1] {
                w.push(rng.gen_range(-scale..scale));
            }
            w.extend(std::iter::repeat_n(0.0, pair[1]));
        }
        Vector::new(w).expect("finite init")
    }

    /// Activations per layer: index 0 is the input, hidden entries are
    /// post-tanh, the last entry holds the raw logits.
    pub fn forward(&self, w: &Vector, x: &[f64]) -> Vec<Vec<f64>> {
        let nl = self.num_layers();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
        acts.push(x.to_vec());
        let mut off = 0usize;
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let prev = acts.last().unwrap().clone();
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w.as_slice()[off + o * n_in..off + (o + 1) * n_in];
                let bias = w.as_slice()[off + n_in * n_out + o];
                z[o] = bias + row.iter().zip(&prev).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < nl {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(z);
            off += (n_in + 1) * n_out;
        }
        acts
    }

    pub fn logits(&self, w: &Vector, x: &[f64]) -> Vec<f64> {
        self.forward(w, x).pop().unwrap()
    }

    pub fn predict(&self, w: &Vector, x: &[f64]) -> usize {
        let logits = self.logits(w, x);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Mean softmax cross-entropy over the examples.
    pub fn ce_loss(&self, w: &Vector, examples: &[(Vector, usize)]) -> f64 {
        let mut total = 0.0;
        for (x, label) in examples {
            let logits = self.logits(w, x.as_slice());
            total += log_sum_exp(&logits) - logits[*label];
        }
        total / examples.len() as f64
    }

    /// Mean cross-entropy gradient over the examples via backprop.
    pub fn ce_grad(&self, w: &Vector, examples: &[(Vector, usize)]) -> Vector {
        let mut grad = vec![0.0; self.param_len()];
        for (x, label) in examples {
            let acts = self.forward(w, x.as_slice());
            let logits = acts.last().unwrap();
            let mut delta = softmax(logits);
            delta[*label] -= 1.0;
            self.backprop(w, &acts, delta, self.num_layers(), &mut grad);
        }
        let inv = 1.0 / examples.len() as f64;
        Vector::new(grad.into_iter().map(|g| g * inv).collect()).expect("finite grad")
    }

    /// Activation of layer `layer` (1-based; post-tanh for hidden layers,
    /// logits for the last layer).
    pub fn representation(&self, w: &Vector, x: &[f64], layer: usize) -> Vec<f64> {
        let acts = self.forward(w, x);
        acts[layer].clone()
    }

    /// Gradient of ½‖h_layer(x) + shift − target‖² w.r.t. the parameters of
    /// layers 1..=layer, accumulated into `grad`.
    pub fn rep_mse_grad_accum(
        &self,
        w: &Vector,
        x: &[f64],
        layer: usize,
        shift: &[f64],
        target: &[f64],
        grad: &mut [f64],
    ) -> f64 {
        let acts = self.forward(w, x);
        let h = &acts[layer];
        let mut delta: Vec<f64> = h
            .iter()
            .zip(shift)
            .zip(target)
            .map(|((a, s), t)| a + s - t)
            .collect();
        let loss = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();
        // chain through the tanh of the target layer when it is hidden
        if layer < self.num_layers() {
            for (d, a) in delta.iter_mut().zip(h) {
                *d *= 1.0 - a * a;
            }
        }
        self.backprop(w, &acts, delta, layer, grad);
        loss
    }

    /// Propagates `delta` = dLoss/dz_top down from layer `top` (1-based),
    /// accumulating parameter gradients into `grad`.
    fn backprop(
        &self,
        w: &Vector,
        acts: &[Vec<f64>],
        mut delta: Vec<f64>,
        top: usize,
        grad: &mut [f64],
    ) {
        let offsets: Vec<usize> = {
            let mut v = vec![0usize];
            for pair in self.layer_sizes.windows(2) {
                v.push(v.last().unwrap() + (pair[0] + 1) * pair[1]);
            }
            v
        };
        for l in (0..top).rev() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                for i in 0..n_in {
                    grad[off + o * n_in + i] += d * prev[i];
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let mut lower = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &w.as_slice()[off + o * n_in..off + (o + 1) * n_in];
                    for (i, wv) in row.iter().enumerate() {
                        lower[i] += wv * d;
                    }
                }
                // acts[l] is post-tanh for every layer below the logits
                for (v, a) in lower.iter_mut().zip(&acts[l]) {
                    *v *= 1.0 - a * a;
                }
                delta = lower;
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// A tanh MLP paired with a labeled dataset; the loss is mean softmax
/// cross-entropy over the dataset.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    net: MlpNetwork,
    dataset: Vec<(Vector, usize)>,
}

impl MlpObjective {
    pub fn new(net: MlpNetwork, dataset: Vec<(Vector, usize)>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n_in = net.layer_sizes()[0];
        let n_class = *net.layer_sizes().last().unwrap();
        for (x, label) in &dataset {
            check_dim(n_in, x.dim())?;
            if *label >= n_class {
                return Err(Error::Config(format!("label {label} out of range")));
            }
        }
        Ok(MlpObjective { net, dataset })
    }

    pub fn network(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn dataset(&self) -> &[(Vector, usize)] {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn loss_batch(&self, indices: &[usize], w: &Vector) -> Result<f64> {
        let batch = self.select(indices)?;
        Ok(self.net.ce_loss(w, &batch))
    }

    /// Gradient of the mean loss over the selected examples.
    pub fn grad_batch(&self, indices: &[usize], w: &Vector) -> Result<Vector> {
        check_dim(self.net.param_len(), w.dim())?;
        let batch = self.select(indices)?;
        Ok(self.net.ce_grad(w, &batch))
    }

    pub fn accuracy(&self, w: &Vector) -> f64 {
        let correct = self
            .dataset
            .iter()
            .filter(|(x, label)| self.net.predict(w, x.as_slice()) == *label)
            .count();
        100.0 * correct as f64 / self.dataset.len() as f64
    }

    fn select(&self, indices: &[usize]) -> Result<Vec<(Vector, usize)>> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        indices
            .iter()
            .map(|&i| {
                self.dataset
                    .get(i)
                    .cloned()
                    .ok_or(Error::Config(format!("batch index {i} out of range")))
            })
            .collect()
    }
}

impl Objective for MlpObjective {
    fn dim(&self) -> usize {
        self.net.param_len()
    }

    fn loss(&self, w: &Vector) -> Result<f64> {
        check_dim(self.dim(), w.dim())?;
        Ok(self.net.ce_loss(w, &self.dataset))
    }

    fn grad(&self, w: &Vector) -> Result<Vector> {
        let all: Vec<usize> = (0..self.dataset.len()).collect();
        self.grad_batch(&all, w)
    }

    fn hvp(&self, w: &Vector, xi: &Vector) -> Result<Vector> {
        fd_hvp(self, w, xi)
    }
}

/// Deterministic 2-D Gaussian blobs: `classes` clusters of `per_class` points.
pub fn blobs_dataset(seed: u64, classes: usize, per_class: usize, std: f64) -> Vec<(Vector, usize)> {
    let centers = [(2.0, 2.0), (-2.0, 2.0), (-2.0, -2.0), (2.0, -2.0)];
    assert!(classes <= centers.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    let mut data = Vec::with_capacity(classes * per_class);
    for (label, center) in centers.iter().take(classes).enumerate() {
        for _ in 0..per_class {
            let x = center.0 + normal.sample(&mut rng);
            let y = center.1 + normal.sample(&mut rng);
            data.push((Vector::new(vec![x, y]).unwrap(), label));
        }
    }
    data
}

/// Writes the dataset as CSV with columns x1, x2, label.
pub fn export_dataset_csv<W: Write>(data: &[(Vector, usize)], mut out: W) -> Result<()> {
    writeln!(out, "x1,x2,label")?;
    for (x, label) in data {
        writeln!(out, "{:.16e},{:.16e},{}", x[0], x[1], label)?;
    }
    Ok(())
}
