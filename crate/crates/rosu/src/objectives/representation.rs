//! Representation-level objectives: mean-squared distance between current and
//! frozen-reference layer activations, restricted to a trainable coordinate
//! subset. The forget variant adds a caller-supplied bootstrap noise shift.

use super::{check_dim, fd_hvp, MlpNetwork, Objective};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct RepresentationObjective {
    net: MlpNetwork,
    reference_params: Vector,
    trainable: Vec<usize>,
    target_layer: usize,
    noise_std: f64,
    probe_inputs: Vec<Vector>,
    /// Shared per-evaluation shift in representation space (the bootstrap
    /// noise for the forget loss; all zeros for the retain loss).
    noise: Vec<f64>,
}

impl RepresentationObjective {
    pub fn new(
        net: MlpNetwork,
        reference_params: Vector,
        mut trainable: Vec<usize>,
        target_layer: usize,
        noise_std: f64,
        probe_inputs: Vec<Vector>,
    ) -> Result<Self> {
        check_dim(net.param_len(), reference_params.dim())?;
        if target_layer == 0 || target_layer > net.num_layers() {
            return Err(Error::Config(format!(
                "target layer {target_layer} out of range"
            )));
        }
        if probe_inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        trainable.sort_unstable();
        trainable.dedup();
        if trainable.is_empty() || *trainable.last().unwrap() >= net.param_len() {
            return Err(Error::Config("trainable index set invalid".into()));
        }
        if noise_std < 0.0 {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        let width = net.layer_sizes()[target_layer];
        Ok(RepresentationObjective {
            net,
            reference_params,
            trainable,
            target_layer,
            noise_std,
            probe_inputs,
            noise: vec![0.0; width],
        })
    }

    pub fn trainable(&self) -> &[usize] {
        &self.trainable
    }

    pub fn reference_params(&self) -> &Vector {
        &self.reference_params
    }

    pub fn target_layer(&self) -> usize {
        self.target_layer
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Draws the shared bootstrap shift from N(0, σ_b² I). The generator is
    /// caller-owned so evaluation stays deterministic.
    pub fn resample_noise<R: rand::Rng>(&mut self, rng: &mut R) {
        if self.noise_std == 0.0 {
            self.noise.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let normal = Normal::new(0.0, self.noise_std).unwrap();
        for v in self.noise.iter_mut() {
            *v = normal.sample(rng);
        }
    }

    /// Inserts the trainable coordinates of `w` into the frozen reference.
    fn effective_params(&self, w: &Vector) -> Vector {
        let mut full = self.reference_params.clone();
        for &i in &self.trainable {
            full[i] = w[i];
        }
        full
    }

    /// Embeds a |Θ|-length trainable vector into the full parameter space.
    pub fn embed(&self, theta: &Vector) -> Result<Vector> {
        check_dim(self.trainable.len(), theta.dim())?;
        let mut full = self.reference_params.clone();
        for (k, &i) in self.trainable.iter().enumerate() {
            full[i] = theta[k];
        }
        Ok(full)
    }

    /// Extracts the trainable coordinates from a full parameter vector.
    pub fn extract(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.net.param_len(), w.dim())?;
        Vector::new(self.trainable.iter().map(|&i| w[i]).collect())
    }
}

impl Objective for RepresentationObjective {
    fn dim(&self) -> usize {
        self.net.param_len()
    }

    fn loss(&self, w: &Vector) -> Result<f64> {
        check_dim(self.dim(), w.dim())?;
        let eff = self.effective_params(w);
        let mut total = 0.0;
        for x in &self.probe_inputs {
            let h = self.net.representation(&eff, x.as_slice(), self.target_layer);
            let t = self
                .net
                .representation(&self.reference_params, x.as_slice(), self.target_layer);
            total += 0.5
                * h.iter()
                    .zip(&self.noise)
                    .zip(&t)
                    .map(|((a, s), b)| (a + s - b) * (a + s - b))
                    .sum::<f64>();
        }
        Ok(total / self.probe_inputs.len() as f64)
    }

    fn grad(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.dim(), w.dim())?;
        let eff = self.effective_params(w);
        let mut grad = vec![0.0; self.dim()];
        for x in &self.probe_inputs {
            let t = self
                .net
                .representation(&self.reference_params, x.as_slice(), self.target_layer);
            self.net.rep_mse_grad_accum(
                &eff,
                x.as_slice(),
                self.target_layer,
                &self.noise,
                &t,
                &mut grad,
            );
        }
        let inv = 1.0 / self.probe_inputs.len() as f64;
        // restrict updates to the trainable coordinate set
        let mut masked = vec![0.0; self.dim()];
        for &i in &self.trainable {
            masked[i] = grad[i] * inv;
        }
        Vector::new(masked)
    }

    fn hvp(&self, w: &Vector, xi: &Vector) -> Result<Vector> {
        fd_hvp(self, w, xi)
    }
}
