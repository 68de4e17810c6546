//! Diagonal-Gaussian policy over a one-hidden-layer tanh network.
//!
//! `mean = tanh(W2 · tanh(W1 · x + b1) + b2)`, `std = exp(log_std)` with a
//! state-independent, clamped `log_std`. Sampling clips the draw to the
//! action box; densities are evaluated at the raw (pre-clip) draw.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{Action, Controller};
use crate::error::{PapoError, Result};
use crate::rng::StreamRng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Network weights. Matrices are row-major: `w1` is `hidden x input`,
/// `w2` is `action x hidden`. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    input_dim: usize,
    hidden: usize,
    action_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Intermediate activations kept for back-propagation.
struct Forward {
    hidden: Vec<f64>,
    mean: Vec<f64>,
}

impl PolicyParams {
    /// Input width for a window of `history` observations plus the goal embedding.
    pub fn input_dim_for(obs_dim: usize, embedding_dim: usize, history: usize) -> usize {
        history.max(1) * obs_dim + embedding_dim
    }

    pub fn zeros(input_dim: usize, hidden: usize, action_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            action_dim,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; action_dim * hidden],
            b2: vec![0.0; action_dim],
            log_std: vec![0.0; action_dim],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, constant `log_std`.
    pub fn init(input_dim: usize, hidden: usize, action_dim: usize, log_std_init: f64, rng: &mut StreamRng) -> Self {
        let mut p = Self::zeros(input_dim, hidden, action_dim);
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-s1..=s1));
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-s2..=s2));
        p.log_std.fill(log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Zero-valued container with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden, self.action_dim)
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.log_std]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.log_std,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.hidden == other.hidden && self.action_dim == other.action_dim
    }

    /// Flattened view in `w1, b1, w2, b2, log_std` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn from_flat(like: &Self, flat: &[f64]) -> Result<Self> {
        if flat.len() != like.num_params() {
            return Err(PapoError::Contract(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                like.num_params()
            )));
        }
        let mut p = like.zeros_like();
        let mut offset = 0;
        for t in p.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Re-imposes the `log_std` bounds.
    pub fn clamp_log_std(&mut self) {
        self.log_std
            .iter_mut()
            .for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(PapoError::Contract(format!(
                "policy input has dimension {}, expected {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn std(&self) -> Vec<f64> {
        self.log_std
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect()
    }

    fn run(&self, x: &[f64]) -> Forward {
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j];
                z.tanh()
            })
            .collect();
        let mean = (0..self.action_dim)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                let z: f64 = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[k];
                z.tanh()
            })
            .collect();
        Forward { hidden, mean }
    }

    /// Distribution head: per-dimension mean and standard deviation.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        Ok((self.run(x).mean, self.std()))
    }

    /// Draws `clip(mean + std * xi)`; also returns the raw draw.
    pub fn sample(&self, x: &[f64], rng: &mut StreamRng) -> Result<(Action, Vec<f64>)> {
        let (mean, std) = self.forward(x)?;
        let raw: Vec<f64> = mean
            .iter()
            .zip(&std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok((Action::clipped(raw.clone()), raw))
    }

    /// Diagonal-Gaussian log density at `raw`.
    pub fn log_prob(&self, x: &[f64], raw: &[f64]) -> Result<f64> {
        if raw.len() != self.action_dim {
            return Err(PapoError::Contract(format!(
                "action has dimension {}, expected {}",
                raw.len(),
                self.action_dim
            )));
        }
        let (mean, _) = self.forward(x)?;
        Ok(gaussian_log_density(&mean, &self.log_std, raw))
    }

    /// Differential entropy of the action distribution (state independent).
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX) + HALF_LOG_2PI + 0.5)
            .sum()
    }

    /// Closed-form `KL(self || reference)` at input `x`.
    pub fn kl_to(&self, reference: &PolicySnapshot, x: &[f64]) -> Result<f64> {
        let r = reference.params();
        if !self.same_shape(r) {
            return Err(PapoError::Contract("policy and reference shapes differ".into()));
        }
        let (m, _) = self.forward(x)?;
        let (mr, _) = r.forward(x)?;
        Ok(gaussian_kl(&m, &self.log_std, &mr, &r.log_std))
    }

    /// Back-propagates `dL/dmean` and `dL/dlog_std` at input `x` into `grad`.
    fn backprop(&self, x: &[f64], fwd: &Forward, dmean: &[f64], dlog_std: &[f64], grad: &mut Self) {
        for (k, &dl) in dlog_std.iter().enumerate() {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&self.log_std[k]) {
                grad.log_std[k] += dl;
            }
        }
        let dz2: Vec<f64> = dmean.iter().zip(&fwd.mean).map(|(d, m)| d * (1.0 - m * m)).collect();
        let mut dh = vec![0.0; self.hidden];
        for (k, &d) in dz2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.b2[k] += d;
            let row = k * self.hidden;
            for j in 0..self.hidden {
                grad.w2[row + j] += d * fwd.hidden[j];
                dh[j] += d * self.w2[row + j];
            }
        }
        for j in 0..self.hidden {
            let h = fwd.hidden[j];
            let d = dh[j] * (1.0 - h * h);
            if d == 0.0 {
                continue;
            }
            grad.b1[j] += d;
            let row = j * self.input_dim;
            for (i, xi) in x.iter().enumerate() {
                grad.w1[row + i] += d * xi;
            }
        }
    }

    /// Adds `coef * d log pi(raw | x) / d theta` into `grad`.
    pub fn accumulate_log_prob_grad(&self, x: &[f64], raw: &[f64], coef: f64, grad: &mut Self) -> Result<()> {
        self.check_input(x)?;
        let fwd = self.run(x);
        let std = self.std();
        let mut dmean = vec![0.0; self.action_dim];
        let mut dlog = vec![0.0; self.action_dim];
        for k in 0..self.action_dim {
            let z = (raw[k] - fwd.mean[k]) / std[k];
            dmean[k] = coef * z / std[k];
            dlog[k] = coef * (z * z - 1.0);
        }
        self.backprop(x, &fwd, &dmean, &dlog, grad);
        Ok(())
    }

    /// Adds `coef * d KL(self || reference)(x) / d theta` into `grad`.
    pub fn accumulate_kl_grad(&self, reference: &PolicySnapshot, x: &[f64], coef: f64, grad: &mut Self) -> Result<()> {
        let r = reference.params();
        self.check_input(x)?;
        let fwd = self.run(x);
        let mr = r.run(x).mean;
        let std = self.std();
        let std_r = r.std();
        let mut dmean = vec![0.0; self.action_dim];
        let mut dlog = vec![0.0; self.action_dim];
        for k in 0..self.action_dim {
            let vr = std_r[k] * std_r[k];
            dmean[k] = coef * (fwd.mean[k] - mr[k]) / vr;
            dlog[k] = coef * (std[k] * std[k] / vr - 1.0);
        }
        self.backprop(x, &fwd, &dmean, &dlog, grad);
        Ok(())
    }

    /// Gradient of `sum_b coef_b * log pi(raw_b | x_b)`.
    pub fn grad_surrogate(&self, batch: &[SurrogateSample<'_>]) -> Result<Self> {
        let mut grad = self.zeros_like();
        for (i, s) in batch.iter().enumerate() {
            if !s.coefficient.is_finite() {
                return Err(PapoError::NonFinite(format!(
                    "coefficient of sample {i} is {}",
                    s.coefficient
                )));
            }
            let lp = self.log_prob(s.window, s.raw)?;
            if !lp.is_finite() {
                return Err(PapoError::NonFinite(format!("log-probability of sample {i} is {lp}")));
            }
            self.accumulate_log_prob_grad(s.window, s.raw, s.coefficient, &mut grad)?;
        }
        Ok(grad)
    }

    /// Value of `sum_b coef_b * log pi(raw_b | x_b)`, the loss `grad_surrogate` differentiates.
    pub fn surrogate_value(&self, batch: &[SurrogateSample<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            total += s.coefficient * self.log_prob(s.window, s.raw)?;
        }
        Ok(total)
    }

    /// Log-density at `raw` and, when a reference is given, the KL to it,
    /// sharing one forward pass. Feed the result to [`Self::accumulate_evaluated`].
    pub fn evaluate(&self, x: &[f64], raw: &[f64], reference: Option<&PolicySnapshot>) -> Result<Evaluation> {
        self.check_input(x)?;
        if raw.len() != self.action_dim {
            return Err(PapoError::Contract(format!(
                "action has dimension {}, expected {}",
                raw.len(),
                self.action_dim
            )));
        }
        let fwd = self.run(x);
        let log_prob = gaussian_log_density(&fwd.mean, &self.log_std, raw);
        let (kl, ref_mean) = match reference {
            Some(r) => {
                let mr = r.params().run(x).mean;
                (gaussian_kl(&fwd.mean, &self.log_std, &mr, &r.params().log_std), mr)
            }
            None => (0.0, Vec::new()),
        };
        Ok(Evaluation {
            fwd,
            log_prob,
            kl,
            ref_mean,
        })
    }

    /// Adds `lp_coef * d log pi / d theta + kl_coef * d KL / d theta` for an
    /// evaluated sample. `kl_coef` is ignored when the evaluation had no reference.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_evaluated(
        &self,
        x: &[f64],
        raw: &[f64],
        eval: &Evaluation,
        lp_coef: f64,
        kl_coef: f64,
        reference: Option<&PolicySnapshot>,
        grad: &mut Self,
    ) {
        let std = self.std();
        let mut dmean = vec![0.0; self.action_dim];
        let mut dlog = vec![0.0; self.action_dim];
        for k in 0..self.action_dim {
            let z = (raw[k] - eval.fwd.mean[k]) / std[k];
            dmean[k] = lp_coef * z / std[k];
            dlog[k] = lp_coef * (z * z - 1.0);
        }
        if let (Some(r), false) = (reference, eval.ref_mean.is_empty()) {
            let std_r = r.params().std();
            for k in 0..self.action_dim {
                let vr = std_r[k] * std_r[k];
                dmean[k] += kl_coef * (eval.fwd.mean[k] - eval.ref_mean[k]) / vr;
                dlog[k] += kl_coef * (std[k] * std[k] / vr - 1.0);
            }
        }
        self.backprop(x, &eval.fwd, &dmean, &dlog, grad);
    }

    /// Acting view usable as a rollout controller.
    pub fn actor(&self, mode: ActionMode) -> PolicyActor<'_> {
        PolicyActor { params: self, mode }
    }
}

/// Cached forward pass for one `(window, action)` sample.
pub struct Evaluation {
    fwd: Forward,
    pub log_prob: f64,
    pub kl: f64,
    ref_mean: Vec<f64>,
}

/// One term of the weighted log-likelihood surrogate.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateSample<'a> {
    pub window: &'a [f64],
    pub raw: &'a [f64],
    pub coefficient: f64,
}

pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, l), v)| {
            let l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (v - m) / l.exp();
            -0.5 * z * z - l - HALF_LOG_2PI
        })
        .sum()
}

/// `KL(N(m, e^l) || N(mr, e^lr))` summed over independent dimensions.
pub fn gaussian_kl(m: &[f64], l: &[f64], mr: &[f64], lr: &[f64]) -> f64 {
    (0..m.len())
        .map(|k| {
            let l = l[k].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let lr = lr[k].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let var_ratio = (2.0 * (l - lr)).exp();
            let d = (m[k] - mr[k]) / lr.exp();
            lr - l + 0.5 * (var_ratio + d * d) - 0.5
        })
        .sum::<f64>()
        .max(0.0)
}

/// Frozen copy of a parameter set (old or reference policy).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    params: PolicyParams,
}

impl PolicySnapshot {
    pub fn of(params: &PolicyParams) -> Self {
        Self { params: params.clone() }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    /// Always act with the mean.
    Deterministic,
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyActor<'a> {
    params: &'a PolicyParams,
    mode: ActionMode,
}

impl Controller for PolicyActor<'_> {
    fn act_raw(&self, window: &[f64], rng: &mut StreamRng) -> (Action, Vec<f64>) {
        // Windows are built by the rollout code with the declared width.
        match self.mode {
            ActionMode::Stochastic => self.params.sample(window, rng).expect("window width"),
            ActionMode::Deterministic => {
                let (mean, _) = self.params.forward(window).expect("window width");
                (Action::clipped(mean.clone()), mean)
            }
        }
    }
}
