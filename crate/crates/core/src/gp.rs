//! Gaussian-process regression with a rational quadratic kernel.
//!
//! Targets are standardized internally (zero mean, unit variance), so the
//! signal variance is fixed at 1 and only (γ, l, σ_n²) are fitted, by
//! maximizing the log marginal likelihood with multi-start Nelder–Mead in
//! log space.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::optim::nelder_mead;

/// Minimum diagonal jitter used while fitting.
pub const JITTER_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid hyperparameter: {0}")]
    Parameter(String),
    #[error("not enough training points ({0})")]
    TooFewPoints(usize),
    #[error("training data: {0}")]
    Data(String),
    #[error("covariance factorization failed (jitter {jitter:e})")]
    Factorization { jitter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub gamma: f64,
    pub length: f64,
    /// σ_n², added to the Gram diagonal (in standardized target units).
    pub noise: f64,
}

impl Hyper {
    fn check(&self) -> Result<(), GpError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(GpError::Parameter(format!("gamma = {}", self.gamma)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(GpError::Parameter(format!("length = {}", self.length)));
        }
        if !(self.noise >= 0.0) {
            return Err(GpError::Parameter(format!("noise = {}", self.noise)));
        }
        Ok(())
    }
}

/// Box for the hyperparameter search, each as (lower, upper).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperBox {
    pub gamma: (f64, f64),
    pub length: (f64, f64),
    pub noise: (f64, f64),
}

impl Default for HyperBox {
    fn default() -> Self {
        HyperBox {
            gamma: (0.1, 1e3),
            length: (1e-2, 10.0),
            noise: (JITTER_FLOOR, 1e-1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    pub starts: usize,
    pub max_evals: usize,
    pub bounds: HyperBox,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            starts: 4,
            max_evals: 300,
            bounds: HyperBox::default(),
        }
    }
}

/// k = [1 + d²/(2γl²)]^(−γ).
pub fn kernel(x: &[f64], y: &[f64], gamma: f64, length: f64) -> Result<f64, GpError> {
    Hyper { gamma, length, noise: 0.0 }.check()?;
    Ok(rq(sq_dist(x, y), gamma, length))
}

fn rq(d2: f64, gamma: f64, length: f64) -> f64 {
    (1.0 + d2 / (2.0 * gamma * length * length)).powf(-gamma)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Lower Cholesky factor of K + jitter·I, row-major.
fn cholesky(d2: &[f64], n: usize, h: &Hyper, jitter: f64) -> Option<Vec<f64>> {
    let k = Mat::<f64>::from_fn(n, n, |i, j| {
        rq(d2[i * n + j], h.gamma, h.length) + if i == j { jitter } else { 0.0 }
    });
    let llt = k.llt(Side::Lower).ok()?;
    let l = llt.L();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            out[i * n + j] = l[(i, j)];
        }
    }
    Some(out)
}

fn forward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let s: f64 = (0..i).map(|j| l[i * n + j] * x[j]).sum();
        x[i] = (x[i] - s) / l[i * n + i];
    }
    x
}

fn backward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| l[j * n + i] * x[j]).sum();
        x[i] = (x[i] - s) / l[i * n + i];
    }
    x
}

#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    offset: f64,
    scale: f64,
    hyper: Hyper,
    jitter: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    lml: f64,
}

fn standardize(targets: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
    (mean, scale, targets.iter().map(|t| (t - mean) / scale).collect())
}

fn check_data(inputs: &[Vec<f64>], targets: &[f64], min_points: usize) -> Result<(), GpError> {
    if inputs.len() < min_points {
        return Err(GpError::TooFewPoints(inputs.len()));
    }
    if inputs.len() != targets.len() {
        return Err(GpError::Data(format!("{} inputs, {} targets", inputs.len(), targets.len())));
    }
    let d = inputs[0].len();
    if inputs.iter().any(|x| x.len() != d) {
        return Err(GpError::Data("inputs differ in dimension".into()));
    }
    if targets.iter().chain(inputs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(GpError::Data("non-finite value".into()));
    }
    Ok(())
}

fn pairwise(inputs: &[Vec<f64>]) -> Vec<f64> {
    let n = inputs.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(&inputs[i], &inputs[j]);
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    d2
}

/// Log marginal likelihood of standardized targets; `None` if K is not
/// numerically positive definite.
fn log_marginal(d2: &[f64], y: &[f64], h: &Hyper, jitter: f64) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let chol = cholesky(d2, n, h, jitter)?;
    let z = forward(&chol, n, y);
    let alpha = backward(&chol, n, &z);
    let logdet: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
    let fit: f64 = z.iter().map(|v| v * v).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some((lml, chol, alpha))
}

impl GpModel {
    /// Condition on data with fixed hyperparameters. The diagonal gets
    /// exactly `hyper.noise`; jitter is raised from the floor only if the
    /// factorization fails.
    pub fn with_hyper(inputs: Vec<Vec<f64>>, targets: Vec<f64>, hyper: Hyper) -> Result<Self, GpError> {
        hyper.check()?;
        check_data(&inputs, &targets, 1)?;
        let (offset, scale, y) = standardize(&targets);
        let d2 = pairwise(&inputs);
        let mut jitter = hyper.noise;
        for _ in 0..8 {
            if let Some((lml, chol, alpha)) = log_marginal(&d2, &y, &hyper, jitter) {
                return Ok(GpModel {
                    inputs,
                    targets,
                    offset,
                    scale,
                    hyper,
                    jitter,
                    chol,
                    alpha,
                    lml,
                });
            }
            jitter = (jitter * 10.0).max(JITTER_FLOOR);
        }
        Err(GpError::Factorization { jitter })
    }

    /// Maximum-likelihood hyperparameters over `opts.bounds`.
    pub fn fit(inputs: Vec<Vec<f64>>, targets: Vec<f64>, opts: &FitOptions) -> Result<Self, GpError> {
        check_data(&inputs, &targets, 2)?;
        let (_, _, y) = standardize(&targets);
        let b = opts.bounds;
        let lo = [b.gamma.0.ln(), b.length.0.ln(), b.noise.0.max(JITTER_FLOOR).ln()];
        let hi = [b.gamma.1.ln(), b.length.1.ln(), b.noise.1.max(JITTER_FLOOR).ln()];
        if y.iter().all(|v| *v == 0.0) {
            // constant targets: prior mean carries everything
            let hyper = Hyper { gamma: 1.0, length: b.length.1, noise: b.noise.0.max(JITTER_FLOOR) };
            return Self::with_hyper(inputs, targets, hyper);
        }
        let d2 = pairwise(&inputs);
        let decode = |p: &[f64]| -> Hyper {
            let c = |k: usize| p[k].clamp(lo[k], hi[k]).exp();
            Hyper { gamma: c(0), length: c(1), noise: c(2) }
        };
        let cost = |p: &[f64]| -> f64 {
            let h = decode(p);
            match log_marginal(&d2, &y, &h, h.noise) {
                Some((lml, _, _)) => -lml,
                None => f64::INFINITY,
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for s in 0..opts.starts.max(1) {
            let start: Vec<f64> = if s == 0 {
                vec![1f64.clamp(b.gamma.0, b.gamma.1).ln(), 0.3f64.clamp(b.length.0, b.length.1).ln(), 1e-6f64.clamp(b.noise.0.max(JITTER_FLOOR), b.noise.1).ln()]
            } else {
                (0..3).map(|k| rng.random_range(lo[k]..=hi[k])).collect()
            };
            let steps: Vec<f64> = (0..3).map(|k| 0.25 * (hi[k] - lo[k])).collect();
            let (p, f) = nelder_mead(&cost, &start, &steps, opts.max_evals, 1e-9);
            let p: Vec<f64> = p.iter().enumerate().map(|(k, v)| v.clamp(lo[k], hi[k])).collect();
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, p));
            }
        }
        let (f, p) = best.expect("at least one start");
        if !f.is_finite() {
            return Err(GpError::Factorization { jitter: b.noise.1 });
        }
        Self::with_hyper(inputs, targets, decode(&p))
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    /// Diagonal term actually used (≥ `hyper.noise`).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Log marginal likelihood of this model's data under other hyperparameters.
    pub fn log_marginal_at(&self, hyper: &Hyper) -> Option<f64> {
        let (_, _, y) = standardize(&self.targets);
        log_marginal(&pairwise(&self.inputs), &y, hyper, hyper.noise).map(|r| r.0)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn prior_mean(&self) -> f64 {
        self.offset
    }

    pub fn prior_std(&self) -> f64 {
        self.scale
    }

    /// Posterior variance divided by the prior variance, in [0, 1].
    pub fn variance_ratio(&self, x: &[f64]) -> f64 {
        let ks: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| rq(sq_dist(xi, x), self.hyper.gamma, self.hyper.length))
            .collect();
        let v = forward(&self.chol, self.inputs.len(), &ks);
        (1.0 - v.iter().map(|t| t * t).sum::<f64>()).max(0.0)
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.inputs.len();
        let ks: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| rq(sq_dist(xi, x), self.hyper.gamma, self.hyper.length))
            .collect();
        let mean: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = forward(&self.chol, n, &ks);
        let var = (1.0 - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
        (self.offset + self.scale * mean, self.scale * var.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(&[0.3, 0.1], &[0.3, 0.1], 2.0, 0.5).unwrap(), 1.0);
        assert!((kernel(&[0.0], &[0.7], 1.0, 0.7).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        for d in [0.0, 0.1, 0.5, 1.0, 2.0] {
            let rq = kernel(&[0.0], &[d], 1e6, 0.8).unwrap();
            let se = (-d * d / (2.0 * 0.64f64)).exp();
            assert!((rq - se).abs() < 1e-4);
        }
        assert!(kernel(&[0.0], &[1.0], 0.0, 1.0).is_err());
        assert!(kernel(&[0.0], &[1.0], 1.0, -1.0).is_err());
    }

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let ys = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        (xs, ys)
    }

    #[test]
    fn noise_free_interpolation() {
        let (xs, ys) = toy();
        let m = GpModel::with_hyper(xs.clone(), ys.clone(), Hyper { gamma: 1.0, length: 0.3, noise: 0.0 }).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (mu, sd) = m.predict(x);
            assert!((mu - y).abs() < 1e-8);
            assert!(sd < 1e-6);
        }
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let (xs, ys) = toy();
        let m = GpModel::with_hyper(xs, ys, Hyper { gamma: 1.0, length: 0.1, noise: 1e-8 }).unwrap();
        let (mu, sd) = m.predict(&[1e4]);
        assert!((mu - m.prior_mean()).abs() < 1e-6);
        assert!((sd - m.prior_std()).abs() < 1e-6);
    }

    #[test]
    fn fit_is_deterministic_and_beats_starts() {
        let (xs, ys) = toy();
        let opts = FitOptions { seed: 11, ..Default::default() };
        let a = GpModel::fit(xs.clone(), ys.clone(), &opts).unwrap();
        let b = GpModel::fit(xs, ys, &opts).unwrap();
        assert_eq!(a.hyper(), b.hyper());
        let start = Hyper { gamma: 1.0, length: 0.3, noise: 1e-6 };
        assert!(a.log_marginal_likelihood() >= a.log_marginal_at(&start).unwrap() - 1e-9);
    }

    #[test]
    fn held_out_midpoints() {
        let (xs, ys) = toy();
        let m = GpModel::fit(xs, ys, &FitOptions::default()).unwrap();
        for i in 0..7 {
            let x = (i as f64 + 0.5) / 7.0;
            let (mu, _) = m.predict(&[x]);
            assert!((mu - (6.0 * x).sin()).abs() < 0.05, "x={x} mu={mu}");
        }
    }

    #[test]
    fn constant_targets_fall_back() {
        let xs = vec![vec![0.0], vec![0.5], vec![1.0]];
        let m = GpModel::fit(xs, vec![2.0; 3], &FitOptions::default()).unwrap();
        assert_eq!(m.hyper().length, HyperBox::default().length.1);
        assert!((m.predict(&[0.25]).0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_data() {
        assert_eq!(GpModel::fit(vec![vec![0.0]], vec![1.0], &FitOptions::default()).unwrap_err(), GpError::TooFewPoints(1));
        assert!(GpModel::fit(vec![vec![0.0], vec![1.0]], vec![1.0, f64::NAN], &FitOptions::default()).is_err());
    }
}
