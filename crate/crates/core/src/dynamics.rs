//! Time evolution under the sink-equipped Hamiltonian, reduced populations
//! and the transfer time 𝔗 = ∫₀^∞ ‖Ψ(t)‖² dt.
//!
//! Two propagators are provided. [`DenseEvolution`] diagonalizes H once and
//! gives both Ψ(t) and an analytic 𝔗. [`KrylovPropagator`] steps
//! exp(−iHh) adaptively on the sparse matrix and integrates ‖Ψ‖² exactly
//! over every step inside the Krylov space, closing the integral with an
//! exponential tail estimate once that tail is negligible. Both work on the subspace reachable from the
//! initial state through the sparsity graph of H, which is invariant under
//! the dynamics.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use thiserror::Error;

use crate::expm::expm;
use crate::hamiltonian::{AssembledHamiltonian, SparseMatrix, DEFAULT_DENSE_THRESHOLD};
use crate::hilbert::BasisIndex;

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("dark state: eigenvalue {eigenvalue} with weight {weight:.3e} does not decay")]
    DarkState { eigenvalue: C, weight: f64 },
    #[error("no sink: transfer time diverges for Γ = 0")]
    NoSink,
    #[error("Krylov propagation did not converge: {0}")]
    Krylov(String),
    #[error("norm integral did not converge by t = {t_end} ps (remaining norm {remaining:.3e})")]
    Quadrature { t_end: f64, remaining: f64 },
    #[error("eigenbasis too ill-conditioned for the analytic transfer time ({0})")]
    IllConditioned(String),
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsOptions {
    /// Largest reduced dimension handled by dense eigendecomposition.
    pub dense_threshold: usize,
    /// |Im λ| below this (ps⁻¹) marks a non-decaying mode.
    pub dark_tolerance: f64,
    /// Expansion amplitudes below this are treated as absent.
    pub weight_floor: f64,
    /// Largest tolerated Σ|c_m|‖s_m‖ / ‖ψ₀‖ in the analytic route; beyond
    /// it cancellation eats too many digits and quadrature is used instead.
    pub max_amplification: f64,
    pub krylov_dim: usize,
    /// Local Krylov error allowed per unit time.
    pub krylov_tolerance: f64,
    /// Stop the norm integral once the tail estimate drops below this
    /// fraction of the accumulated integral.
    pub tail_rel_tol: f64,
    /// Hard limit on the integration horizon (ps).
    pub max_time: f64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        DynamicsOptions {
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            dark_tolerance: 1e-8,
            weight_floor: 1e-10,
            max_amplification: 1e6,
            krylov_dim: 30,
            krylov_tolerance: 1e-10,
            tail_rel_tol: 1e-6,
            max_time: 1.0e5,
        }
    }
}

/// Amplitude 1 on (input site, phonon vacuum).
pub fn initial_state(basis: &BasisIndex) -> Vec<C> {
    let mut psi = vec![ZERO; basis.dim()];
    psi[basis.vacuum_index(0)] = C::new(1.0, 0.0);
    psi
}

pub fn norm_sqr(psi: &[C]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

/// Reduced populations ρ_ii = Σ over phonon configurations of |amplitude|².
pub fn site_populations(psi: &[C], basis: &BasisIndex) -> Vec<f64> {
    psi.chunks(basis.phonon_dim()).map(norm_sqr).collect()
}

/// 𝔭(t) = 1 − ‖Ψ(t)‖² for a unit-norm initial state.
pub fn sink_population(psi: &[C]) -> f64 {
    1.0 - norm_sqr(psi)
}

/// Restriction of H to the subspace reachable from the support of ψ₀.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub indices: Vec<usize>,
    pub matrix: SparseMatrix,
    pub psi0: Vec<C>,
    full_dim: usize,
}

impl Reduced {
    pub fn new(h: &SparseMatrix, psi0: &[C]) -> Result<Self, DynamicsError> {
        if psi0.len() != h.dim() {
            return Err(DynamicsError::Input(format!(
                "state has length {}, Hamiltonian has dimension {}",
                psi0.len(),
                h.dim()
            )));
        }
        let support: Vec<usize> = (0..psi0.len()).filter(|&i| psi0[i] != ZERO).collect();
        let indices = h.reachable_from(&support);
        let matrix = h.restrict(&indices);
        let psi = indices.iter().map(|&i| psi0[i]).collect();
        Ok(Reduced {
            indices,
            matrix,
            psi0: psi,
            full_dim: h.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn embed(&self, reduced: &[C]) -> Vec<C> {
        let mut out = vec![ZERO; self.full_dim];
        for (&i, &z) in self.indices.iter().zip(reduced) {
            out[i] = z;
        }
        out
    }
}

/// Eigendecomposition H = S Λ S⁻¹ together with the expansion c = S⁻¹ ψ₀.
pub struct DenseEvolution {
    eigenvalues: Vec<C>,
    vectors: Mat<C>,
    coeffs: Vec<C>,
}

impl DenseEvolution {
    pub fn new(h: &SparseMatrix, psi0: &[C]) -> Result<Self, DynamicsError> {
        let n = h.dim();
        let dense = h.to_dense();
        let eig = dense
            .eigen()
            .map_err(|e| DynamicsError::Eigen(format!("{e:?}")))?;
        let vectors = eig.U().to_owned();
        let eigenvalues: Vec<C> = (0..n).map(|k| eig.S()[k]).collect();
        let rhs = Mat::from_fn(n, 1, |i, _| psi0[i]);
        let sol = vectors.partial_piv_lu().solve(&rhs);
        let coeffs: Vec<C> = (0..n).map(|i| sol[(i, 0)]).collect();
        if coeffs.iter().chain(&eigenvalues).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(DynamicsError::Eigen("non-finite eigen decomposition".into()));
        }
        Ok(DenseEvolution {
            eigenvalues,
            vectors,
            coeffs,
        })
    }

    pub fn eigenvalues(&self) -> &[C] {
        &self.eigenvalues
    }

    /// |c_m| ‖s_m‖: the weight of eigenvector m in the initial state.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.eigenvalues.len();
        (0..n)
            .map(|m| {
                let col: f64 = (0..n).map(|i| self.vectors[(i, m)].norm_sqr()).sum();
                self.coeffs[m].norm() * col.sqrt()
            })
            .collect()
    }

    pub fn state_at(&self, t: f64) -> Vec<C> {
        let n = self.eigenvalues.len();
        let phased: Vec<C> = (0..n)
            .map(|m| self.coeffs[m] * (C::new(0.0, -t) * self.eigenvalues[m]).exp())
            .collect();
        (0..n)
            .map(|i| (0..n).map(|m| self.vectors[(i, m)] * phased[m]).sum())
            .collect()
    }

    /// ∫₀^∞ ‖Ψ(t)‖² dt as the double sum
    /// Σ_{n,m} c̄_n c_m ⟨s_n|s_m⟩ / (i(λ_m − λ̄_n)).
    pub fn transfer_time(&self, opts: &DynamicsOptions) -> Result<f64, DynamicsError> {
        let n = self.eigenvalues.len();
        let weights = self.weights();
        let active: Vec<usize> = (0..n).filter(|&m| weights[m] > opts.weight_floor).collect();
        for &m in &active {
            let lam = self.eigenvalues[m];
            if lam.im.abs() < opts.dark_tolerance || lam.im > 0.0 {
                return Err(DynamicsError::DarkState {
                    eigenvalue: lam,
                    weight: weights[m],
                });
            }
        }
        let norm0: f64 = weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let psi_norm = (0..n)
            .map(|i| (0..n).map(|m| self.vectors[(i, m)] * self.coeffs[m]).sum::<C>().norm_sqr())
            .sum::<f64>()
            .sqrt();
        let amplification = norm0 / psi_norm;
        if amplification > opts.max_amplification {
            return Err(DynamicsError::IllConditioned(format!("amplification {amplification:.2e}")));
        }
        let k = active.len();
        let u = Mat::from_fn(n, k, |i, a| self.vectors[(i, active[a])] * self.coeffs[active[a]]);
        let gram = u.adjoint() * &u;
        let mut total = ZERO;
        for (a, &nn) in active.iter().enumerate() {
            let ln = self.eigenvalues[nn].conj();
            for (b, &mm) in active.iter().enumerate() {
                let den = C::new(0.0, 1.0) * (self.eigenvalues[mm] - ln);
                total += gram[(a, b)] / den;
            }
        }
        if !(total.re > 0.0) || total.im.abs() > 1e-6 * total.re.abs() {
            return Err(DynamicsError::IllConditioned(format!("result {total}")));
        }
        Ok(total.re)
    }
}

/// Adaptive Krylov propagator for exp(−iHt)v (Expokit-style step control).
pub struct KrylovPropagator<'a> {
    h: &'a SparseMatrix,
    m: usize,
    tol: f64,
    anorm: f64,
    /// Longest step for which the Gramian block exponential stays bounded:
    /// exp(−τĤ†) grows at most like exp(τ·Γ/2).
    max_integrate_step: f64,
    pub matvecs: usize,
    pub steps: usize,
}

struct KrylovStep {
    basis: Vec<Vec<C>>,
    /// β·exp(τĤ)e₁ restricted to the rows that form the new state.
    coeffs: Vec<C>,
    /// ∫₀^τ ‖Ψ‖² over the step, when requested.
    integral: Option<f64>,
    t_step: f64,
    next_step: f64,
}

impl KrylovStep {
    fn state(&self) -> Vec<C> {
        let n = self.basis[0].len();
        let mut w = vec![ZERO; n];
        for (v, c) in self.basis.iter().zip(&self.coeffs) {
            w.iter_mut().zip(v).for_each(|(wk, vk)| *wk += c * vk);
        }
        w
    }
}

const BREAKDOWN_TOL: f64 = 1e-12;
const SAFETY: f64 = 0.9;
const ACCEPT: f64 = 1.2;
const MAX_GROWTH_EXPONENT: f64 = 10.0;

fn round_step(t: f64) -> f64 {
    let s = 10f64.powf(t.log10().floor() - 1.0);
    (t / s).ceil() * s
}

/// exp(τĤ) for the leading `size` block, and with `rows` > 0 also the
/// Gramian ∫₀^τ exp(sĤ)† P exp(sĤ) ds (P projecting on the first `rows`
/// coordinates) via the block-triangular exponential of
/// [[−Ĥ†, P], [0, Ĥ]]. Returns (exp(τĤ), Gramian[0,0]).
fn step_exponential(h: &Mat<C>, size: usize, tau: f64, rows: usize) -> (Mat<C>, Option<f64>) {
    if rows == 0 {
        return (expm(&Mat::from_fn(size, size, |i, j| h[(i, j)] * tau)), None);
    }
    let big = Mat::from_fn(2 * size, 2 * size, |i, j| match (i < size, j < size) {
        (true, true) => -h[(j, i)].conj() * tau,
        (true, false) => {
            if i == j - size && i < rows {
                C::new(tau, 0.0)
            } else {
                ZERO
            }
        }
        (false, false) => h[(i - size, j - size)] * tau,
        (false, true) => ZERO,
    });
    let e = expm(&big);
    let f = Mat::from_fn(size, size, |i, j| e[(size + i, size + j)]);
    // Gramian = F22† F12; only its (0,0) entry is needed
    let g: C = (0..size).map(|k| f[(k, 0)].conj() * e[(k, size)]).sum();
    (f, Some(g.re))
}

impl<'a> KrylovPropagator<'a> {
    pub fn new(h: &'a SparseMatrix, krylov_dim: usize, tol: f64) -> Self {
        let m = krylov_dim.min(h.dim()).max(1);
        KrylovPropagator {
            h,
            m,
            tol,
            anorm: h.norm_inf().max(f64::MIN_POSITIVE),
            max_integrate_step: {
                let decay = (0..h.dim()).map(|i| -h.get(i, i).im).fold(0.0, f64::max);
                if decay > 0.0 { MAX_GROWTH_EXPONENT / decay } else { f64::INFINITY }
            },
            matvecs: 0,
            steps: 0,
        }
    }

    fn apply(&mut self, v: &[C], out: &mut [C]) {
        self.h.matvec(v, out);
        // A = −iH
        out.iter_mut().for_each(|z| *z = C::new(z.im, -z.re));
        self.matvecs += 1;
    }

    fn initial_step(&self, beta: f64) -> f64 {
        let m = self.m as f64;
        let fact = ((m + 1.0) / std::f64::consts::E).powf(m + 1.0)
            * (2.0 * std::f64::consts::PI * (m + 1.0)).sqrt();
        let t = (1.0 / self.anorm) * ((fact * self.tol) / (4.0 * beta * self.anorm)).powf(1.0 / m);
        round_step(t)
    }

    /// One accepted step of length ≤ `t_max` starting from `w`.
    fn step(&mut self, w: &[C], t_max: f64, t_try: f64, integrate: bool) -> Result<KrylovStep, DynamicsError> {
        let n = w.len();
        let beta = norm_sqr(w).sqrt();
        let m = self.m;
        let mut basis: Vec<Vec<C>> = Vec::with_capacity(m + 1);
        basis.push(w.iter().map(|z| z / beta).collect());
        let mut hess = Mat::<C>::zeros(m + 2, m + 2);
        let mut p = vec![ZERO; n];
        let mut breakdown = false;
        let mut mb = m;
        for j in 0..m {
            let (head, _) = basis.split_at(j + 1);
            self.apply(&head[j], &mut p);
            for (i, vi) in head.iter().enumerate() {
                let hij: C = vi.iter().zip(&p).map(|(a, b)| a.conj() * b).sum();
                hess[(i, j)] = hij;
                p.iter_mut().zip(vi).for_each(|(pk, vk)| *pk -= hij * vk);
            }
            let s = norm_sqr(&p).sqrt();
            if s < BREAKDOWN_TOL * self.anorm {
                breakdown = true;
                mb = j + 1;
                break;
            }
            hess[(j + 1, j)] = C::new(s, 0.0);
            basis.push(p.iter().map(|z| z / s).collect());
        }
        let mut avnorm = 0.0;
        if !breakdown {
            hess[(m + 1, m)] = C::new(1.0, 0.0);
            let mut av = vec![ZERO; n];
            self.apply(&basis[m], &mut av);
            avnorm = norm_sqr(&av).sqrt();
        }
        let mx = if breakdown { mb } else { mb + 2 };
        let rows = if breakdown { mb } else { mb + 1 };
        let t_max = if integrate { t_max.min(self.max_integrate_step) } else { t_max };
        let mut t_step = if breakdown { t_max } else { t_try.min(t_max) };
        for _reject in 0..60 {
            let (f, integral) = step_exponential(&hess, mx, t_step, if integrate { rows } else { 0 });
            let mut xm = 1.0 / m as f64;
            let err_loc = if breakdown {
                0.0
            } else {
                let p1 = f[(m, 0)].norm() * beta;
                let p2 = f[(m + 1, 0)].norm() * beta * avnorm;
                if p1 > 10.0 * p2 {
                    p2
                } else if p1 > p2 {
                    p1 * p2 / (p1 - p2)
                } else {
                    xm = 1.0 / (m as f64 - 1.0).max(1.0);
                    p1
                }
            };
            if err_loc <= ACCEPT * t_step * self.tol {
                let next = if err_loc > 0.0 {
                    round_step(SAFETY * t_step * (t_step * self.tol / err_loc).powf(xm))
                } else {
                    2.0 * t_step
                };
                self.steps += 1;
                basis.truncate(rows);
                return Ok(KrylovStep {
                    basis,
                    coeffs: (0..rows).map(|i| f[(i, 0)] * beta).collect(),
                    integral: integral.map(|g| g * beta * beta),
                    t_step,
                    next_step: next,
                });
            }
            t_step = round_step(SAFETY * t_step * (t_step * self.tol / err_loc).powf(xm)).min(t_max);
        }
        Err(DynamicsError::Krylov("step size rejected too many times".into()))
    }

    /// exp(−iHt) v for each requested time (non-negative, non-decreasing).
    pub fn propagate(&mut self, v: &[C], times: &[f64]) -> Result<Vec<Vec<C>>, DynamicsError> {
        let mut out = Vec::with_capacity(times.len());
        let mut w = v.to_vec();
        let mut t_now = 0.0;
        let mut t_try = f64::NAN;
        for &t in times {
            if t < t_now {
                return Err(DynamicsError::Input("times must be non-decreasing".into()));
            }
            while t - t_now > 1e-14 * t.max(1.0) {
                let beta = norm_sqr(&w).sqrt();
                if beta == 0.0 {
                    break;
                }
                if !t_try.is_finite() {
                    t_try = self.initial_step(beta);
                }
                let st = self.step(&w, t - t_now, t_try, false)?;
                w = st.state();
                t_now += st.t_step;
                t_try = st.next_step;
            }
            out.push(w.clone());
        }
        Ok(out)
    }

    /// ∫₀^∞ ‖exp(−iHt) v‖² dt. Steps are integrated exactly in the Krylov
    /// subspace; the remainder after the last step is estimated as n(t)/κ
    /// with κ the decay rate of ‖Ψ‖² fitted over [t/2, t].
    pub fn norm_integral(&mut self, v: &[C], opts: &DynamicsOptions) -> Result<NormIntegral, DynamicsError> {
        let mut w = v.to_vec();
        let mut t_now = 0.0;
        let mut integral = 0.0;
        let mut t_try = self.initial_step(norm_sqr(v).sqrt().max(1e-300));
        let mut history: Vec<(f64, f64)> = vec![(0.0, norm_sqr(v))];
        let rate_over = |history: &[(f64, f64)], from: f64| -> Option<f64> {
            let (t1, n1) = *history.last()?;
            let k = history.partition_point(|&(t, _)| t < from).min(history.len() - 1);
            let (t0, n0) = history[k];
            (t1 > t0 && n0 > 0.0 && n1 > 0.0).then(|| (n0 / n1).ln() / (t1 - t0))
        };
        loop {
            let n_now = history.last().expect("non-empty").1;
            if n_now < 1e-300 {
                return Ok(NormIntegral { integral, tail: 0.0, t_end: t_now });
            }
            if t_now >= opts.max_time {
                return Err(DynamicsError::Quadrature { t_end: t_now, remaining: n_now });
            }
            let st = self.step(&w, opts.max_time - t_now, t_try, true)?;
            integral += st.integral.expect("requested");
            w = st.state();
            t_now += st.t_step;
            t_try = st.next_step;
            let n_new = norm_sqr(&w);
            history.push((t_now, n_new));

            // the fitted tail is only trusted as a small correction: with
            // several slow modes the norm beats and the fit is rough
            if let (Some(r1), Some(r2)) = (rate_over(&history, t_now / 2.0), rate_over(&history, 0.75 * t_now)) {
                let r = r1.min(r2);
                if r > 0.0 && n_new / r < opts.tail_rel_tol * integral {
                    let tail = n_new / r;
                    return Ok(NormIntegral { integral: integral + tail, tail, t_end: t_now });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormIntegral {
    pub integral: f64,
    pub tail: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dense,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferTime {
    pub ps: f64,
    pub method: Method,
    /// Dimension of the reachable subspace actually propagated.
    pub reduced_dim: usize,
}

impl TransferTime {
    pub fn in_units_of(&self, t: f64) -> f64 {
        self.ps / t
    }
}

fn check_sink(h: &AssembledHamiltonian) -> Result<(), DynamicsError> {
    if h.gamma > 0.0 {
        Ok(())
    } else {
        Err(DynamicsError::NoSink)
    }
}

/// 𝔗 from the eigendecomposition (any dimension; cost O(dim³)).
pub fn transfer_time_analytic(
    h: &AssembledHamiltonian,
    psi0: &[C],
    opts: &DynamicsOptions,
) -> Result<TransferTime, DynamicsError> {
    check_sink(h)?;
    let red = Reduced::new(&h.matrix, psi0)?;
    let ev = DenseEvolution::new(&red.matrix, &red.psi0)?;
    Ok(TransferTime {
        ps: ev.transfer_time(opts)?,
        method: Method::Dense,
        reduced_dim: red.dim(),
    })
}

/// 𝔗 by Krylov time stepping and quadrature of ‖Ψ(t)‖².
pub fn transfer_time_quadrature(
    h: &AssembledHamiltonian,
    psi0: &[C],
    opts: &DynamicsOptions,
) -> Result<TransferTime, DynamicsError> {
    check_sink(h)?;
    let red = Reduced::new(&h.matrix, psi0)?;
    let mut prop = KrylovPropagator::new(&red.matrix, opts.krylov_dim, opts.krylov_tolerance);
    let res = prop.norm_integral(&red.psi0, opts)?;
    Ok(TransferTime {
        ps: res.integral,
        method: Method::Krylov,
        reduced_dim: red.dim(),
    })
}

/// 𝔗 by the analytic route when the reachable subspace fits under the
/// dense threshold and the eigenbasis is well conditioned, otherwise by
/// Krylov quadrature.
pub fn transfer_time(
    h: &AssembledHamiltonian,
    psi0: &[C],
    opts: &DynamicsOptions,
) -> Result<TransferTime, DynamicsError> {
    check_sink(h)?;
    let red = Reduced::new(&h.matrix, psi0)?;
    let dense = if red.dim() <= opts.dense_threshold {
        DenseEvolution::new(&red.matrix, &red.psi0).and_then(|ev| ev.transfer_time(opts))
    } else {
        Err(DynamicsError::IllConditioned("above dense threshold".into()))
    };
    match dense {
        Ok(ps) => Ok(TransferTime {
            ps,
            method: Method::Dense,
            reduced_dim: red.dim(),
        }),
        Err(DynamicsError::IllConditioned(_)) | Err(DynamicsError::Eigen(_)) => {
            let mut prop = KrylovPropagator::new(&red.matrix, opts.krylov_dim, opts.krylov_tolerance);
            let res = prop.norm_integral(&red.psi0, opts)?;
            Ok(TransferTime {
                ps: res.integral,
                method: Method::Krylov,
                reduced_dim: red.dim(),
            })
        }
        Err(e) => Err(e),
    }
}

/// States exp(−iHt)ψ₀ at each time, using `method` or the dimension rule
/// when `None`.
pub fn propagate(
    h: &SparseMatrix,
    psi0: &[C],
    times: &[f64],
    opts: &DynamicsOptions,
    method: Option<Method>,
) -> Result<Vec<Vec<C>>, DynamicsError> {
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(DynamicsError::Input("times must be non-negative and non-decreasing".into()));
    }
    let red = Reduced::new(h, psi0)?;
    let method = method.unwrap_or(if red.dim() <= opts.dense_threshold {
        Method::Dense
    } else {
        Method::Krylov
    });
    let states = match method {
        Method::Dense => {
            let ev = DenseEvolution::new(&red.matrix, &red.psi0)?;
            times.iter().map(|&t| ev.state_at(t)).collect::<Vec<_>>()
        }
        Method::Krylov => {
            let mut prop = KrylovPropagator::new(&red.matrix, opts.krylov_dim, opts.krylov_tolerance);
            prop.propagate(&red.psi0, times)?
        }
    };
    Ok(states.iter().map(|s| red.embed(s)).collect())
}

/// Site and sink populations on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    /// `sites[k][i]`: population of site i at `times[k]`.
    pub sites: Vec<Vec<f64>>,
    pub sink: Vec<f64>,
}

impl PopulationTrace {
    pub fn compute(
        h: &AssembledHamiltonian,
        psi0: &[C],
        times: &[f64],
        opts: &DynamicsOptions,
    ) -> Result<Self, DynamicsError> {
        let states = propagate(&h.matrix, psi0, times, opts, None)?;
        let n0 = norm_sqr(psi0);
        Ok(PopulationTrace {
            times: times.to_vec(),
            sites: states.iter().map(|s| site_populations(s, &h.basis)).collect(),
            sink: states.iter().map(|s| n0 - norm_sqr(s)).collect(),
        })
    }

    /// Columns `time_ps,time_over_T,p_site_1..p_site_N,p_sink`.
    pub fn write_csv<W: Write>(&self, mut w: W, benchmark_time: f64) -> std::io::Result<()> {
        let n = self.sites.first().map_or(0, |s| s.len());
        let mut header = vec!["time_ps".to_string(), "time_over_T".to_string()];
        header.extend((1..=n).map(|i| format!("p_site_{i}")));
        header.push("p_sink".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.10e}"), format!("{:.10e}", t / benchmark_time)];
            row.extend(self.sites[k].iter().map(|p| format!("{p:.10e}")));
            row.push(format!("{:.10e}", self.sink[k]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{NetworkConfig, PhononSpec};

    fn two_site(gamma: f64) -> AssembledHamiltonian {
        AssembledHamiltonian::assemble(&NetworkConfig::with_intermediates(200.0, &[]), &PhononSpec::none(), gamma)
            .unwrap()
    }

    #[test]
    fn initial_populations() {
        let h = two_site(1.0);
        let psi = initial_state(&h.basis);
        assert_eq!(site_populations(&psi, &h.basis), vec![1.0, 0.0]);
        assert_eq!(sink_population(&psi), 0.0);
    }

    #[test]
    fn equal_superposition_and_phases() {
        let h = two_site(0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = [C::new(s, 0.0), C::new(s, 0.0)];
        let b = [C::new(0.0, s), C::new(-s * 0.6, -s * 0.8)];
        let pa = site_populations(&a, &h.basis);
        let pb = site_populations(&b, &h.basis);
        for k in 0..2 {
            assert!((pa[k] - 0.5).abs() < 1e-15);
            assert!((pb[k] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rabi_oscillation_dense_and_krylov() {
        let h = two_site(0.0);
        let psi0 = initial_state(&h.basis);
        let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.5).collect();
        let opts = DynamicsOptions::default();
        for method in [Method::Dense, Method::Krylov] {
            let states = propagate(&h.matrix, &psi0, &times, &opts, Some(method)).unwrap();
            for (t, s) in times.iter().zip(&states) {
                let p = site_populations(s, &h.basis);
                assert!((p[1] - (0.125 * t).sin().powi(2)).abs() < 1e-9, "{method:?} t={t}");
                assert!((norm_sqr(s) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let h = two_site(2.0);
        let psi0 = initial_state(&h.basis);
        let s = propagate(&h.matrix, &psi0, &[0.0], &DynamicsOptions::default(), Some(Method::Dense)).unwrap();
        assert!((s[0][0] - C::new(1.0, 0.0)).norm() < 1e-14);
        assert!(s[0][1].norm() < 1e-14);
    }

    #[test]
    fn two_site_transfer_time_closed_form() {
        let v: f64 = 0.125;
        for gamma in [0.05, 0.2, 2.0 * 2f64.sqrt() * v, 1.0, 3.0] {
            let h = two_site(gamma);
            let psi0 = initial_state(&h.basis);
            let want = 2.0 / gamma + gamma / (4.0 * v * v);
            let opts = DynamicsOptions::default();
            let a = transfer_time_analytic(&h, &psi0, &opts).unwrap().ps;
            let q = transfer_time_quadrature(&h, &psi0, &opts).unwrap().ps;
            assert!(((a - want) / want).abs() < 1e-10, "analytic {a} vs {want}");
            assert!(((q - want) / want).abs() < 1e-6, "quadrature {q} vs {want}");
        }
    }

    #[test]
    fn no_sink_diverges() {
        let h = two_site(0.0);
        let psi0 = initial_state(&h.basis);
        assert_eq!(
            transfer_time(&h, &psi0, &DynamicsOptions::default()),
            Err(DynamicsError::NoSink)
        );
    }

    #[test]
    fn symmetric_dark_state_not_excited_is_harmless() {
        // mirror-image pair: the antisymmetric combination never sees the sink
        let cfg = NetworkConfig::with_intermediates(200.0, &[[0.0, 30.0, 0.0], [0.0, -30.0, 0.0]]);
        let h = AssembledHamiltonian::assemble(&cfg, &PhononSpec::none(), 1.0).unwrap();
        let psi0 = initial_state(&h.basis);
        let opts = DynamicsOptions::default();
        let a = transfer_time_analytic(&h, &psi0, &opts).unwrap().ps;
        let q = transfer_time_quadrature(&h, &psi0, &opts).unwrap().ps;
        assert!(((a - q) / a).abs() < 1e-6);
    }

    #[test]
    fn excited_dark_state_is_reported() {
        let cfg = NetworkConfig::with_intermediates(200.0, &[[0.0, 30.0, 0.0], [0.0, -30.0, 0.0]]);
        let h = AssembledHamiltonian::assemble(&cfg, &PhononSpec::none(), 1.0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = vec![C::new(0.0, 0.0), C::new(s, 0.0), C::new(-s, 0.0), C::new(0.0, 0.0)];
        assert!(matches!(
            transfer_time_analytic(&h, &psi0, &DynamicsOptions::default()),
            Err(DynamicsError::DarkState { .. })
        ));
    }

    #[test]
    fn trace_csv_header() {
        let h = two_site(1.0);
        let psi0 = initial_state(&h.basis);
        let tr = PopulationTrace::compute(&h, &psi0, &[0.0, 1.0], &DynamicsOptions::default()).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf, h_t()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_ps,time_over_T,p_site_1,p_site_2,p_sink\n"));
        assert_eq!(text.lines().count(), 3);
    }

    fn h_t() -> f64 {
        4.0 * std::f64::consts::PI
    }
}
