//! Assembly of the total non-Hermitian Hamiltonian
//! H = H_S + H_B + H_SB + H_Γ in the single-excitation basis.

use std::io::Write;

use faer::Mat;
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{CouplingMatrix, GeometryError, ModeKind, NetworkConfig, PhononSpec};
use crate::hilbert::{BasisError, BasisIndex};

/// Largest dimension converted to a dense matrix for eigendecomposition.
pub const DEFAULT_DENSE_THRESHOLD: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("sink rate must be non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("basis does not carry the {0:?} modes required by this term")]
    MissingModes(ModeKind),
}

/// Compressed sparse row matrix with complex entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl SparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        SparseMatrix {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sums duplicate entries; entries that sum to exactly zero are dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        let mut iter = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside {dim}x{dim}");
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != Complex64::new(0.0, 0.0) {
                rows.push(r);
                col_idx.push(c);
                values.push(v);
            }
        }
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map(|(_, v)| v)
            .unwrap_or_default()
    }

    pub fn add(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.dim, other.dim);
        let t = self.triplets().chain(other.triplets()).collect();
        SparseMatrix::from_triplets(self.dim, t)
    }

    pub fn scale(&self, s: Complex64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn adjoint(&self) -> SparseMatrix {
        let t = self.triplets().map(|(i, j, v)| (j, i, v.conj())).collect();
        SparseMatrix::from_triplets(self.dim, t)
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &SparseMatrix) -> f64 {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
            .values
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// y = A x
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = Complex64::new(0.0, 0.0);
            for k in a..b {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<Complex64> {
        let mut m = Mat::<Complex64>::zeros(self.dim, self.dim);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Principal submatrix on `indices` (in the given order).
    pub fn restrict(&self, indices: &[usize]) -> SparseMatrix {
        let mut map = vec![usize::MAX; self.dim];
        for (k, &i) in indices.iter().enumerate() {
            map[i] = k;
        }
        let t = indices
            .iter()
            .enumerate()
            .flat_map(|(k, &i)| {
                let map = &map;
                self.row(i)
                    .filter(move |(j, _)| map[*j] != usize::MAX)
                    .map(move |(j, v)| (k, map[j], v))
            })
            .collect();
        SparseMatrix::from_triplets(indices.len(), t)
    }

    /// Indices reachable from `seeds` through non-zero entries, sorted.
    pub fn reachable_from(&self, seeds: &[usize]) -> Vec<usize> {
        let mut seen = vec![false; self.dim];
        let mut stack: Vec<usize> = Vec::new();
        for &s in seeds {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
        while let Some(i) = stack.pop() {
            for (j, _) in self.row(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..self.dim).filter(|&i| seen[i]).collect()
    }

    /// Writes `row col re im` lines in row-major order, zero-based indices.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# row col re im (zero-based, row-major)")?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {:e} {:e}", v.re, v.im)?;
        }
        Ok(())
    }
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Excitonic hopping V_ij between sites with identical phonon occupations.
pub fn build_system(basis: &BasisIndex, coupling: &CouplingMatrix) -> SparseMatrix {
    let n = basis.n_sites();
    let block = basis.phonon_dim();
    let mut t = Vec::with_capacity(n * (n - 1) * block);
    for i in 0..n {
        for j in i + 1..n {
            let v = coupling.get(i, j);
            for p in 0..block {
                let (a, b) = (i * block + p, j * block + p);
                t.push((a, b, real(v)));
                t.push((b, a, real(v)));
            }
        }
    }
    SparseMatrix::from_triplets(basis.dim(), t)
}

/// Diagonal phonon energies Σ_modes ω · n.
pub fn build_bath(basis: &BasisIndex, spec: &PhononSpec) -> SparseMatrix {
    let freqs: Vec<f64> = basis
        .modes()
        .iter()
        .map(|m| spec.freqs(m.kind)[m.site])
        .collect();
    let t = (0..basis.dim())
        .map(|idx| {
            let e: f64 = freqs
                .iter()
                .enumerate()
                .map(|(k, w)| w * basis.occupation(idx, k) as f64)
                .sum();
            (idx, idx, real(e))
        })
        .collect();
    SparseMatrix::from_triplets(basis.dim(), t)
}

/// Local coupling g_H a†_i a_i (b_i + b_i†) for every Holstein mode.
pub fn build_holstein(basis: &BasisIndex, spec: &PhononSpec) -> Result<SparseMatrix, HamiltonianError> {
    let mut t = Vec::new();
    let s = basis.n_states();
    for (k, mode) in basis.modes().iter().enumerate() {
        if mode.kind != ModeKind::Holstein {
            continue;
        }
        let stride = basis.stride(k);
        let lo = mode.site * basis.phonon_dim();
        for idx in lo..lo + basis.phonon_dim() {
            let n = basis.occupation(idx, k);
            if n + 1 < s {
                let amp = spec.g_holstein * ((n + 1) as f64).sqrt();
                t.push((idx, idx + stride, real(amp)));
                t.push((idx + stride, idx, real(amp)));
            }
        }
    }
    if t.is_empty() && !basis.modes().iter().any(|m| m.kind == ModeKind::Holstein) {
        return Err(HamiltonianError::MissingModes(ModeKind::Holstein));
    }
    Ok(SparseMatrix::from_triplets(basis.dim(), t))
}

/// Non-local coupling g_P (a†_i a_j + h.c.)(x_i − x_j) with g_P = α / r_ij³
/// for every pair of sites.
pub fn build_peierls(
    basis: &BasisIndex,
    spec: &PhononSpec,
    config: &NetworkConfig,
) -> Result<SparseMatrix, HamiltonianError> {
    use crate::hilbert::Mode;
    let n = basis.n_sites();
    let block = basis.phonon_dim();
    let s = basis.n_states();
    let pos: Vec<usize> = (0..n)
        .map(|site| {
            basis
                .mode_position(Mode { kind: ModeKind::Peierls, site })
                .ok_or(HamiltonianError::MissingModes(ModeKind::Peierls))
        })
        .collect::<Result<_, _>>()?;
    let mut t = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let r = config.distance(i, j);
            if r == 0.0 {
                return Err(GeometryError::CoincidentSites { i, j }.into());
            }
            let g = spec.alpha / (r * r * r);
            // (mode, sign) pairs of the relative displacement x_i − x_j
            for (k, sign) in [(pos[i], 1.0), (pos[j], -1.0)] {
                let stride = basis.stride(k);
                for p in 0..block {
                    let nk = (p / stride) % s;
                    if nk + 1 >= s {
                        continue;
                    }
                    let amp = real(sign * g * ((nk + 1) as f64).sqrt());
                    let q = p + stride;
                    // |i,p> <-> |j,p+1_k> and |j,p> <-> |i,p+1_k>
                    for (a, b) in [(i * block + p, j * block + q), (j * block + p, i * block + q)] {
                        t.push((a, b, amp));
                        t.push((b, a, amp));
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(basis.dim(), t))
}

/// −iΓ/2 on every basis state with the excitation on the output site.
pub fn sink_term(basis: &BasisIndex, gamma: f64) -> Result<SparseMatrix, HamiltonianError> {
    if !(gamma >= 0.0) {
        return Err(HamiltonianError::NegativeGamma(gamma));
    }
    let out = basis.n_sites() - 1;
    let lo = out * basis.phonon_dim();
    let t = (lo..lo + basis.phonon_dim())
        .map(|i| (i, i, Complex64::new(0.0, -gamma / 2.0)))
        .collect();
    Ok(SparseMatrix::from_triplets(basis.dim(), t))
}

#[derive(Debug, Clone)]
pub struct AssembledHamiltonian {
    pub basis: BasisIndex,
    pub matrix: SparseMatrix,
    pub gamma: f64,
    pub has_sink: bool,
    pub holstein: bool,
    pub peierls: bool,
}

impl AssembledHamiltonian {
    /// Builds H_S + H_B + H_SB in the basis implied by `spec`, without sink.
    pub fn closed(config: &NetworkConfig, spec: &PhononSpec) -> Result<Self, HamiltonianError> {
        spec.check(config.n_sites)?;
        let coupling = config.coupling_matrix()?;
        let basis = BasisIndex::for_spec(config.n_sites, spec)?;
        let mut h = build_system(&basis, &coupling);
        let holstein = spec.has(ModeKind::Holstein);
        let peierls = spec.has(ModeKind::Peierls);
        if holstein || peierls {
            h = h.add(&build_bath(&basis, spec));
        }
        if holstein {
            h = h.add(&build_holstein(&basis, spec)?);
        }
        if peierls {
            h = h.add(&build_peierls(&basis, spec, config)?);
        }
        Ok(AssembledHamiltonian {
            basis,
            matrix: h,
            gamma: 0.0,
            has_sink: false,
            holstein,
            peierls,
        })
    }

    pub fn assemble(config: &NetworkConfig, spec: &PhononSpec, gamma: f64) -> Result<Self, HamiltonianError> {
        Self::closed(config, spec)?.add_sink(gamma)
    }

    pub fn add_sink(mut self, gamma: f64) -> Result<Self, HamiltonianError> {
        let sink = sink_term(&self.basis, gamma)?;
        self.matrix = self.matrix.add(&sink);
        self.gamma += gamma;
        self.has_sink = self.gamma > 0.0;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn output_site(&self) -> usize {
        self.basis.n_sites() - 1
    }
}
