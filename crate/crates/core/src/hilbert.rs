//! Single-excitation ⊗ truncated-Fock basis.
//!
//! Enumeration is site-major: index = site · S^M + Σ_k n_k · S^(M-1-k), where
//! S is the number of phonon states per mode and M the number of active
//! modes. Each site therefore owns one contiguous block of S^M indices.
//! Modes are ordered Holstein modes (sites 0..N) first, then Peierls modes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ModeKind, PhononSpec};

/// Default cap on the basis dimension.
pub const DEFAULT_MAX_DIM: usize = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("basis dimension {dim} exceeds the cap of {cap}")]
    Capacity { dim: u128, cap: usize },
    #[error("invalid basis parameters: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mode {
    pub kind: ModeKind,
    pub site: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub site: usize,
    pub occupations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisIndex {
    n_sites: usize,
    modes: Vec<Mode>,
    n_states: usize,
    block: usize,
    strides: Vec<usize>,
}

impl BasisIndex {
    pub fn build(n_sites: usize, modes: Vec<Mode>, n_states: usize) -> Result<Self, BasisError> {
        Self::build_with_cap(n_sites, modes, n_states, DEFAULT_MAX_DIM)
    }

    pub fn build_with_cap(
        n_sites: usize,
        modes: Vec<Mode>,
        n_states: usize,
        cap: usize,
    ) -> Result<Self, BasisError> {
        if n_sites < 2 {
            return Err(BasisError::Parameter(format!("need at least 2 sites, got {n_sites}")));
        }
        if n_states < 1 {
            return Err(BasisError::Parameter("n_phonon_states must be at least 1".into()));
        }
        if let Some(m) = modes.iter().find(|m| m.site >= n_sites) {
            return Err(BasisError::Parameter(format!("mode on site {} out of range", m.site)));
        }
        let dim = (n_sites as u128) * (n_states as u128).pow(modes.len() as u32);
        if dim > cap as u128 {
            return Err(BasisError::Capacity { dim, cap });
        }
        let m = modes.len();
        let mut strides = vec![1usize; m];
        for k in (0..m.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * n_states;
        }
        let block = n_states.pow(m as u32);
        Ok(BasisIndex {
            n_sites,
            modes,
            n_states,
            block,
            strides,
        })
    }

    /// Basis for the modes implied by a phonon spec on `n_sites` sites.
    pub fn for_spec(n_sites: usize, spec: &PhononSpec) -> Result<Self, BasisError> {
        let mut modes = Vec::new();
        for kind in [ModeKind::Holstein, ModeKind::Peierls] {
            if spec.has(kind) {
                modes.extend((0..n_sites).map(|site| Mode { kind, site }));
            }
        }
        Self::build(n_sites, modes, spec.n_phonon_states)
    }

    pub fn dim(&self) -> usize {
        self.n_sites * self.block
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Number of phonon configurations per site; the size of each site block.
    pub fn phonon_dim(&self) -> usize {
        self.block
    }

    pub fn mode_position(&self, mode: Mode) -> Option<usize> {
        self.modes.iter().position(|m| *m == mode)
    }

    pub fn stride(&self, mode_pos: usize) -> usize {
        self.strides[mode_pos]
    }

    pub fn site_of(&self, index: usize) -> usize {
        index / self.block
    }

    /// Occupation of mode `mode_pos` in basis vector `index`.
    pub fn occupation(&self, index: usize, mode_pos: usize) -> usize {
        (index % self.block) / self.strides[mode_pos] % self.n_states
    }

    pub fn index_of(&self, state: &BasisState) -> usize {
        debug_assert_eq!(state.occupations.len(), self.modes.len());
        let phonon: usize = state
            .occupations
            .iter()
            .zip(&self.strides)
            .map(|(n, s)| n * s)
            .sum();
        state.site * self.block + phonon
    }

    pub fn state_of(&self, index: usize) -> BasisState {
        BasisState {
            site: self.site_of(index),
            occupations: (0..self.modes.len()).map(|k| self.occupation(index, k)).collect(),
        }
    }

    /// Index of the excitation on `site` with every mode in its vacuum.
    pub fn vacuum_index(&self, site: usize) -> usize {
        site * self.block
    }
}

/// ⟨bra| (b† + b) |ket⟩ for the given mode position. Non-zero only when the
/// two states share the site and all other occupations and differ by one
/// quantum in this mode.
pub fn phonon_displacement_element(mode_pos: usize, bra: &BasisState, ket: &BasisState) -> f64 {
    if bra.site != ket.site || bra.occupations.len() != ket.occupations.len() {
        return 0.0;
    }
    let others_equal = bra
        .occupations
        .iter()
        .zip(&ket.occupations)
        .enumerate()
        .all(|(k, (a, b))| k == mode_pos || a == b);
    if !others_equal {
        return 0.0;
    }
    let a = bra.occupations[mode_pos];
    let b = ket.occupations[mode_pos];
    if a == b + 1 || b == a + 1 {
        (a.max(b) as f64).sqrt()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modes(kind: ModeKind, n: usize) -> Vec<Mode> {
        (0..n).map(|site| Mode { kind, site }).collect()
    }

    #[test]
    fn dimensions() {
        let b = BasisIndex::build(7, modes(ModeKind::Holstein, 7), 3).unwrap();
        assert_eq!(b.dim(), 15309);
        let b = BasisIndex::build(2, vec![], 3).unwrap();
        assert_eq!(b.dim(), 2);
        let b = BasisIndex::build(4, modes(ModeKind::Peierls, 4), 4).unwrap();
        assert_eq!(b.dim(), 1024);
    }

    #[test]
    fn capacity_error_carries_dim() {
        let err = BasisIndex::build_with_cap(8, modes(ModeKind::Holstein, 8), 3, 1000).unwrap_err();
        assert_eq!(err, BasisError::Capacity { dim: 52488, cap: 1000 });
    }

    #[test]
    fn round_trip_and_order() {
        let b = BasisIndex::build(3, modes(ModeKind::Holstein, 3), 3).unwrap();
        let mut prev: Option<BasisState> = None;
        for i in 0..b.dim() {
            let s = b.state_of(i);
            assert_eq!(b.index_of(&s), i);
            if let Some(p) = prev {
                assert!((p.site, p.occupations) < (s.site, s.occupations.clone()));
            }
            prev = Some(s);
        }
        assert_eq!(b.state_of(b.vacuum_index(2)).occupations, vec![0, 0, 0]);
    }

    #[test]
    fn displacement_elements() {
        let st = |n: usize| BasisState { site: 0, occupations: vec![n] };
        assert_eq!(phonon_displacement_element(0, &st(1), &st(0)), 1.0);
        assert!((phonon_displacement_element(0, &st(2), &st(1)) - 2f64.sqrt()).abs() < 1e-15);
        assert!((phonon_displacement_element(0, &st(1), &st(2)) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(phonon_displacement_element(0, &st(0), &st(0)), 0.0);
        assert_eq!(phonon_displacement_element(0, &st(0), &st(2)), 0.0);
    }

    #[test]
    fn displacement_matrix_is_symmetric_tridiagonal() {
        let b = BasisIndex::build(2, modes(ModeKind::Holstein, 2), 4).unwrap();
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                let (si, sj) = (b.state_of(i), b.state_of(j));
                let x = phonon_displacement_element(0, &si, &sj);
                assert_eq!(x, phonon_displacement_element(0, &sj, &si));
                if x != 0.0 {
                    assert_eq!(si.occupations[0].abs_diff(sj.occupations[0]), 1);
                }
            }
        }
    }
}
