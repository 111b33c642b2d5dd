//! Network configurations in a cube, pairwise dipolar couplings and the
//! dimensionless phonon-coupling diagnostics.
//!
//! Units throughout: lengths in Å, energies and frequencies in ps⁻¹ (ħ = 1),
//! times in ps. Site 0 is the input and site `n_sites - 1` the output; both
//! sit on the x axis at `∓D/2`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CUBE_EDGE: f64 = 200.0;
pub const DEFAULT_MIN_SEPARATION: f64 = 5.0;
/// Dipolar coupling constant c in ħ·Å³·ps⁻¹; gives T = 4π ps at D = 200 Å.
pub const DEFAULT_DIPOLE_CONSTANT: f64 = 1.0e6;
pub const DEFAULT_G_HOLSTEIN: f64 = 1.45;
pub const DEFAULT_ALPHA: f64 = 15.0;
pub const DEFAULT_PHONON_STATES: usize = 3;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("sites {i} and {j} coincide")]
    CoincidentSites { i: usize, j: usize },
    #[error("network needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("expected {expected} positions, got {got}")]
    PositionCount { expected: usize, got: usize },
    #[error("maximum hopping amplitude is not positive")]
    ZeroCoupling,
    #[error("phonon spec has {got} frequencies for {expected} sites")]
    FrequencyCount { expected: usize, got: usize },
    #[error("could not place site {site} after {attempts} attempts")]
    Infeasible { site: usize, attempts: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// A single constraint violation reported by [`NetworkConfig::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    PositionCount { expected: usize, got: usize },
    EndpointMisplaced { site: usize, position: Vec3 },
    OutOfCube { site: usize, axis: usize, value: f64 },
    TooClose { i: usize, j: usize, distance: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::PositionCount { expected, got } => {
                write!(f, "expected {expected} positions, got {got}")
            }
            Violation::EndpointMisplaced { site, position } => {
                write!(f, "endpoint site {} misplaced at {:?}", site + 1, position)
            }
            Violation::OutOfCube { site, axis, value } => write!(
                f,
                "site {} coordinate {} = {value} lies outside the cube",
                site + 1,
                ["x", "y", "z"][*axis]
            ),
            Violation::TooClose { i, j, distance } => write!(
                f,
                "sites {} and {} are {distance:.6} Å apart",
                i + 1,
                j + 1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_sites: usize,
    pub cube_edge: f64,
    pub positions: Vec<Vec3>,
    pub min_separation: f64,
    pub dipole_constant: f64,
}

pub fn input_position(cube_edge: f64) -> Vec3 {
    [-cube_edge / 2.0, 0.0, 0.0]
}

pub fn output_position(cube_edge: f64) -> Vec3 {
    [cube_edge / 2.0, 0.0, 0.0]
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl NetworkConfig {
    /// Builds a configuration with the endpoints in place and the given
    /// intermediate sites between them, using the default constants.
    pub fn with_intermediates(cube_edge: f64, intermediates: &[Vec3]) -> Self {
        let mut positions = Vec::with_capacity(intermediates.len() + 2);
        positions.push(input_position(cube_edge));
        positions.extend_from_slice(intermediates);
        positions.push(output_position(cube_edge));
        NetworkConfig {
            n_sites: positions.len(),
            cube_edge,
            positions,
            min_separation: DEFAULT_MIN_SEPARATION,
            dipole_constant: DEFAULT_DIPOLE_CONSTANT,
        }
    }

    /// Equally spaced sites on the input-output axis.
    pub fn linear_chain(n_sites: usize, cube_edge: f64) -> Self {
        assert!(n_sites >= 2);
        let step = cube_edge / (n_sites - 1) as f64;
        let inner: Vec<Vec3> = (1..n_sites - 1)
            .map(|k| [-cube_edge / 2.0 + step * k as f64, 0.0, 0.0])
            .collect();
        Self::with_intermediates(cube_edge, &inner)
    }

    pub fn intermediates(&self) -> &[Vec3] {
        let n = self.positions.len();
        if n < 2 {
            &[]
        } else {
            &self.positions[1..n - 1]
        }
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance(&self.positions[i], &self.positions[j])
    }

    /// Reports every violated invariant. An empty list means the
    /// configuration is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.positions.len() != self.n_sites || self.n_sites < 2 {
            out.push(Violation::PositionCount {
                expected: self.n_sites,
                got: self.positions.len(),
            });
            return out;
        }
        let half = self.cube_edge / 2.0;
        let last = self.n_sites - 1;
        for (site, want) in [(0, input_position(self.cube_edge)), (last, output_position(self.cube_edge))] {
            if self.positions[site] != want {
                out.push(Violation::EndpointMisplaced {
                    site,
                    position: self.positions[site],
                });
            }
        }
        for (k, p) in self.intermediates().iter().enumerate() {
            for (axis, &value) in p.iter().enumerate() {
                if !(value >= -half && value <= half) {
                    out.push(Violation::OutOfCube { site: k + 1, axis, value });
                }
            }
        }
        for i in 0..self.n_sites {
            for j in i + 1..self.n_sites {
                let d = self.distance(i, j);
                if !(d > self.min_separation) {
                    out.push(Violation::TooClose { i, j, distance: d });
                }
            }
        }
        out
    }

    pub fn coupling_matrix(&self) -> Result<CouplingMatrix, GeometryError> {
        if self.n_sites < 2 {
            return Err(GeometryError::TooFewSites(self.n_sites));
        }
        if self.positions.len() != self.n_sites {
            return Err(GeometryError::PositionCount {
                expected: self.n_sites,
                got: self.positions.len(),
            });
        }
        let n = self.n_sites;
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let r = self.distance(i, j);
                if r == 0.0 {
                    return Err(GeometryError::CoincidentSites { i, j });
                }
                let vij = self.dipole_constant / (r * r * r);
                v[i * n + j] = vij;
                v[j * n + i] = vij;
            }
        }
        Ok(CouplingMatrix { n, v })
    }

    /// Direct input-output coupling c / D³.
    pub fn endpoint_coupling(&self) -> f64 {
        self.dipole_constant / self.cube_edge.powi(3)
    }

    /// Half Rabi period of the bare input-output pair, π / (2 c/D³).
    pub fn benchmark_time(&self) -> f64 {
        PI / (2.0 * self.endpoint_coupling())
    }

    /// Largest distance of an intermediate site from the input-output axis,
    /// as a fraction of the cube edge.
    pub fn linearity(&self) -> f64 {
        self.intermediates()
            .iter()
            .map(|p| p[1].hypot(p[2]))
            .fold(0.0, f64::max)
            / self.cube_edge
    }
}

/// Symmetric matrix of hopping amplitudes V_ij = c / r_ij³ with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    v: Vec<f64>,
}

impl CouplingMatrix {
    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.n + j]
    }

    pub fn max_offdiagonal(&self) -> f64 {
        self.v.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Holstein,
    Peierls,
}

/// Phonon parameters. An empty frequency list means that kind of mode is
/// absent from the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhononSpec {
    pub holstein_freqs: Vec<f64>,
    pub peierls_freqs: Vec<f64>,
    pub g_holstein: f64,
    pub alpha: f64,
    pub n_phonon_states: usize,
}

impl Default for PhononSpec {
    fn default() -> Self {
        PhononSpec {
            holstein_freqs: Vec::new(),
            peierls_freqs: Vec::new(),
            g_holstein: DEFAULT_G_HOLSTEIN,
            alpha: DEFAULT_ALPHA,
            n_phonon_states: DEFAULT_PHONON_STATES,
        }
    }
}

impl PhononSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn holstein(freqs: Vec<f64>, g_holstein: f64) -> Self {
        PhononSpec {
            holstein_freqs: freqs,
            g_holstein,
            ..Self::default()
        }
    }

    pub fn peierls(freqs: Vec<f64>, alpha: f64) -> Self {
        PhononSpec {
            peierls_freqs: freqs,
            alpha,
            ..Self::default()
        }
    }

    pub fn with_states(mut self, n_phonon_states: usize) -> Self {
        self.n_phonon_states = n_phonon_states;
        self
    }

    pub fn has(&self, kind: ModeKind) -> bool {
        !self.freqs(kind).is_empty()
    }

    pub fn freqs(&self, kind: ModeKind) -> &[f64] {
        match kind {
            ModeKind::Holstein => &self.holstein_freqs,
            ModeKind::Peierls => &self.peierls_freqs,
        }
    }

    pub fn check(&self, n_sites: usize) -> Result<(), GeometryError> {
        for kind in [ModeKind::Holstein, ModeKind::Peierls] {
            let f = self.freqs(kind);
            if !f.is_empty() && f.len() != n_sites {
                return Err(GeometryError::FrequencyCount {
                    expected: n_sites,
                    got: f.len(),
                });
            }
            if let Some(w) = f.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
                return Err(GeometryError::Parameter(format!(
                    "phonon frequency must be positive, got {w}"
                )));
            }
        }
        if self.n_phonon_states < 1 {
            return Err(GeometryError::Parameter(
                "n_phonon_states must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Dimensionless coupling strengths λ_i, one per site.
///
/// Holstein: `2 g² / (ω_i V_max)`. Peierls: the mean over partners j ≠ i of
/// `2 α² / (ω_i r_ij⁶ V_max)`. Diagnostics only.
pub fn effective_lambdas(
    config: &NetworkConfig,
    spec: &PhononSpec,
    kind: ModeKind,
) -> Result<Vec<f64>, GeometryError> {
    let coupling = config.coupling_matrix()?;
    let v_max = coupling.max_offdiagonal();
    if !(v_max > 0.0) {
        return Err(GeometryError::ZeroCoupling);
    }
    let freqs = spec.freqs(kind);
    if freqs.len() != config.n_sites {
        return Err(GeometryError::FrequencyCount {
            expected: config.n_sites,
            got: freqs.len(),
        });
    }
    let n = config.n_sites;
    let lambdas = freqs
        .iter()
        .enumerate()
        .map(|(i, &w)| match kind {
            ModeKind::Holstein => 2.0 * spec.g_holstein.powi(2) / (w * v_max),
            ModeKind::Peierls => {
                let sum: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| 2.0 * spec.alpha.powi(2) / (w * config.distance(i, j).powi(6) * v_max))
                    .sum();
                sum / (n - 1) as f64
            }
        })
        .collect();
    Ok(lambdas)
}

/// Draws a uniformly random feasible configuration by per-site rejection
/// sampling. Deterministic in `seed`.
pub fn sample_config(
    seed: u64,
    n_sites: usize,
    cube_edge: f64,
    min_separation: f64,
    max_attempts: usize,
) -> Result<NetworkConfig, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_config_with(&mut rng, n_sites, cube_edge, min_separation, max_attempts)
}

pub fn sample_config_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_sites: usize,
    cube_edge: f64,
    min_separation: f64,
    max_attempts: usize,
) -> Result<NetworkConfig, GeometryError> {
    if n_sites < 2 {
        return Err(GeometryError::TooFewSites(n_sites));
    }
    let mut config = NetworkConfig::with_intermediates(cube_edge, &[]);
    config.min_separation = min_separation;
    if distance(&config.positions[0], &config.positions[1]) <= min_separation {
        return Err(GeometryError::Infeasible { site: 1, attempts: 0 });
    }
    let output = config.positions.pop().expect("two endpoints");
    let half = cube_edge / 2.0;
    for site in 1..n_sites - 1 {
        let mut placed = false;
        for _ in 0..max_attempts {
            let p = [
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
            ];
            let clear = config
                .positions
                .iter()
                .chain(std::iter::once(&output))
                .all(|q| distance(&p, q) > min_separation);
            if clear {
                config.positions.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(GeometryError::Infeasible {
                site,
                attempts: max_attempts,
            });
        }
    }
    config.positions.push(output);
    config.n_sites = n_sites;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_site(mid: Vec3) -> NetworkConfig {
        NetworkConfig::with_intermediates(200.0, &[mid])
    }

    #[test]
    fn endpoints_only_is_valid() {
        let c = NetworkConfig::with_intermediates(200.0, &[]);
        assert_eq!(c.n_sites, 2);
        assert!(c.validate().is_empty());
    }

    #[test]
    fn centre_site_is_valid() {
        assert!(three_site([0.0, 0.0, 0.0]).validate().is_empty());
    }

    #[test]
    fn site_next_to_input_violates_separation() {
        let v = three_site([-99.0, 0.0, 0.0]).validate();
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::TooClose { i, j, distance } => {
                assert_eq!((*i, *j), (0, 1));
                assert!((distance - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn out_of_cube_is_reported() {
        let v = three_site([0.0, 101.0, 0.0]).validate();
        assert!(matches!(v[0], Violation::OutOfCube { site: 1, axis: 1, .. }));
    }

    #[test]
    fn two_site_coupling_and_benchmark() {
        let c = NetworkConfig::with_intermediates(200.0, &[]);
        let v = c.coupling_matrix().unwrap();
        assert!((v.get(0, 1) - 0.125).abs() < 1e-15);
        assert_eq!(v.get(0, 0), 0.0);
        assert!((c.benchmark_time() - 4.0 * PI).abs() < 1e-12);
        // T · 2V = π
        assert!((c.benchmark_time() * 2.0 * c.endpoint_coupling() - PI).abs() < 1e-12);
    }

    #[test]
    fn doubling_cube_scales_benchmark_by_eight() {
        let a = NetworkConfig::with_intermediates(200.0, &[]);
        let b = NetworkConfig::with_intermediates(400.0, &[]);
        assert!((b.benchmark_time() / a.benchmark_time() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_sites_are_rejected() {
        let c = NetworkConfig::with_intermediates(200.0, &[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(
            c.coupling_matrix(),
            Err(GeometryError::CoincidentSites { i: 1, j: 2 })
        );
    }

    #[test]
    fn collinear_third_neighbour_is_eighth() {
        let c = NetworkConfig::linear_chain(3, 200.0);
        let v = c.coupling_matrix().unwrap();
        assert!((v.get(0, 2) - v.get(0, 1) / 8.0).abs() < 1e-15);
    }

    #[test]
    fn holstein_lambda_two_sites() {
        let c = NetworkConfig::with_intermediates(200.0, &[]);
        let spec = PhononSpec::holstein(vec![1.25, 1.25], 1.45);
        let l = effective_lambdas(&c, &spec, ModeKind::Holstein).unwrap();
        let want = 2.0 * 1.45f64.powi(2) / (1.25 * 0.125);
        assert!((l[0] - want).abs() < 1e-12);
        assert!((want - 26.912).abs() < 1e-3);
        let spec2 = PhononSpec::holstein(vec![2.5, 2.5], 1.45);
        let l2 = effective_lambdas(&c, &spec2, ModeKind::Holstein).unwrap();
        assert!((l2[0] * 2.0 - l[0]).abs() < 1e-12);
    }

    #[test]
    fn peierls_lambda_two_sites() {
        let c = NetworkConfig::with_intermediates(200.0, &[]);
        let spec = PhononSpec::peierls(vec![1.25, 1.25], 15.0);
        let l = effective_lambdas(&c, &spec, ModeKind::Peierls).unwrap();
        let want = 2.0 * 225.0 / (1.25 * 200f64.powi(6) * 0.125);
        assert!(((l[0] - want) / want).abs() < 1e-12);
        assert!((l[1] - 4.5e-11).abs() < 1e-13);
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let a = sample_config(11, 8, 200.0, 5.0, 10_000).unwrap();
        let b = sample_config(11, 8, 200.0, 5.0, 10_000).unwrap();
        assert_eq!(a, b);
        assert!(a.validate().is_empty());
        assert_eq!(a.n_sites, 8);
    }

    #[test]
    fn sampling_fails_when_infeasible() {
        let r_min = 200.0 * 3f64.sqrt() + 1.0;
        assert!(matches!(
            sample_config(1, 3, 200.0, r_min, 100),
            Err(GeometryError::Infeasible { .. })
        ));
    }

    #[test]
    fn linear_chain_linearity_is_zero() {
        let c = NetworkConfig::linear_chain(6, 200.0);
        assert_eq!(c.linearity(), 0.0);
        assert!(c.validate().is_empty());
    }
}
