//! Run configuration: TOML schema, `key=value` overrides, range checks, and
//! conversion into core types.
//!
//! Units are in the key names: `_angstrom`, `_ps` (times), `_per_ps`
//! (rates and frequencies), `_over_T` (multiples of the benchmark time).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qnet_core::bayesopt::BoSettings;
use qnet_core::dynamics::DynamicsOptions;
use qnet_core::experiments::{gamma_from_inverse, Mask};
use qnet_core::geometry::{
    sample_config, ModeKind, NetworkConfig, PhononSpec, Vec3, DEFAULT_ALPHA, DEFAULT_CUBE_EDGE,
    DEFAULT_DIPOLE_CONSTANT, DEFAULT_G_HOLSTEIN, DEFAULT_MIN_SEPARATION, DEFAULT_PHONON_STATES,
};
use qnet_core::hamiltonian::DEFAULT_DENSE_THRESHOLD;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Optimize,
    GammaScan,
    Classical,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub network: NetworkSection,
    pub phonons: PhononSection,
    pub sink: SinkSection,
    pub optimizer: OptimizerSection,
    pub scan: ScanSection,
    pub simulate: SimulateSection,
    pub classical: ClassicalSection,
    pub dynamics: DynamicsSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Linear,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub n_sites: usize,
    pub cube_edge_angstrom: f64,
    pub min_separation_angstrom: f64,
    pub dipole_constant: f64,
    /// All N positions including the endpoints.
    pub positions: Option<Vec<Vec3>>,
    /// The N−2 intermediate positions; endpoints are placed automatically.
    pub intermediates: Option<Vec<Vec3>>,
    /// Used when no positions are given.
    pub layout: Layout,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            n_sites: 2,
            cube_edge_angstrom: DEFAULT_CUBE_EDGE,
            min_separation_angstrom: DEFAULT_MIN_SEPARATION,
            dipole_constant: DEFAULT_DIPOLE_CONSTANT,
            positions: None,
            intermediates: None,
            layout: Layout::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhononKind {
    None,
    Holstein,
    Peierls,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhononSection {
    pub kind: PhononKind,
    pub g_holstein_per_ps: f64,
    pub alpha: f64,
    pub n_phonon_states: usize,
    /// One value per site, or a single value applied to every site.
    pub holstein_freqs_per_ps: Vec<f64>,
    pub peierls_freqs_per_ps: Vec<f64>,
    pub freq_min_per_ps: f64,
    pub freq_max_per_ps: f64,
}

impl Default for PhononSection {
    fn default() -> Self {
        PhononSection {
            kind: PhononKind::None,
            g_holstein_per_ps: DEFAULT_G_HOLSTEIN,
            alpha: DEFAULT_ALPHA,
            n_phonon_states: DEFAULT_PHONON_STATES,
            holstein_freqs_per_ps: vec![10.0],
            peierls_freqs_per_ps: vec![10.0],
            freq_min_per_ps: 1.25,
            freq_max_per_ps: 125.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct SinkSection {
    pub gamma_per_ps: Option<f64>,
    pub inv_gamma_over_T: Option<f64>,
    /// A `gamma_scan.csv`; its marked minimum supplies Γ.
    pub from_scan: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqKind {
    Holstein,
    Peierls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub mask: Mask,
    /// Which mode kind's frequencies are free; defaults to the active kind.
    pub freq_kind: Option<FreqKind>,
    /// Defaults to 10 × (number of free parameters).
    pub budget: Option<usize>,
    pub init_count: Option<usize>,
    pub kappa: f64,
    pub seed: u64,
    pub restarts: usize,
    pub n_candidates: usize,
    pub n_polish: usize,
    pub fit_starts: usize,
    /// Evaluate the configured network first, before the random draws.
    pub start_from_network: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = BoSettings::default();
        OptimizerSection {
            mask: Mask::Positions,
            freq_kind: None,
            budget: None,
            init_count: None,
            kappa: d.kappa,
            seed: 0,
            restarts: 1,
            n_candidates: d.n_candidates,
            n_polish: d.n_polish,
            fit_starts: d.fit_starts,
            start_from_network: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct ScanSection {
    pub inv_gamma_min_over_T: f64,
    pub inv_gamma_max_over_T: f64,
    pub points: usize,
    /// Explicit grid; overrides min/max/points.
    pub inv_gamma_over_T: Option<Vec<f64>>,
    /// Re-evaluate each point's best network at every other grid Γ.
    pub cross_evaluate: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection { inv_gamma_min_over_T: 1e-4, inv_gamma_max_over_T: 1e-1, points: 13, inv_gamma_over_T: None, cross_evaluate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct SimulateSection {
    pub t_max_over_T: f64,
    pub steps: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { t_max_over_T: 2.0, steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalSection {
    pub k: usize,
}

impl Default for ClassicalSection {
    fn default() -> Self {
        ClassicalSection { k: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub dense_threshold: usize,
    pub krylov_dim: usize,
    pub krylov_tolerance: f64,
    pub dark_tolerance_per_ps: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        let d = DynamicsOptions::default();
        DynamicsSection {
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            krylov_dim: d.krylov_dim,
            krylov_tolerance: d.krylov_tolerance,
            dark_tolerance_per_ps: d.dark_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("qnet-out") }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: None,
            network: NetworkSection::default(),
            phonons: PhononSection::default(),
            sink: SinkSection::default(),
            optimizer: OptimizerSection::default(),
            scan: ScanSection::default(),
            simulate: SimulateSection::default(),
            classical: ClassicalSection::default(),
            dynamics: DynamicsSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Set `dotted.key` in a TOML table; the value is parsed as TOML when
/// possible and taken as a string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(vec![format!("override `{spec}` is not key=value")]))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(vec![format!("override `{key}`: `{p}` is not a table")]))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Validation(vec![format!("{}: {e}", p.display())]))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into::<RunConfig>()
            .map_err(|e| CliError::Validation(vec![e.to_string()]))
    }

    /// Range checks on every numeric field.
    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut req = |ok: bool, msg: String| {
            if !ok {
                v.push(msg)
            }
        };
        let n = &self.network;
        req(n.n_sites >= 2, format!("network.n_sites = {} must be at least 2", n.n_sites));
        req(n.cube_edge_angstrom > 0.0 && n.cube_edge_angstrom.is_finite(), "network.cube_edge_angstrom must be positive".into());
        req(n.min_separation_angstrom >= 0.0, "network.min_separation_angstrom must be non-negative".into());
        req(n.dipole_constant > 0.0 && n.dipole_constant.is_finite(), "network.dipole_constant must be positive".into());
        req(!(n.positions.is_some() && n.intermediates.is_some()), "give network.positions or network.intermediates, not both".into());
        if let Some(p) = &n.positions {
            req(p.len() == n.n_sites, format!("network.positions has {} entries, n_sites is {}", p.len(), n.n_sites));
        }
        if let Some(p) = &n.intermediates {
            req(p.len() + 2 == n.n_sites, format!("network.intermediates has {} entries, expected {}", p.len(), n.n_sites.saturating_sub(2)));
        }
        let ph = &self.phonons;
        req(ph.g_holstein_per_ps >= 0.0 && ph.g_holstein_per_ps.is_finite(), "phonons.g_holstein_per_ps must be non-negative".into());
        req(ph.alpha >= 0.0 && ph.alpha.is_finite(), "phonons.alpha must be non-negative".into());
        req((1..=10).contains(&ph.n_phonon_states), "phonons.n_phonon_states must be in 1..=10".into());
        req(ph.freq_min_per_ps > 0.0 && ph.freq_max_per_ps > ph.freq_min_per_ps, "phonons frequency range must satisfy 0 < min < max".into());
        for (name, f) in [("holstein", &ph.holstein_freqs_per_ps), ("peierls", &ph.peierls_freqs_per_ps)] {
            req(f.len() == 1 || f.len() == n.n_sites, format!("phonons.{name}_freqs_per_ps needs 1 or n_sites values"));
            req(f.iter().all(|w| *w > 0.0 && w.is_finite()), format!("phonons.{name}_freqs_per_ps must be positive"));
        }
        let s = &self.sink;
        let given = [s.gamma_per_ps.is_some(), s.inv_gamma_over_T.is_some(), s.from_scan.is_some()].iter().filter(|b| **b).count();
        req(given <= 1, "give at most one of sink.gamma_per_ps, sink.inv_gamma_over_T, sink.from_scan".into());
        if let Some(g) = s.gamma_per_ps {
            req(g >= 0.0 && g.is_finite(), "sink.gamma_per_ps must be non-negative".into());
        }
        if let Some(x) = s.inv_gamma_over_T {
            req(x > 0.0 && x.is_finite(), "sink.inv_gamma_over_T must be positive".into());
        }
        let o = &self.optimizer;
        req(o.kappa >= 0.0 && o.kappa.is_finite(), "optimizer.kappa must be non-negative".into());
        req(o.restarts >= 1, "optimizer.restarts must be at least 1".into());
        req(o.n_candidates >= 2, "optimizer.n_candidates must be at least 2".into());
        if let Some(b) = o.budget {
            req(b >= 2, "optimizer.budget must be at least 2".into());
        }
        if let Some(c) = o.init_count {
            req(c >= 2 && o.budget.is_none_or(|b| c <= b), "optimizer.init_count must be in 2..=budget".into());
        }
        let sc = &self.scan;
        req(sc.inv_gamma_min_over_T > 0.0 && sc.inv_gamma_max_over_T >= sc.inv_gamma_min_over_T, "scan range must satisfy 0 < min ≤ max".into());
        req(sc.points >= 1, "scan.points must be at least 1".into());
        if let Some(g) = &sc.inv_gamma_over_T {
            req(!g.is_empty() && g.iter().all(|x| *x > 0.0 && x.is_finite()), "scan.inv_gamma_over_T must be positive".into());
        }
        req(self.simulate.t_max_over_T > 0.0 && self.simulate.t_max_over_T.is_finite(), "simulate.t_max_over_T must be positive".into());
        req(self.simulate.steps >= 1, "simulate.steps must be at least 1".into());
        req(self.classical.k >= 1, "classical.k must be at least 1".into());
        let d = &self.dynamics;
        req(d.krylov_dim >= 2, "dynamics.krylov_dim must be at least 2".into());
        req(d.krylov_tolerance > 0.0, "dynamics.krylov_tolerance must be positive".into());
        req(d.dark_tolerance_per_ps > 0.0, "dynamics.dark_tolerance_per_ps must be positive".into());
        v
    }

    pub fn digest(&self) -> String {
        qnet_core::bayesopt::digest(&serde_json::to_string(self).expect("serializable"))
    }

    /// Network configuration; random layouts use `optimizer.seed`.
    pub fn network_config(&self) -> Result<NetworkConfig, CliError> {
        let n = &self.network;
        let mut cfg = if let Some(p) = &n.positions {
            NetworkConfig {
                n_sites: n.n_sites,
                cube_edge: n.cube_edge_angstrom,
                positions: p.clone(),
                min_separation: n.min_separation_angstrom,
                dipole_constant: n.dipole_constant,
            }
        } else if let Some(p) = &n.intermediates {
            NetworkConfig::with_intermediates(n.cube_edge_angstrom, p)
        } else {
            match n.layout {
                Layout::Linear => NetworkConfig::linear_chain(n.n_sites, n.cube_edge_angstrom),
                Layout::Random => sample_config(self.optimizer.seed, n.n_sites, n.cube_edge_angstrom, n.min_separation_angstrom, 100_000)
                    .map_err(|e| CliError::Validation(vec![e.to_string()]))?,
            }
        };
        cfg.min_separation = n.min_separation_angstrom;
        cfg.dipole_constant = n.dipole_constant;
        Ok(cfg)
    }

    pub fn phonon_spec(&self) -> PhononSpec {
        let ph = &self.phonons;
        let n = self.network.n_sites;
        let expand = |f: &Vec<f64>| if f.len() == 1 { vec![f[0]; n] } else { f.clone() };
        let mut spec = PhononSpec {
            holstein_freqs: Vec::new(),
            peierls_freqs: Vec::new(),
            g_holstein: ph.g_holstein_per_ps,
            alpha: ph.alpha,
            n_phonon_states: ph.n_phonon_states,
        };
        if matches!(ph.kind, PhononKind::Holstein | PhononKind::Both) {
            spec.holstein_freqs = expand(&ph.holstein_freqs_per_ps);
        }
        if matches!(ph.kind, PhononKind::Peierls | PhononKind::Both) {
            spec.peierls_freqs = expand(&ph.peierls_freqs_per_ps);
        }
        spec
    }

    /// Mode kind whose frequencies the optimizer may move.
    pub fn free_freq_kind(&self) -> Option<ModeKind> {
        match (self.optimizer.freq_kind, self.phonons.kind) {
            (Some(FreqKind::Holstein), _) => Some(ModeKind::Holstein),
            (Some(FreqKind::Peierls), _) => Some(ModeKind::Peierls),
            (None, PhononKind::Holstein) => Some(ModeKind::Holstein),
            (None, PhononKind::Peierls) => Some(ModeKind::Peierls),
            _ => None,
        }
    }

    pub fn dynamics_options(&self) -> DynamicsOptions {
        DynamicsOptions {
            dense_threshold: self.dynamics.dense_threshold,
            krylov_dim: self.dynamics.krylov_dim,
            krylov_tolerance: self.dynamics.krylov_tolerance,
            dark_tolerance: self.dynamics.dark_tolerance_per_ps,
            ..DynamicsOptions::default()
        }
    }

    pub fn bo_settings(&self, dim: usize) -> BoSettings {
        let o = &self.optimizer;
        BoSettings {
            budget: o.budget.unwrap_or(10 * dim),
            init_count: o.init_count,
            kappa: o.kappa,
            seed: o.seed,
            n_candidates: o.n_candidates,
            n_polish: o.n_polish,
            fit_starts: o.fit_starts,
            start: None,
        }
    }

    /// Γ in ps⁻¹, or `None` if no sink was specified.
    pub fn gamma(&self, benchmark_time: f64) -> Result<Option<f64>, CliError> {
        let s = &self.sink;
        if let Some(g) = s.gamma_per_ps {
            return Ok(Some(g));
        }
        if let Some(x) = s.inv_gamma_over_T {
            return Ok(Some(gamma_from_inverse(x, benchmark_time)));
        }
        if let Some(path) = &s.from_scan {
            return crate::commands::gamma_from_scan(path, benchmark_time).map(Some);
        }
        Ok(None)
    }

    pub fn scan_grid(&self) -> Vec<f64> {
        let s = &self.scan;
        s.inv_gamma_over_T
            .clone()
            .unwrap_or_else(|| qnet_core::experiments::log_grid(s.inv_gamma_min_over_T, s.inv_gamma_max_over_T, s.points))
    }
}
