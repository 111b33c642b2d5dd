//! Classical hopping baseline: the excitation visits every site once, from
//! input to output, and each hop i→j takes the two-site half Rabi period
//! π/(2V_ij).

use std::io::Write;

use itertools::Itertools;
use thiserror::Error;

use crate::geometry::{GeometryError, NetworkConfig};

/// Largest network for which paths are enumerated ((N−2)! paths).
pub const MAX_ENUMERATION_SITES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error("path enumeration limited to {max} sites, got {n}")]
    Capacity { n: usize, max: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("requested {k} paths but only {available} exist")]
    TooMany { k: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalPath {
    pub sites: Vec<usize>,
    pub hop_times: Vec<f64>,
    pub total: f64,
}

/// Every site order starting at 0, ending at N−1 and visiting each
/// intermediate site once, in lexicographic order.
pub fn enumerate_paths(n_sites: usize) -> Result<Vec<Vec<usize>>, ClassicalError> {
    if n_sites > MAX_ENUMERATION_SITES {
        return Err(ClassicalError::Capacity { n: n_sites, max: MAX_ENUMERATION_SITES });
    }
    if n_sites < 2 {
        return Err(GeometryError::TooFewSites(n_sites).into());
    }
    let last = n_sites - 1;
    Ok((1..last)
        .permutations(n_sites - 2)
        .map(|mid| std::iter::once(0).chain(mid).chain(std::iter::once(last)).collect())
        .collect())
}

/// Hop times π/(2V_ij) along `sites` and their sum.
pub fn path_time(sites: &[usize], config: &NetworkConfig) -> Result<ClassicalPath, ClassicalError> {
    let coupling = config.coupling_matrix()?;
    Ok(path_time_with(sites, |i, j| coupling.get(i, j)))
}

fn path_time_with(sites: &[usize], v: impl Fn(usize, usize) -> f64) -> ClassicalPath {
    let hop_times: Vec<f64> = sites
        .windows(2)
        .map(|w| std::f64::consts::PI / (2.0 * v(w[0], w[1])))
        .collect();
    ClassicalPath { sites: sites.to_vec(), total: hop_times.iter().sum(), hop_times }
}

/// The `k` fastest paths, ascending in total time, ties broken by site
/// sequence.
pub fn fastest_k(config: &NetworkConfig, k: usize) -> Result<Vec<ClassicalPath>, ClassicalError> {
    let paths = enumerate_paths(config.n_sites)?;
    if k > paths.len() {
        return Err(ClassicalError::TooMany { k, available: paths.len() });
    }
    let coupling = config.coupling_matrix()?;
    let mut timed: Vec<ClassicalPath> = paths
        .iter()
        .map(|p| path_time_with(p, |i, j| coupling.get(i, j)))
        .collect();
    timed.sort_by(|a, b| a.total.total_cmp(&b.total).then_with(|| a.sites.cmp(&b.sites)));
    timed.truncate(k);
    Ok(timed)
}

/// Columns `rank,sites,hop_times_ps,total_ps,total_over_T`; sites are
/// 1-based and joined with `-`, hop times with `;`.
pub fn write_csv<W: Write>(mut w: W, paths: &[ClassicalPath], benchmark_time: f64) -> std::io::Result<()> {
    writeln!(w, "rank,sites,hop_times_ps,total_ps,total_over_T")?;
    for (rank, p) in paths.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{:.10e},{:.10e}",
            rank + 1,
            p.sites.iter().map(|s| s + 1).join("-"),
            p.hop_times.iter().map(|t| format!("{t:.6e}")).join(";"),
            p.total,
            p.total / benchmark_time
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_config;

    #[test]
    fn path_counts() {
        assert_eq!(enumerate_paths(2).unwrap(), vec![vec![0, 1]]);
        assert_eq!(enumerate_paths(4).unwrap().len(), 2);
        assert_eq!(enumerate_paths(8).unwrap().len(), 720);
        assert!(matches!(enumerate_paths(11), Err(ClassicalError::Capacity { .. })));
        for p in enumerate_paths(6).unwrap() {
            assert_eq!(p[0], 0);
            assert_eq!(*p.last().unwrap(), 5);
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn direct_path_is_benchmark_time() {
        let cfg = NetworkConfig::linear_chain(2, 200.0);
        let best = fastest_k(&cfg, 1).unwrap();
        assert!((best[0].total - cfg.benchmark_time()).abs() < 1e-12);
    }

    #[test]
    fn linear_chain_formula() {
        for n in 3..=8 {
            let cfg = NetworkConfig::linear_chain(n, 200.0);
            let t = cfg.benchmark_time();
            let best = fastest_k(&cfg, 1).unwrap();
            let want = t / ((n - 1) * (n - 1)) as f64;
            assert!(((best[0].total - want) / want).abs() < 1e-12);
            assert_eq!(best[0].sites, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fastest_k_matches_brute_force() {
        for seed in 0..4 {
            let cfg = sample_config(seed, 6, 200.0, 5.0, 10_000).unwrap();
            let mut all: Vec<ClassicalPath> = enumerate_paths(6)
                .unwrap()
                .iter()
                .map(|p| path_time(p, &cfg).unwrap())
                .collect();
            all.sort_by(|a, b| a.total.partial_cmp(&b.total).unwrap());
            let k = fastest_k(&cfg, 24).unwrap();
            assert!(k.windows(2).all(|w| w[0].total <= w[1].total));
            for (a, b) in k.iter().zip(&all) {
                assert_eq!(a.total, b.total);
            }
        }
    }

    #[test]
    fn interior_permutations_change_total() {
        let cfg = sample_config(3, 5, 200.0, 5.0, 10_000).unwrap();
        let totals: Vec<f64> = enumerate_paths(5).unwrap().iter().map(|p| path_time(p, &cfg).unwrap().total).collect();
        for i in 0..totals.len() {
            for j in 0..i {
                assert_ne!(totals[i], totals[j]);
            }
        }
    }

    #[test]
    fn csv_rows() {
        let cfg = NetworkConfig::linear_chain(4, 200.0);
        let mut buf = Vec::new();
        write_csv(&mut buf, &fastest_k(&cfg, 2).unwrap(), cfg.benchmark_time()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,1-2-3-4,"));
    }
}
