use num_complex::Complex64 as C;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qnet_core::bayesopt::Space;
use qnet_core::dynamics::{self, norm_sqr, DynamicsOptions, Method};
use qnet_core::experiments::{Mask, NetworkSpace};
use qnet_core::geometry::{sample_config, ModeKind, NetworkConfig, PhononSpec};
use qnet_core::gp::{kernel, GpModel, Hyper};
use qnet_core::hamiltonian::AssembledHamiltonian;

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<C> {
    let v: Vec<C> = (0..n).map(|_| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let norm = norm_sqr(&v).sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

fn rel_diff(a: &[C], b: &[C]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    (d / norm_sqr(b).max(1e-300)).sqrt()
}

fn phonons(kind: u8, n: usize, rng: &mut ChaCha8Rng) -> PhononSpec {
    let freqs: Vec<f64> = (0..n).map(|_| 1.25 * 100f64.powf(rng.random::<f64>())).collect();
    match kind {
        0 => PhononSpec::none(),
        1 => PhononSpec::holstein(freqs, 1.45),
        _ => PhononSpec::peierls(freqs, 15.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn semigroup_dense(seed in 0u64..1000, n in 3usize..6, kind in 0u8..3, t1 in 0.1f64..20.0, t2 in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = sample_config(seed, n, 200.0, 5.0, 10_000).unwrap();
        let spec = phonons(kind, n, &mut rng);
        let h = AssembledHamiltonian::assemble(&cfg, &spec, 0.3).unwrap();
        let psi = random_state(&mut rng, h.dim());
        let opts = DynamicsOptions::default();
        let direct = dynamics::propagate(&h.matrix, &psi, &[t1 + t2], &opts, Some(Method::Dense)).unwrap();
        let half = dynamics::propagate(&h.matrix, &psi, &[t1], &opts, Some(Method::Dense)).unwrap();
        let composed = dynamics::propagate(&h.matrix, &half[0], &[t2], &opts, Some(Method::Dense)).unwrap();
        prop_assert!(rel_diff(&composed[0], &direct[0]) < 1e-8);
    }

    #[test]
    fn norm_never_increases(seed in 0u64..1000, n in 2usize..6, kind in 0u8..3, gamma in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = sample_config(seed, n, 200.0, 5.0, 10_000).unwrap();
        let spec = phonons(kind, n, &mut rng);
        let h = AssembledHamiltonian::assemble(&cfg, &spec, gamma).unwrap();
        let psi0 = dynamics::initial_state(&h.basis);
        let times: Vec<f64> = (0..60).map(|k| k as f64 * 0.5).collect();
        let states = dynamics::propagate(&h.matrix, &psi0, &times, &DynamicsOptions::default(), Some(Method::Krylov)).unwrap();
        let norms: Vec<f64> = states.iter().map(|s| norm_sqr(s)).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn transfer_time_symmetries(seed in 0u64..1000, n in 4usize..7, angle in 0.0f64..6.28) {
        let cfg = sample_config(seed, n, 200.0, 5.0, 10_000).unwrap();
        let gamma = 0.5;
        let opts = DynamicsOptions::default();
        let base = match qnet_core::experiments::evaluate_config(&cfg, &PhononSpec::none(), gamma, &opts) {
            // nearly dark networks are conditioning-limited, not symmetry tests
            Ok(t) if t.ps < 100.0 * cfg.benchmark_time() => t.ps,
            _ => return Ok(()),
        };
        let mut relabeled = cfg.clone();
        relabeled.positions[1..n - 1].reverse();
        let (c, s) = (angle.cos(), angle.sin());
        let mut rotated = cfg.clone();
        for p in rotated.positions.iter_mut() {
            let (y, z) = (p[1], p[2]);
            p[1] = c * y - s * z;
            p[2] = s * y + c * z;
        }
        for other in [relabeled, rotated] {
            let t = qnet_core::experiments::evaluate_config(&other, &PhononSpec::none(), gamma, &opts).unwrap().ps;
            prop_assert!(((t - base) / base).abs() < 1e-8, "{t} vs {base}");
        }
    }

    #[test]
    fn gram_matrix_is_psd(seed in 0u64..1000, gamma in 0.1f64..100.0, length in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..120).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        let ys: Vec<f64> = (0..120).map(|_| rng.random()).collect();
        let m = GpModel::with_hyper(xs.clone(), ys, Hyper { gamma, length, noise: 1e-10 });
        prop_assert!(m.is_ok());
        for i in 0..5 {
            for j in 0..5 {
                let a = kernel(&xs[i], &xs[j], gamma, length).unwrap();
                let b = kernel(&xs[j], &xs[i], gamma, length).unwrap();
                prop_assert_eq!(a, b);
                prop_assert!(a > 0.0 && a <= 1.0);
            }
        }
    }

    #[test]
    fn predictive_mean_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..15).map(|_| (0..2).map(|_| rng.random()).collect()).collect();
        let y1: Vec<f64> = (0..15).map(|_| rng.random()).collect();
        let y2: Vec<f64> = (0..15).map(|_| rng.random()).collect();
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
        let h = Hyper { gamma: 2.0, length: 0.3, noise: 1e-8 };
        let m1 = GpModel::with_hyper(xs.clone(), y1, h).unwrap();
        let m2 = GpModel::with_hyper(xs.clone(), y2, h).unwrap();
        let mm = GpModel::with_hyper(xs, mix, h).unwrap();
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        let want = a * m1.predict(&x).0 + b * m2.predict(&x).0;
        prop_assert!((mm.predict(&x).0 - want).abs() < 1e-8 * (1.0 + want.abs()));
    }

    #[test]
    fn duplicate_point_never_raises_variance(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..2).map(|_| rng.random()).collect()).collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let h = Hyper { gamma: 1.0, length: 0.3, noise: 1e-6 };
        let m = GpModel::with_hyper(xs.clone(), ys.clone(), h).unwrap();
        let mut xd = xs.clone();
        let mut yd = ys.clone();
        let k = rng.random_range(0..10);
        xd.push(xs[k].clone());
        yd.push(ys[k]);
        let md = GpModel::with_hyper(xd, yd, h).unwrap();
        for _ in 0..20 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            prop_assert!(md.variance_ratio(&x) <= m.variance_ratio(&x) + 1e-9);
        }
    }

    #[test]
    fn network_space_round_trip(seed in 0u64..1000, n in 3usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = NetworkSpace::new(
            NetworkConfig::linear_chain(n, 200.0),
            PhononSpec::holstein(vec![10.0; n], 1.45),
            Mask::Both,
            Some(ModeKind::Holstein),
        ).unwrap();
        let u = space.sample(&mut rng).unwrap();
        prop_assert_eq!(u.len(), 3 * (n - 2) + n);
        let (cfg, spec) = space.decode(&u);
        prop_assert!(cfg.validate().is_empty());
        let back = space.encode(&cfg, &spec);
        for (p, q) in u.iter().zip(&back) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
