//! Dense complex matrix exponential by scaling and squaring with a
//! degree-6 diagonal Padé approximant. Used on the small Hessenberg
//! matrices produced by the Krylov propagator.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;

pub fn expm(a: &Mat<Complex64>) -> Mat<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let norm = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return Mat::identity(n, n);
    }
    let squarings = if norm > 0.5 {
        (norm.log2().floor() as i32 + 2).max(0) as u32
    } else {
        0
    };
    let scale = Complex64::new(0.5f64.powi(squarings as i32), 0.0);
    let x = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let x2 = &x * &x;

    // Padé coefficients c_k = c_{k-1} (p+1-k) / (k (2p+1-k))
    let p = 6;
    let mut c = vec![1.0f64; p + 1];
    for k in 1..=p {
        c[k] = c[k - 1] * (p + 1 - k) as f64 / (k * (2 * p + 1 - k)) as f64;
    }
    let ident = Mat::<Complex64>::identity(n, n);
    let scaled = |m: &Mat<Complex64>, s: f64| Mat::from_fn(n, n, |i, j| m[(i, j)] * s);
    // numerator = E + X·O, denominator = E − X·O with E, O polynomials in X²
    let even = &(&(&scaled(&x2, c[6]) + &scaled(&ident, c[4])) * &x2 + scaled(&ident, c[2])) * &x2
        + scaled(&ident, c[0]);
    let odd = &(&scaled(&x2, c[5]) + &scaled(&ident, c[3])) * &x2 + scaled(&ident, c[1]);
    let xo = &x * &odd;
    let num = &even + &xo;
    let den = &even - &xo;
    let mut r = den.partial_piv_lu().solve(&num);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn diagonal_matches_scalar_exponential() {
        let d = [c(0.3, -2.0), c(-5.0, 40.0), c(1.0, 0.0)];
        let a = Mat::from_fn(3, 3, |i, j| if i == j { d[i] } else { c(0.0, 0.0) });
        let e = expm(&a);
        for i in 0..3 {
            assert!((e[(i, i)] - d[i].exp()).norm() < 1e-12 * d[i].exp().norm().max(1.0));
        }
    }

    #[test]
    fn rotation_generator() {
        // exp(-i t σx) = cos t I - i sin t σx
        let t = 7.3;
        let a = Mat::from_fn(2, 2, |i, j| if i != j { c(0.0, -t) } else { c(0.0, 0.0) });
        let e = expm(&a);
        assert!((e[(0, 0)] - c(t.cos(), 0.0)).norm() < 1e-12);
        assert!((e[(0, 1)] - c(0.0, -t.sin())).norm() < 1e-12);
    }

    #[test]
    fn nilpotent_jordan_block() {
        let a = Mat::from_fn(3, 3, |i, j| if j == i + 1 { c(2.0, 0.0) } else { c(0.0, 0.0) });
        let e = expm(&a);
        assert!((e[(0, 1)] - c(2.0, 0.0)).norm() < 1e-13);
        assert!((e[(0, 2)] - c(2.0, 0.0)).norm() < 1e-13);
        assert!((e[(1, 0)]).norm() < 1e-15);
    }
}
