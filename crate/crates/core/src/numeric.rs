//! Shared numerical kernels: polynomial-exponential integrals, adaptive
//! quadrature, and least-squares slope fits.

use num_complex::Complex64;

/// `integral of s^k * exp(w*s) ds` over `[a, b]`.
///
/// Switches to a power series when `|w| * max(|a|,|b|)` is small, where the
/// closed-form antiderivative suffers catastrophic cancellation.
pub fn int_poly_exp(k: u32, w: Complex64, a: f64, b: f64) -> Complex64 {
    let scale = a.abs().max(b.abs());
    if w.norm() * scale < 0.5 {
        // sum_m w^m / m! * (b^{k+m+1} - a^{k+m+1}) / (k+m+1)
        let mut total = Complex64::new(0.0, 0.0);
        let mut wm = Complex64::new(1.0, 0.0);
        let mut pa = a.powi(k as i32 + 1);
        let mut pb = b.powi(k as i32 + 1);
        for m in 0..200u32 {
            let term = wm * (pb - pa) / (k + m + 1) as f64;
            total += term;
            if term.norm() < 1e-18 * (1.0 + total.norm()) && m > 2 {
                break;
            }
            wm *= w / (m + 1) as f64;
            pa *= a;
            pb *= b;
        }
        total
    } else {
        antideriv_poly_exp(k, w, b) - antideriv_poly_exp(k, w, a)
    }
}

/// Antiderivative of `s^k e^{ws}`, valid away from `w = 0`:
/// `e^{ws} * sum_{i=0..k} (-1)^i k!/(k-i)! s^{k-i} / w^{i+1}`.
fn antideriv_poly_exp(k: u32, w: Complex64, s: f64) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut falling = 1.0; // k!/(k-i)!
    let mut winv = 1.0 / w;
    let mut sign = 1.0;
    for i in 0..=k {
        sum += sign * falling * s.powi((k - i) as i32) * winv;
        sign = -sign;
        falling *= (k - i) as f64;
        winv /= w;
    }
    (w * s).exp() * sum
}

/// `integral of s^k e^{-z s} ds` over `[0, inf)`; requires `Re(z) > 0`.
pub fn int_poly_exp_halfline(k: u32, z: Complex64) -> Complex64 {
    let mut fact = 1.0;
    for i in 2..=k {
        fact *= i as f64;
    }
    fact / z.powu(k + 1)
}

/// Adaptive Simpson quadrature of a scalar function on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Composite Simpson with a fixed odd node count (`nodes >= 3`).
pub fn composite_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, nodes: usize) -> f64 {
    let n = if nodes % 2 == 0 { nodes + 1 } else { nodes };
    let h = (b - a) / (n - 1) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n - 1 {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    sxy / sxx
}

/// Sample mean and (unbiased) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn poly_exp_integral_matches_closed_forms() {
        // integral of s e^{-s} over [0, 1] = 1 - 2/e
        let v = int_poly_exp(1, Complex64::new(-1.0, 0.0), 0.0, 1.0);
        assert_relative_eq!(v.re, 1.0 - 2.0 / std::f64::consts::E, epsilon = 1e-14);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn poly_exp_integral_small_rate_series_branch() {
        // integral of s^2 e^{ws} with w -> 0 tends to b^3/3 - a^3/3
        let v = int_poly_exp(2, Complex64::new(1e-9, 0.0), 1.0, 2.0);
        assert_relative_eq!(v.re, 7.0 / 3.0, epsilon = 1e-7);
        // and the two branches agree near the switch point
        let w = Complex64::new(0.49, 0.2);
        let series = int_poly_exp(3, w, 0.0, 1.0);
        let closed = antideriv_poly_exp(3, w, 1.0) - antideriv_poly_exp(3, w, 0.0);
        assert!((series - closed).norm() < 1e-12);
    }

    #[test]
    fn halfline_integral_is_factorial_over_power() {
        let v = int_poly_exp_halfline(3, Complex64::new(2.0, 0.0));
        assert_relative_eq!(v.re, 6.0 / 16.0, epsilon = 1e-14);
    }

    #[test]
    fn simpson_handles_oscillatory_decay() {
        let f = |s: f64| (-s).exp() * s.cos();
        let v = adaptive_simpson(&f, 0.0, 40.0, 1e-12);
        assert_relative_eq!(v, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn slope_recovers_linear_coefficient() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&t| 3.0 - 2.5 * t).collect();
        assert_relative_eq!(ls_slope(&x, &y), -2.5, epsilon = 1e-12);
    }
}
