//! Deterministic resolvent of the driving measure and its decomposition
//! into a closed-form leading part and a fitted remainder.
//!
//! The resolvent solves `r'(t) = integral mu(ds) r(t-s)` (half-line kernel)
//! or `r'(t) = integral_{[max(-tau,-t),0]} nu(ds) r(t+s)` (delay kernel) with
//! `r(0) = I`. Stepping is Heun (explicit trapezoidal, global O(h^2));
//! exp-poly densities ride the Markovian lift, atoms are lagged lookups.

use nalgebra::DMatrix;

use crate::charspec::LeadingExpansion;
use crate::error::{Error, Result};
use crate::lift::{ConvEngine, StateView};
use crate::measures::MeasureRep;
use crate::numeric::ls_slope;

pub const FIT_TOL: f64 = 0.05;

/// Matrix trajectory of the resolvent and its derivative on a uniform grid.
#[derive(Debug, Clone)]
pub struct ResolventGrid {
    pub step: f64,
    pub horizon: f64,
    /// Tilt rate `c`: stored values are `e^{-c t} r(t)`.
    pub tilt: f64,
    pub values: Vec<DMatrix<f64>>,
    pub derivative_values: Vec<DMatrix<f64>>,
}

impl ResolventGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stored (possibly tilted) value, linearly interpolated; zero below t = 0.
    pub fn value_at(&self, t: f64) -> DMatrix<f64> {
        let d = self.values[0].nrows();
        if t < -1e-12 {
            return DMatrix::zeros(d, d);
        }
        let x = (t.max(0.0) / self.step).min((self.values.len() - 1) as f64);
        let i0 = x.floor() as usize;
        let frac = x - i0 as f64;
        if frac < 1e-12 || i0 + 1 >= self.values.len() {
            return self.values[i0].clone();
        }
        &self.values[i0] * (1.0 - frac) + &self.values[i0 + 1] * frac
    }
}

/// Adjust `h` so that it divides the delay interval exactly.
pub fn commensurate_step(measure: &MeasureRep, h: f64) -> f64 {
    match measure.delay_tau() {
        Some(tau) => tau / (tau / h).ceil(),
        None => h,
    }
}

/// Solve the resolvent equation on `[0, horizon]` with step `h`.
pub fn solve_resolvent(measure: &MeasureRep, h: f64, horizon: f64) -> Result<ResolventGrid> {
    solve_resolvent_tilted(measure, h, horizon, 0.0)
}

/// Solve for the tilted variable `e^{-c t} r(t)`; the tilt stays inside the
/// measure class, so growing resolvents can be integrated without overflow.
pub fn solve_resolvent_tilted(measure: &MeasureRep, h: f64, horizon: f64, c: f64) -> Result<ResolventGrid> {
    if !(h > 0.0) || horizon < h {
        return Err(Error::InvalidInput("require h > 0 and horizon >= h".into()));
    }
    let tilted;
    let m = if c != 0.0 {
        tilted = measure.tilted(c);
        &tilted
    } else {
        measure
    };
    let h = commensurate_step(m, h);
    let d = m.dim();
    let n = (horizon / h).round() as usize;
    let engine = ConvEngine::new(m, h);
    let mut values = Vec::with_capacity(n + 1);
    let mut derivs = Vec::with_capacity(n + 1);
    values.push(DMatrix::<f64>::identity(d, d));
    let mut lifts = engine.zero_lifts(d);
    for k in 0..n {
        let f_k = {
            let view = StateView { grid: &values, candidate: None };
            engine.drift(k, &view, &lifts, d)
        };
        let pred = &values[k] + &f_k * h;
        let lifts_pred = {
            let view = StateView { grid: &values, candidate: Some((k + 1, &pred)) };
            engine.advance_lifts(&lifts, k, &view, d)
        };
        let f_pred = {
            let view = StateView { grid: &values, candidate: Some((k + 1, &pred)) };
            engine.drift(k + 1, &view, &lifts_pred, d)
        };
        let next = &values[k] + (&f_k + &f_pred) * (0.5 * h);
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                t: (k + 1) as f64 * h,
                context: "resolvent stepping overflow; rerun with a tilt close to the critical exponent"
                    .into(),
            });
        }
        let view = StateView { grid: &values, candidate: Some((k + 1, &next)) };
        lifts = engine.advance_lifts(&lifts, k, &view, d);
        derivs.push(f_k);
        values.push(next);
    }
    let view = StateView { grid: &values, candidate: None };
    derivs.push(engine.drift(n, &view, &lifts, d));
    Ok(ResolventGrid { step: h, horizon: n as f64 * h, tilt: c, values, derivative_values: derivs })
}

/// Closed-form evaluator of the leading part
/// `S(t) = sum_j e^{alpha t} (P_j(t) cos(beta_j t) + Q_j(t) sin(beta_j t))`.
#[derive(Debug, Clone)]
pub struct LeadingPart {
    expansion: LeadingExpansion,
    dim: usize,
}

pub fn leading_part(expansion: &LeadingExpansion) -> LeadingPart {
    let dim = expansion.modes.first().map(|m| m.pstar.nrows()).unwrap_or(1);
    LeadingPart { expansion: expansion.clone(), dim }
}

impl LeadingPart {
    pub fn expansion(&self) -> &LeadingExpansion {
        &self.expansion
    }

    fn poly_eval(coeffs: &[DMatrix<f64>], t: f64) -> DMatrix<f64> {
        let mut acc = coeffs.last().unwrap().clone();
        for c in coeffs.iter().rev().skip(1) {
            acc = acc * t + c;
        }
        acc
    }

    fn poly_deriv(coeffs: &[DMatrix<f64>], t: f64, dim: usize) -> DMatrix<f64> {
        let mut acc = DMatrix::<f64>::zeros(dim, dim);
        for (m, c) in coeffs.iter().enumerate().skip(1) {
            acc += c * (m as f64 * t.powi(m as i32 - 1));
        }
        acc
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        self.eval_tilted(t, 0.0)
    }

    /// Tilted evaluation `e^{-c t} S(t)`, stable for large `alpha t`.
    pub fn eval_tilted(&self, t: f64, c: f64) -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(self.dim, self.dim);
        let ea = ((self.expansion.alpha - c) * t).exp();
        for mode in &self.expansion.modes {
            let p = Self::poly_eval(&mode.p_poly, t);
            let q = Self::poly_eval(&mode.q_poly, t);
            out += (p * (mode.beta * t).cos() + q * (mode.beta * t).sin()) * ea;
        }
        out
    }

    pub fn eval_deriv(&self, t: f64) -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(self.dim, self.dim);
        let alpha = self.expansion.alpha;
        let ea = (alpha * t).exp();
        for mode in &self.expansion.modes {
            let p = Self::poly_eval(&mode.p_poly, t);
            let q = Self::poly_eval(&mode.q_poly, t);
            let dp = Self::poly_deriv(&mode.p_poly, t, self.dim);
            let dq = Self::poly_deriv(&mode.q_poly, t, self.dim);
            let b = mode.beta;
            let cos_coef = &p * alpha + &dp + &q * b;
            let sin_coef = &q * alpha + &dq - &p * b;
            out += (cos_coef * (b * t).cos() + sin_coef * (b * t).sin()) * ea;
        }
        out
    }

    /// `S(0) = sum_j P_j(0)`, useful as a construction sanity value.
    pub fn at_zero(&self) -> DMatrix<f64> {
        self.eval(0.0)
    }
}

/// Least-squares growth-rate fit of a remainder trajectory.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub slope: f64,
    pub bound: f64,
    pub pass: bool,
    pub identically_zero: bool,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct ResolventDecomposition {
    pub remainder_norm: Vec<f64>,
    pub r_fit: RateFit,
    pub r_deriv_fit: RateFit,
}

/// Remainder `R = r - S` and growth-rate fits for `R` and `R'` against the
/// asymptotic bounds `O(e^{(alpha-eps)t})` (n = 0) and `O(t^{n-1} e^{alpha t})`,
/// `O(t^n e^{alpha t})` (n >= 1).
pub fn decompose(grid: &ResolventGrid, expansion: &LeadingExpansion) -> Result<ResolventDecomposition> {
    let part = leading_part(expansion);
    let n_pts = grid.values.len();
    let mut r_norm = Vec::with_capacity(n_pts);
    let mut rp_norm = Vec::with_capacity(n_pts);
    let mut r_scale = Vec::with_capacity(n_pts);
    for k in 0..n_pts {
        let t = k as f64 * grid.step;
        let s = part.eval_tilted(t, grid.tilt);
        let sp = if grid.tilt == 0.0 {
            part.eval_deriv(t)
        } else {
            // stored derivative is d/dt (e^{-ct} r) = e^{-ct}(r' - c r)
            part.eval_deriv(t) * (-grid.tilt * t).exp() - &s * grid.tilt
        };
        r_norm.push((&grid.values[k] - s).norm());
        rp_norm.push((&grid.derivative_values[k] - sp).norm());
        r_scale.push(grid.values[k].norm());
    }

    let fit = |norms: &[f64], poly_pow: i32, bound: f64| -> Result<RateFit> {
        let start = n_pts / 2;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for k in start..n_pts {
            let t = k as f64 * grid.step;
            if t <= 0.0 {
                continue;
            }
            if norms[k] < 1e-13 * r_scale[k].max(1e-300) {
                continue; // floating-point floor
            }
            let normal = norms[k] / t.powi(poly_pow).max(1e-300);
            xs.push(t);
            ys.push(normal.ln());
        }
        if xs.is_empty() {
            return Ok(RateFit {
                slope: f64::NEG_INFINITY,
                bound,
                pass: true,
                identically_zero: true,
                points: 0,
            });
        }
        if xs.len() < 50 {
            return Err(Error::HorizonTooShort(format!(
                "only {} usable tail points for the remainder fit (need 50)",
                xs.len()
            )));
        }
        let slope = ls_slope(&xs, &ys) + grid.tilt;
        Ok(RateFit { slope, bound, pass: slope <= bound, identically_zero: false, points: xs.len() })
    };

    let (r_pow, r_bound, rp_pow, rp_bound) = if expansion.n == 0 {
        let b = expansion.alpha - 0.5 * expansion.gap;
        (0, b, 0, b)
    } else {
        (
            expansion.n as i32 - 1,
            expansion.alpha + FIT_TOL,
            expansion.n as i32,
            expansion.alpha + FIT_TOL,
        )
    };
    let r_fit = fit(&r_norm, r_pow, r_bound)?;
    let r_deriv_fit = fit(&rp_norm, rp_pow, rp_bound)?;
    Ok(ResolventDecomposition { remainder_norm: r_norm, r_fit, r_deriv_fit })
}
