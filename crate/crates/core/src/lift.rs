//! Markovian lift of exponential-polynomial convolution kernels.
//!
//! A drift functional `integral K(s) S(t-s) ds` with kernel terms
//! `C s^k e^{g s} trig(b s)` is carried as auxiliary states
//! `V_j(t) = integral_0^{min(t,tau)} v^j e^{w v} S(t-v) dv` which satisfy the
//! bidiagonal system `V_j' = w V_j + j V_{j-1} + [j=0] S(t) - boundary`.
//! Each state is advanced exactly over a step through the closed-form
//! propagator of the Jordan-type block (`e^{Lh}_{jm} = C(j,m) h^{j-m} e^{wh}`),
//! with the forcing `S` taken linear on the step. Dirac atoms become lagged
//! state lookups. The per-step cost is O(1) in the horizon.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::measures::{MeasureRep, Support, TrigPhase};
use crate::numeric::int_poly_exp;

pub(crate) type LiftState = Vec<Vec<DMatrix<Complex64>>>;

/// Grid state accessor with an optional uncommitted candidate value.
pub(crate) struct StateView<'a> {
    pub grid: &'a [DMatrix<f64>],
    pub candidate: Option<(usize, &'a DMatrix<f64>)>,
}

impl<'a> StateView<'a> {
    fn get(&self, idx: usize) -> Option<&DMatrix<f64>> {
        if let Some((ci, cv)) = self.candidate {
            if ci == idx {
                return Some(cv);
            }
        }
        self.grid.get(idx)
    }

    /// Linear interpolation at a fractional step index; indices below zero
    /// read as zero (the pre-zero convention of the delay resolvent).
    fn interp(&self, steps: f64, rows: usize, cols: usize) -> DMatrix<f64> {
        if steps < -1e-9 {
            return DMatrix::zeros(rows, cols);
        }
        let x = steps.max(0.0);
        let i0 = x.floor() as usize;
        let frac = x - i0 as f64;
        let v0 = self.get(i0).cloned().unwrap_or_else(|| DMatrix::zeros(rows, cols));
        if frac < 1e-12 {
            return v0;
        }
        let v1 = self.get(i0 + 1).cloned().unwrap_or_else(|| DMatrix::zeros(rows, cols));
        v0 * (1.0 - frac) + v1 * frac
    }
}

struct Family {
    size: usize,
    /// e^{Lh}, lower triangular, indexed [j][m].
    prop: Vec<Vec<Complex64>>,
    /// weight of S(t) in the forcing update, per component.
    a_left: Vec<Complex64>,
    /// weight of S(t+h).
    a_right: Vec<Complex64>,
    /// weights of the lagged boundary channel S(t-tau), S(t-tau+h).
    bnd: Option<(Vec<Complex64>, Vec<Complex64>)>,
}

struct TermChannel {
    coeff: DMatrix<f64>,
    family: usize,
    k: usize,
    pick_im: bool,
    sign: f64,
}

pub(crate) struct ConvEngine {
    h: f64,
    dim: usize,
    atoms: Vec<(f64, DMatrix<f64>)>,
    terms: Vec<TermChannel>,
    families: Vec<Family>,
    /// Number of steps in the delay window (tau / h), when the kernel has
    /// a sliding window.
    tau_steps: Option<usize>,
}

fn binom(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

impl ConvEngine {
    /// Build the engine for a measure at step `h`. For a delay measure, `h`
    /// must divide tau exactly (callers adjust beforehand).
    pub(crate) fn new(measure: &MeasureRep, h: f64) -> Self {
        let dim = measure.dim();
        let delay_tau = measure.delay_tau();
        let tau_steps = delay_tau.map(|tau| (tau / h).round() as usize);

        // atoms -> lagged lookups
        let atoms = measure
            .atoms()
            .iter()
            .map(|(loc, w)| {
                let lag = match measure.support() {
                    Support::VolterraHalfLine => *loc,
                    Support::DelayInterval { .. } => -*loc,
                };
                (lag, w.clone())
            })
            .collect();

        // density terms -> families keyed by the complex rate
        let mut family_key: Vec<Complex64> = Vec::new();
        let mut family_span: Vec<usize> = Vec::new();
        let mut terms = Vec::new();
        for t in measure.density() {
            let (w, sign) = match measure.support() {
                Support::VolterraHalfLine => (Complex64::new(t.rate, t.freq), 1.0),
                Support::DelayInterval { .. } => {
                    (Complex64::new(-t.rate, -t.freq), (-1.0f64).powi(t.degree as i32))
                }
            };
            let fam = match family_key.iter().position(|k| (k - w).norm() < 1e-14) {
                Some(i) => i,
                None => {
                    family_key.push(w);
                    family_span.push(0);
                    family_key.len() - 1
                }
            };
            family_span[fam] = family_span[fam].max(t.degree as usize + 1);
            terms.push(TermChannel {
                coeff: t.coeff.clone(),
                family: fam,
                k: t.degree as usize,
                pick_im: t.phase == TrigPhase::Sin,
                sign,
            });
        }

        let families = family_key
            .iter()
            .zip(&family_span)
            .map(|(&w, &size)| {
                // E_q = integral_0^h u^q e^{w u} du
                let e: Vec<Complex64> = (0..=size as u32 + 1).map(|q| int_poly_exp(q, w, 0.0, h)).collect();
                let ewh = (w * h).exp();
                let mut prop = Vec::with_capacity(size);
                let mut g0 = Vec::with_capacity(size);
                let mut g1 = Vec::with_capacity(size);
                for j in 0..size {
                    let mut prow = vec![Complex64::new(0.0, 0.0); size];
                    let mut g0row = vec![Complex64::new(0.0, 0.0); size];
                    let mut g1row = vec![Complex64::new(0.0, 0.0); size];
                    for m in 0..=j {
                        let c = binom(j, m);
                        prow[m] = ewh * c * h.powi((j - m) as i32);
                        g0row[m] = c * e[j - m];
                        g1row[m] = c * e[j - m + 1];
                    }
                    prop.push(prow);
                    g0.push(g0row);
                    g1.push(g1row);
                }
                let a_left: Vec<Complex64> = (0..size).map(|j| g1[j][0] / h).collect();
                let a_right: Vec<Complex64> = (0..size).map(|j| g0[j][0] - g1[j][0] / h).collect();
                let bnd = delay_tau.map(|tau| {
                    let g: Vec<Complex64> =
                        (0..size).map(|m| -(tau.powi(m as i32)) * (w * tau).exp()).collect();
                    let mut left = vec![Complex64::new(0.0, 0.0); size];
                    let mut right = vec![Complex64::new(0.0, 0.0); size];
                    for j in 0..size {
                        for m in 0..=j {
                            left[j] += g1[j][m] / h * g[m];
                            right[j] += (g0[j][m] - g1[j][m] / h) * g[m];
                        }
                    }
                    (left, right)
                });
                Family { size, prop, a_left, a_right, bnd }
            })
            .collect();

        ConvEngine { h, dim, atoms, terms, families, tau_steps }
    }

    pub(crate) fn zero_lifts(&self, cols: usize) -> LiftState {
        self.families
            .iter()
            .map(|f| vec![DMatrix::<Complex64>::zeros(self.dim, cols); f.size])
            .collect()
    }

    /// Drift functional at step `k`: atom lookups plus density lift picks.
    /// For a Volterra kernel, atoms beyond the elapsed time are excluded;
    /// for a delay kernel, pre-zero lookups read as zero (callers add any
    /// initial-segment contribution separately).
    pub(crate) fn drift(&self, k: usize, view: &StateView, lifts: &LiftState, cols: usize) -> DMatrix<f64> {
        let t = k as f64 * self.h;
        let mut out = DMatrix::<f64>::zeros(self.dim, cols);
        for (lag, w) in &self.atoms {
            if *lag > t + 1e-12 {
                continue;
            }
            let s = view.interp(k as f64 - lag / self.h, self.dim, cols);
            out += w * s;
        }
        for ch in &self.terms {
            let v = &lifts[ch.family][ch.k];
            let picked = if ch.pick_im { v.map(|x| x.im) } else { v.map(|x| x.re) };
            out += &ch.coeff * picked * ch.sign;
        }
        out
    }

    /// Exact lift update over one step with the forcing taken linear between
    /// the state at `k` and at `k + 1`.
    pub(crate) fn advance_lifts(&self, lifts: &LiftState, k: usize, view: &StateView, cols: usize) -> LiftState {
        let zero = DMatrix::<f64>::zeros(self.dim, cols);
        let s_t = view.get(k).cloned().unwrap_or_else(|| zero.clone());
        let s_th = view.get(k + 1).cloned().unwrap_or_else(|| zero.clone());
        let boundary_active = matches!(self.tau_steps, Some(m) if k >= m);
        let (lag_t, lag_th) = if boundary_active {
            let m = self.tau_steps.unwrap();
            (
                view.get(k - m).cloned().unwrap_or_else(|| zero.clone()),
                view.get(k - m + 1).cloned().unwrap_or_else(|| zero.clone()),
            )
        } else {
            (zero.clone(), zero.clone())
        };
        self.families
            .iter()
            .zip(lifts)
            .map(|(fam, z)| {
                (0..fam.size)
                    .map(|j| {
                        let mut next = DMatrix::<Complex64>::zeros(self.dim, cols);
                        for m in 0..=j {
                            next += z[m].map(|x| x * fam.prop[j][m]);
                        }
                        add_real_scaled(&mut next, &s_t, fam.a_left[j]);
                        add_real_scaled(&mut next, &s_th, fam.a_right[j]);
                        if boundary_active {
                            if let Some((left, right)) = &fam.bnd {
                                add_real_scaled(&mut next, &lag_t, left[j]);
                                add_real_scaled(&mut next, &lag_th, right[j]);
                            }
                        }
                        next
                    })
                    .collect()
            })
            .collect()
    }
}

fn add_real_scaled(out: &mut DMatrix<Complex64>, s: &DMatrix<f64>, c: Complex64) {
    for (o, v) in out.iter_mut().zip(s.iter()) {
        *o += c * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ExpPolyTerm;

    /// The lift of kernel e^{-s} against a constant state S = 1 equals
    /// integral_0^t e^{-v} dv = 1 - e^{-t}.
    #[test]
    fn lift_reproduces_exponential_convolution_of_constant() {
        let m = MeasureRep::new(
            1,
            Support::VolterraHalfLine,
            vec![],
            vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, 1.0), 0, -1.0, 0.0, TrigPhase::Cos).unwrap()],
        )
        .unwrap();
        let h = 1e-3;
        let eng = ConvEngine::new(&m, h);
        let n = 2000;
        let grid: Vec<DMatrix<f64>> = (0..=n).map(|_| DMatrix::from_element(1, 1, 1.0)).collect();
        let mut lifts = eng.zero_lifts(1);
        for k in 0..n {
            let view = StateView { grid: &grid, candidate: None };
            lifts = eng.advance_lifts(&lifts, k, &view, 1);
        }
        let view = StateView { grid: &grid, candidate: None };
        let drift = eng.drift(n, &view, &lifts, 1);
        let t = n as f64 * h;
        let expected = 1.0 - (-t).exp();
        assert!((drift[(0, 0)] - expected).abs() < 1e-9, "got {}", drift[(0, 0)]);
    }

    /// Degree-1 trig kernel against S(t) = t, compared with direct quadrature.
    #[test]
    fn lift_matches_direct_quadrature_for_polynomial_trig_kernel() {
        let m = MeasureRep::new(
            1,
            Support::VolterraHalfLine,
            vec![],
            vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, 2.0), 1, -0.5, 3.0, TrigPhase::Sin).unwrap()],
        )
        .unwrap();
        let h = 5e-4;
        let eng = ConvEngine::new(&m, h);
        let n = 4000;
        let grid: Vec<DMatrix<f64>> = (0..=n).map(|k| DMatrix::from_element(1, 1, k as f64 * h)).collect();
        let mut lifts = eng.zero_lifts(1);
        for k in 0..n {
            let view = StateView { grid: &grid, candidate: None };
            lifts = eng.advance_lifts(&lifts, k, &view, 1);
        }
        let view = StateView { grid: &grid, candidate: None };
        let drift = eng.drift(n, &view, &lifts, 1)[(0, 0)];
        let t = n as f64 * h;
        let oracle = crate::numeric::adaptive_simpson(
            &|v: f64| 2.0 * v * (-0.5 * v).exp() * (3.0 * v).sin() * (t - v),
            0.0,
            t,
            1e-12,
        );
        assert!((drift - oracle).abs() < 1e-7, "lift {drift} oracle {oracle}");
    }

    /// Sliding delay window: kernel 1 on [-tau, 0] against constant state
    /// yields min(t, tau).
    #[test]
    fn delay_window_lift_saturates_at_tau() {
        let tau = 0.25;
        let m = MeasureRep::new(
            1,
            Support::DelayInterval { delay_tau: tau },
            vec![],
            vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, 1.0), 0, 0.0, 0.0, TrigPhase::Cos).unwrap()],
        )
        .unwrap();
        let h = tau / 250.0;
        let eng = ConvEngine::new(&m, h);
        let n = 1000;
        let grid: Vec<DMatrix<f64>> = (0..=n).map(|_| DMatrix::from_element(1, 1, 1.0)).collect();
        let mut lifts = eng.zero_lifts(1);
        for k in 0..n {
            let view = StateView { grid: &grid, candidate: None };
            lifts = eng.advance_lifts(&lifts, k, &view, 1);
            let view = StateView { grid: &grid, candidate: None };
            let drift = eng.drift(k + 1, &view, &lifts, 1)[(0, 0)];
            let t = (k + 1) as f64 * h;
            let expected = t.min(tau);
            assert!((drift - expected).abs() < 1e-10, "t={t}: {drift} vs {expected}");
        }
    }
}
