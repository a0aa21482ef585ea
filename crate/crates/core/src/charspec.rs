//! Characteristic functions, zero location, and Laurent residue extraction.
//!
//! The characteristic function is `det(lambda I - T(lambda))` where `T` is
//! the Laplace transform of the driving measure. Zeros are counted by the
//! argument principle on rectangles, isolated by recursive subdivision,
//! polished by Newton iteration on the analytic logarithmic derivative
//! `tr(M^{-1} M')`, and their Laurent coefficient matrices `K_{j,m}` are
//! recovered by trapezoidal contour integration of `(lambda-lambda_j)^m
//! M(lambda)^{-1}`, which is spectrally accurate for analytic integrands.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::json;

use crate::error::{Error, Result};
use crate::measures::{MeasureRep, Support, TrigPhase};
use crate::numeric::int_poly_exp;

pub const ROOT_TOL: f64 = 1e-10;
pub const CLUSTER_TOL: f64 = 1e-7;
pub const RANK_TOL: f64 = 1e-8;
const MERGE_TOL: f64 = 1e-7;
const REAL_AXIS_TOL: f64 = 1e-9;
const CLUSTER_BOX_DIAG: f64 = 1e-5;
const MAX_SUBDIVISIONS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharKind {
    Volterra,
    Delay,
}

/// Characteristic function of a driving measure.
#[derive(Debug, Clone)]
pub struct CharFunction {
    measure: MeasureRep,
}

/// Rectangular search region; the box extends symmetrically to `-im_max`.
#[derive(Debug, Clone, Copy)]
pub struct SearchBox {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: Option<f64>,
}

/// A located zero of the characteristic function (Im >= 0 representative).
#[derive(Debug, Clone)]
pub struct Root {
    pub location: Complex64,
    /// Zero count of the determinant attributed to this location by winding.
    pub multiplicity: usize,
    /// `n_j + 1` where `n_j` is the largest index with `K_{j,n_j} != 0`.
    pub pole_order: usize,
    /// Laurent matrices `K_{j,0} .. K_{j,multiplicity-1}`.
    pub laurent: Vec<DMatrix<Complex64>>,
    /// `|h(lambda)|` at the polished root.
    pub residual: f64,
    /// True when the conjugate root also lies in the searched box.
    pub conjugate_pair: bool,
}

/// One oscillatory mode `e^{alpha t} t^n (P* cos(beta t) + Q* sin(beta t))`
/// together with the full degree-`n` matrix polynomials.
#[derive(Debug, Clone)]
pub struct LeadingMode {
    pub beta: f64,
    pub pstar: DMatrix<f64>,
    pub qstar: DMatrix<f64>,
    /// Coefficients of `P_j(t)`, index = power of `t`, length `n + 1`.
    pub p_poly: Vec<DMatrix<f64>>,
    pub q_poly: Vec<DMatrix<f64>>,
    pub pole_order: usize,
}

/// Leading expansion data shared by the resolvent decomposition and the
/// limit-law machinery. Can also be constructed directly from closed-form
/// knowledge when no root lies in the transform domain.
#[derive(Debug, Clone)]
pub struct LeadingExpansion {
    pub alpha: f64,
    pub n: usize,
    pub modes: Vec<LeadingMode>,
    /// Root-free gap below the critical line.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub alpha_star: f64,
    pub roots: Vec<Root>,
    pub expansion: LeadingExpansion,
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    re_min: f64,
    re_max: f64,
    im_min: f64,
    im_max: f64,
}

impl Rect {
    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re_min, self.im_min),
            Complex64::new(self.re_max, self.im_min),
            Complex64::new(self.re_max, self.im_max),
            Complex64::new(self.re_min, self.im_max),
        ]
    }

    fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    fn diag(&self) -> f64 {
        ((self.re_max - self.re_min).powi(2) + (self.im_max - self.im_min).powi(2)).sqrt()
    }

    fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re_min - slack
            && z.re <= self.re_max + slack
            && z.im >= self.im_min - slack
            && z.im <= self.im_max + slack
    }

    fn inflate(&self, d: f64) -> Rect {
        Rect {
            re_min: self.re_min - d,
            re_max: self.re_max + d,
            im_min: self.im_min - d,
            im_max: self.im_max + d,
        }
    }

    fn split(&self, fraction: f64) -> (Rect, Rect) {
        if self.re_max - self.re_min >= self.im_max - self.im_min {
            let cut = self.re_min + fraction * (self.re_max - self.re_min);
            (Rect { re_max: cut, ..*self }, Rect { re_min: cut, ..*self })
        } else {
            let cut = self.im_min + fraction * (self.im_max - self.im_min);
            (Rect { im_max: cut, ..*self }, Rect { im_min: cut, ..*self })
        }
    }
}

impl CharFunction {
    pub fn new(measure: MeasureRep) -> Self {
        Self { measure }
    }

    pub fn measure(&self) -> &MeasureRep {
        &self.measure
    }

    pub fn kind(&self) -> CharKind {
        if self.measure.is_delay() {
            CharKind::Delay
        } else {
            CharKind::Volterra
        }
    }

    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    fn char_matrix(&self, lambda: Complex64) -> Result<DMatrix<Complex64>> {
        let tv = self.measure.laplace_transform(lambda);
        let transform = tv.value.ok_or(Error::DomainViolation {
            re: lambda.re,
            abscissa: self.measure.alpha_star(),
        })?;
        let d = self.measure.dim();
        let mut m = -transform;
        for i in 0..d {
            m[(i, i)] += lambda;
        }
        Ok(m)
    }

    /// Derivative of the characteristic matrix, `I - T'(lambda)`, in closed
    /// form within the representation class.
    fn char_matrix_deriv(&self, lambda: Complex64) -> Result<DMatrix<Complex64>> {
        let d = self.measure.dim();
        let mut tp = DMatrix::<Complex64>::zeros(d, d);
        match self.measure.support() {
            Support::VolterraHalfLine => {
                if lambda.re <= self.measure.alpha_star() {
                    return Err(Error::DomainViolation {
                        re: lambda.re,
                        abscissa: self.measure.alpha_star(),
                    });
                }
                for (loc, w) in self.measure.atoms() {
                    let factor = -loc * (-lambda * *loc).exp();
                    add_scaled(&mut tp, w, factor);
                }
                for term in self.measure.density() {
                    let z = lambda - Complex64::new(term.rate, 0.0);
                    let ib = Complex64::new(0.0, term.freq);
                    // d/dlambda of k!/(z -+ ib)^{k+1} is -(k+1)!/(z -+ ib)^{k+2}
                    let k = term.degree;
                    let fact: f64 = (1..=k + 1).map(|i| i as f64).product();
                    let plus = -fact / (z - ib).powu(k + 2);
                    let minus = -fact / (z + ib).powu(k + 2);
                    let factor = match term.phase {
                        TrigPhase::Cos => 0.5 * (plus + minus),
                        TrigPhase::Sin => (plus - minus) / Complex64::new(0.0, 2.0),
                    };
                    add_scaled(&mut tp, &term.coeff, factor);
                }
            }
            Support::DelayInterval { delay_tau } => {
                for (loc, w) in self.measure.atoms() {
                    let factor = loc * (lambda * *loc).exp();
                    add_scaled(&mut tp, w, factor);
                }
                for term in self.measure.density() {
                    let z = lambda + Complex64::new(term.rate, 0.0);
                    let ib = Complex64::new(0.0, term.freq);
                    let plus = int_poly_exp(term.degree + 1, z + ib, -delay_tau, 0.0);
                    let minus = int_poly_exp(term.degree + 1, z - ib, -delay_tau, 0.0);
                    let factor = match term.phase {
                        TrigPhase::Cos => 0.5 * (plus + minus),
                        TrigPhase::Sin => (plus - minus) / Complex64::new(0.0, 2.0),
                    };
                    add_scaled(&mut tp, &term.coeff, factor);
                }
            }
        }
        let mut m = -tp;
        for i in 0..d {
            m[(i, i)] += Complex64::new(1.0, 0.0);
        }
        Ok(m)
    }

    /// `det(lambda I - T(lambda))` via LU with partial pivoting.
    pub fn eval(&self, lambda: Complex64) -> Result<Complex64> {
        Ok(self.char_matrix(lambda)?.lu().determinant())
    }

    /// Logarithmic derivative `h'/h = tr(M^{-1} M')`; exact up to LU rounding.
    fn log_deriv(&self, lambda: Complex64) -> Result<Complex64> {
        let m = self.char_matrix(lambda)?;
        let mp = self.char_matrix_deriv(lambda)?;
        let lu = m.lu();
        let sol = lu
            .solve(&mp)
            .ok_or_else(|| Error::ContourNonConvergence("singular characteristic matrix".into()))?;
        Ok(sol.trace())
    }

    /// Number of zeros (with multiplicity) inside the rectangle, by the
    /// winding number of `h` along the boundary. The boundary must stay away
    /// from zeros; on failure the box is inflated slightly and retried.
    pub fn count_zeros(&self, re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<i64> {
        let mut rect = Rect { re_min, re_max, im_min, im_max };
        let mut last_err = None;
        for attempt in 0..5 {
            match self.winding(&rect) {
                Ok(w) => return Ok(w),
                Err(e) => {
                    last_err = Some(e);
                    let d = (attempt + 1) as f64 * 1e-3 * (1.0 + rect.diag());
                    rect = rect.inflate(d);
                }
            }
        }
        Err(last_err.unwrap_or(Error::BoundaryOnZero(5)))
    }

    fn winding(&self, rect: &Rect) -> Result<i64> {
        let corners = rect.corners();
        let mut total = 0.0;
        let mut max_mod: f64 = 0.0;
        let mut min_mod = f64::INFINITY;
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let fa = self.eval(a)?;
            let fb = self.eval(b)?;
            max_mod = max_mod.max(fa.norm());
            min_mod = min_mod.min(fa.norm());
            total += self.edge_phase(a, b, fa, fb, 0, &mut max_mod, &mut min_mod)?;
        }
        if min_mod < 1e-12 * (1.0 + max_mod) {
            return Err(Error::BoundaryOnZero(0));
        }
        let w = total / std::f64::consts::TAU;
        let rounded = w.round();
        if (w - rounded).abs() > 0.25 {
            return Err(Error::ContourNonConvergence(format!(
                "winding number {w} not close to an integer"
            )));
        }
        Ok(rounded as i64)
    }

    #[allow(clippy::too_many_arguments)]
    fn edge_phase(
        &self,
        a: Complex64,
        b: Complex64,
        fa: Complex64,
        fb: Complex64,
        depth: usize,
        max_mod: &mut f64,
        min_mod: &mut f64,
    ) -> Result<f64> {
        let step = (fb / fa).arg();
        if step.abs() < std::f64::consts::FRAC_PI_2 && depth >= 4 {
            return Ok(step);
        }
        if depth > 48 {
            return Err(Error::BoundaryOnZero(depth));
        }
        let m = 0.5 * (a + b);
        let fm = self.eval(m)?;
        *max_mod = max_mod.max(fm.norm());
        *min_mod = min_mod.min(fm.norm());
        if fm.norm() < 1e-14 * (1.0 + *max_mod) {
            return Err(Error::BoundaryOnZero(depth));
        }
        Ok(self.edge_phase(a, m, fa, fm, depth + 1, max_mod, min_mod)?
            + self.edge_phase(m, b, fm, fb, depth + 1, max_mod, min_mod)?)
    }

    /// Newton polishing with known zero count `mult` of the target cluster,
    /// using the analytic logarithmic derivative.
    fn polish(&self, start: Complex64, mult: usize) -> Result<(Complex64, f64)> {
        let mut z = start;
        let mut best = (z, f64::INFINITY);
        for _ in 0..120 {
            let ld = match self.log_deriv(z) {
                Ok(v) => v,
                Err(_) => break,
            };
            if !ld.is_finite() || ld.norm() < 1e-300 {
                break;
            }
            let step = Complex64::new(mult as f64, 0.0) / ld;
            z -= step;
            let hz = match self.eval(z) {
                Ok(v) => v.norm(),
                Err(_) => break,
            };
            if hz < best.1 {
                best = (z, hz);
            }
            if step.norm() < 1e-14 * (1.0 + z.norm()) {
                break;
            }
        }
        Ok(best)
    }

    /// First-moment contour refinement: the centroid of the zeros inside the
    /// circle equals `(1/(2 pi i mult)) * closed-integral of lambda h'/h`.
    fn moment_center(&self, center: Complex64, radius: f64, mult: usize) -> Result<Complex64> {
        let mut nodes = 128usize;
        let mut prev: Option<Complex64> = None;
        for _ in 0..6 {
            let mut s1 = Complex64::new(0.0, 0.0);
            for j in 0..nodes {
                let theta = std::f64::consts::TAU * j as f64 / nodes as f64;
                let e = Complex64::from_polar(1.0, theta);
                let z = center + radius * e;
                s1 += z * self.log_deriv(z)? * e;
            }
            s1 *= radius / nodes as f64;
            let c = s1 / mult as f64;
            if let Some(p) = prev {
                if (c - p).norm() < 1e-12 * (1.0 + c.norm()) {
                    return Ok(c);
                }
            }
            prev = Some(c);
            nodes *= 2;
        }
        prev.ok_or_else(|| Error::ContourNonConvergence("moment refinement failed".into()))
    }

    /// Locate all zeros with `Im >= 0` in the search box (the box extends
    /// symmetrically below the real axis; conjugates are recorded by flag).
    pub fn find_roots(&self, search: SearchBox) -> Result<Vec<Root>> {
        let alpha_star = self.measure.alpha_star();
        if self.kind() == CharKind::Volterra && search.re_min <= alpha_star {
            return Err(Error::InvalidInput(format!(
                "search box must satisfy re_min > alpha* = {alpha_star}"
            )));
        }
        let im_max = match search.im_max {
            Some(v) => v,
            None => {
                let tv = self.measure.total_variation_transform(search.re_min).unwrap_or(1.0);
                4.0 * (1.0 + tv)
            }
        };
        let requested = Rect {
            re_min: search.re_min,
            re_max: search.re_max,
            im_min: -im_max,
            im_max,
        };
        // A zero sitting exactly on the requested boundary defeats the
        // argument principle; widen until the boundary is clean and filter
        // the located roots back to the requested box afterwards.
        let mut root_box = requested;
        let mut total = None;
        for attempt in 0..6 {
            match self.winding(&root_box) {
                Ok(w) => {
                    total = Some(w);
                    break;
                }
                Err(_) => {
                    let d = (attempt + 1) as f64 * 1e-3 * (1.0 + requested.diag());
                    root_box = requested.inflate(d);
                    if self.kind() == CharKind::Volterra && alpha_star.is_finite() {
                        root_box.re_min = root_box.re_min.max(0.5 * (search.re_min + alpha_star));
                    }
                }
            }
        }
        let total = total.ok_or(Error::BoundaryOnZero(6))?;
        let mut found: Vec<(Complex64, usize, f64)> = Vec::new();
        let mut stack = vec![(root_box, total)];
        let mut budget = MAX_SUBDIVISIONS;
        while let Some((rect, m)) = stack.pop() {
            if m == 0 {
                continue;
            }
            if budget == 0 {
                return Err(Error::SubdivisionDepth(MAX_SUBDIVISIONS));
            }
            budget -= 1;
            if m == 1 {
                let (z, res) = self.polish(rect.center(), 1)?;
                if res < ROOT_TOL && rect.contains(z, 0.05 * rect.diag() + 1e-9) {
                    found.push((z, 1, res));
                    continue;
                }
                // Newton wandered or stalled: isolate further below.
            }
            if rect.diag() <= CLUSTER_BOX_DIAG {
                let c0 = self.moment_center(rect.center(), rect.diag().max(2e-5) * 2.0, m as usize)?;
                let (z, res) = self.polish(c0, m as usize)?;
                let z = if res < ROOT_TOL { z } else { c0 };
                let res = self.eval(z)?.norm();
                found.push((z, m as usize, res));
                continue;
            }
            let mut done = false;
            for attempt in 0..5 {
                let fraction = 0.5 + 0.04 * attempt as f64;
                let (a, b) = rect.split(fraction);
                let ca = self.winding(&a);
                let cb = self.winding(&b);
                if let (Ok(ca), Ok(cb)) = (ca, cb) {
                    if ca + cb == m {
                        stack.push((a, ca));
                        stack.push((b, cb));
                        done = true;
                        break;
                    }
                }
            }
            if !done {
                return Err(Error::BoundaryOnZero(5));
            }
        }

        // Merge coalesced candidates.
        let mut merged: Vec<(Complex64, usize, f64)> = Vec::new();
        'outer: for (z, m, res) in found {
            for entry in merged.iter_mut() {
                if (entry.0 - z).norm() < MERGE_TOL {
                    entry.1 += m;
                    entry.2 = entry.2.min(res);
                    continue 'outer;
                }
            }
            merged.push((z, m, res));
        }

        // Keep Im >= 0 representatives; flag conjugate pairs.
        let mut reps: Vec<(Complex64, usize, f64, bool)> = Vec::new();
        let mut accounted: i64 = 0;
        for (z, m, res) in &merged {
            if z.im < -REAL_AXIS_TOL {
                continue; // covered by the conjugate representative
            }
            let real = z.im.abs() <= REAL_AXIS_TOL;
            let z = if real { Complex64::new(z.re, 0.0) } else { *z };
            let conj = !real && root_box.contains(z.conj(), 1e-9);
            accounted += *m as i64 * if conj { 2 } else { 1 };
            reps.push((z, *m, *res, conj));
        }
        if accounted != total {
            return Err(Error::WindingMismatch { expected: total, found: accounted });
        }

        // Discard roots outside, or exactly on the boundary of, the box the
        // caller asked for.
        let edge_tol = 1e-9 * (1.0 + requested.diag());
        reps.retain(|(z, _, _, _)| {
            z.re > requested.re_min + edge_tol
                && z.re < requested.re_max - edge_tol
                && z.im < requested.im_max - edge_tol
        });

        // Laurent extraction per representative.
        let mut roots = Vec::new();
        for (z, mult, res, conj) in &reps {
            let mut nearest = f64::INFINITY;
            for (other, _, _, oconj) in &reps {
                let d = (other - z).norm();
                if d > MERGE_TOL {
                    nearest = nearest.min(d);
                }
                if *oconj {
                    let d2 = (other.conj() - z).norm();
                    if d2 > MERGE_TOL {
                        nearest = nearest.min(d2);
                    }
                }
            }
            if *conj && z.im > MERGE_TOL {
                nearest = nearest.min(2.0 * z.im);
            }
            let mut radius = (0.45 * nearest).min(0.5);
            if self.kind() == CharKind::Volterra && alpha_star.is_finite() {
                radius = radius.min(0.5 * (z.re - alpha_star));
            }
            radius = radius.max(1e-3);
            let laurent = self.laurent_coeffs(*z, mult - 1, radius)?;
            let scale = laurent.iter().map(|k| k.norm()).fold(0.0_f64, f64::max);
            let pole_order = laurent
                .iter()
                .enumerate()
                .filter(|(_, k)| k.norm() > RANK_TOL * scale)
                .map(|(i, _)| i + 1)
                .max()
                .unwrap_or(0);
            if pole_order == 0 {
                return Err(Error::ContourNonConvergence(format!(
                    "no nonzero Laurent coefficient at root {z}"
                )));
            }
            roots.push(Root {
                location: *z,
                multiplicity: *mult,
                pole_order,
                laurent,
                residual: *res,
                conjugate_pair: *conj,
            });
        }
        roots.sort_by(|a, b| {
            b.location
                .re
                .partial_cmp(&a.location.re)
                .unwrap()
                .then(a.location.im.partial_cmp(&b.location.im).unwrap())
        });
        Ok(roots)
    }

    /// Laurent coefficients `K_{j,0} .. K_{j,max_m}` about `root` on a circle
    /// of the given radius, doubling the node count until two successive
    /// answers agree to 1e-9.
    pub fn laurent_coeffs(
        &self,
        root: Complex64,
        max_m: usize,
        radius: f64,
    ) -> Result<Vec<DMatrix<Complex64>>> {
        let d = self.measure.dim();
        let mut nodes = 64usize;
        let mut prev: Option<Vec<DMatrix<Complex64>>> = None;
        let mut rot = 0.0f64;
        let mut retried = 0;
        while nodes <= 8192 {
            let mut sums = vec![DMatrix::<Complex64>::zeros(d, d); max_m + 1];
            let mut singular = false;
            for j in 0..nodes {
                let theta = std::f64::consts::TAU * (j as f64 + rot) / nodes as f64;
                let e = Complex64::from_polar(1.0, theta);
                let z = root + radius * e;
                let m = self.char_matrix(z)?;
                let inv = match m.try_inverse() {
                    Some(inv) => inv,
                    None => {
                        singular = true;
                        break;
                    }
                };
                let mut phase = e; // e^{i (m+1) theta}
                for sum in sums.iter_mut() {
                    *sum += inv.map(|x| x * phase);
                    phase *= e;
                }
            }
            if singular {
                retried += 1;
                if retried > 4 {
                    return Err(Error::ContourNonConvergence("singular node persisted".into()));
                }
                rot += 0.31;
                continue;
            }
            let mut fact = 1.0;
            let coeffs: Vec<DMatrix<Complex64>> = sums
                .into_iter()
                .enumerate()
                .map(|(m, s)| {
                    if m > 0 {
                        fact *= m as f64;
                    }
                    let factor = radius.powi(m as i32 + 1) / (fact * nodes as f64);
                    s.map(|x| x * factor)
                })
                .collect();
            if let Some(p) = prev {
                let diff = p
                    .iter()
                    .zip(&coeffs)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0_f64, f64::max);
                let scale = coeffs.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
                if diff < 1e-9 * (1.0 + scale) {
                    return Ok(coeffs);
                }
            }
            prev = Some(coeffs);
            nodes *= 2;
        }
        Err(Error::ContourNonConvergence(format!(
            "Laurent extraction at {root} did not stabilise"
        )))
    }

    /// Full spectral summary over the search box.
    pub fn spectral_summary(&self, search: SearchBox) -> Result<SpectralData> {
        let roots = self.find_roots(search)?;
        let alpha_star = self.measure.alpha_star();
        if roots.is_empty() {
            return Err(Error::AlphaNotFound {
                diagnostic: format!(
                    "the characteristic function has no zeros in [{}, {}] x [-{im}, {im}]; \
                     if the critical exponent lies at or below the transform abscissa \
                     alpha* = {alpha_star}, supply the leading expansion (alpha, n, beta_j, \
                     P*_j, Q*_j) from a closed-form resolvent instead",
                    search.re_min,
                    search.re_max,
                    im = search.im_max.unwrap_or(f64::NAN),
                ),
            });
        }
        let alpha = roots.iter().map(|r| r.location.re).fold(f64::NEG_INFINITY, f64::max);
        let cluster: Vec<&Root> = roots
            .iter()
            .filter(|r| (r.location.re - alpha).abs() <= CLUSTER_TOL)
            .collect();
        let n = cluster.iter().map(|r| r.pole_order - 1).max().unwrap();
        let mut modes = Vec::new();
        for root in cluster.iter().filter(|r| r.pole_order - 1 == n) {
            let real = root.location.im.abs() <= REAL_AXIS_TOL;
            let take = |k: &DMatrix<Complex64>| -> (DMatrix<f64>, DMatrix<f64>) {
                if real {
                    (k.map(|x| x.re), DMatrix::zeros(k.nrows(), k.ncols()))
                } else {
                    (k.map(|x| 2.0 * x.re), k.map(|x| -2.0 * x.im))
                }
            };
            let mut p_poly = Vec::with_capacity(n + 1);
            let mut q_poly = Vec::with_capacity(n + 1);
            for m in 0..=n {
                let (p, q) = if m < root.laurent.len() {
                    take(&root.laurent[m])
                } else {
                    let d = self.measure.dim();
                    (DMatrix::zeros(d, d), DMatrix::zeros(d, d))
                };
                p_poly.push(p);
                q_poly.push(q);
            }
            let pstar = p_poly[n].clone();
            let qstar = q_poly[n].clone();
            if pstar.norm() + qstar.norm() < 1e-12 {
                return Err(Error::ContourNonConvergence(format!(
                    "both P* and Q* vanish at leading root {}",
                    root.location
                )));
            }
            modes.push(LeadingMode {
                beta: root.location.im.max(0.0),
                pstar,
                qstar,
                p_poly,
                q_poly,
                pole_order: root.pole_order,
            });
        }
        let next = roots
            .iter()
            .map(|r| r.location.re)
            .filter(|re| alpha - re > CLUSTER_TOL)
            .fold(f64::NEG_INFINITY, f64::max);
        let below = if next.is_finite() { next } else { search.re_min };
        let gap = match self.kind() {
            CharKind::Volterra => 0.5 * (alpha - below).min(alpha - alpha_star),
            CharKind::Delay => alpha - below,
        };
        Ok(SpectralData {
            alpha_star,
            roots,
            expansion: LeadingExpansion { alpha, n, modes, gap },
        })
    }
}

fn add_scaled(out: &mut DMatrix<Complex64>, coeff: &DMatrix<f64>, factor: Complex64) {
    for (o, c) in out.iter_mut().zip(coeff.iter()) {
        *o += factor * c;
    }
}

impl LeadingExpansion {
    /// Closed-form expansion with a single mode, for the route through the
    /// asymptotic theorem when the spectrum is supplied by hand.
    pub fn single_mode(
        alpha: f64,
        n: usize,
        beta: f64,
        pstar: DMatrix<f64>,
        qstar: DMatrix<f64>,
        gap: f64,
    ) -> Self {
        let mut p_poly = vec![DMatrix::zeros(pstar.nrows(), pstar.ncols()); n + 1];
        let mut q_poly = p_poly.clone();
        p_poly[n] = pstar.clone();
        q_poly[n] = qstar.clone();
        LeadingExpansion {
            alpha,
            n,
            modes: vec![LeadingMode { beta, pstar, qstar, p_poly, q_poly, pole_order: n + 1 }],
            gap,
        }
    }
}

impl SpectralData {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "alpha": self.expansion.alpha,
            "alpha_star": if self.alpha_star.is_finite() { json!(self.alpha_star) } else { json!("-inf") },
            "n": self.expansion.n,
            "leading": self.expansion.modes.iter().map(|m| json!({
                "beta": m.beta,
                "Pstar": crate::measures::mat_to_rows(&m.pstar),
                "Qstar": crate::measures::mat_to_rows(&m.qstar),
                "pole_order": m.pole_order,
            })).collect::<Vec<_>>(),
            "gap": self.expansion.gap,
            "roots": self.roots.iter().map(|r| json!({
                "re": r.location.re,
                "im": r.location.im,
                "multiplicity": r.multiplicity,
                "pole_order": r.pole_order,
                "residual": r.residual,
                "conjugate_pair": r.conjugate_pair,
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ExpPolyTerm;
    use approx::assert_relative_eq;

    fn example4() -> CharFunction {
        CharFunction::new(
            MeasureRep::new(
                1,
                Support::VolterraHalfLine,
                vec![(0.0, DMatrix::from_element(1, 1, -6.0))],
                vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, -4.0), 0, -1.0, 0.0, TrigPhase::Cos).unwrap()],
            )
            .unwrap(),
        )
    }

    fn example5() -> CharFunction {
        let a = 3.0 / (1.0 - (-1.0f64).exp());
        CharFunction::new(
            MeasureRep::new(
                1,
                Support::DelayInterval { delay_tau: 1.0 / 3.0 },
                vec![
                    (0.0, DMatrix::from_element(1, 1, a)),
                    (-1.0 / 3.0, DMatrix::from_element(1, 1, -a)),
                ],
                vec![],
            )
            .unwrap(),
        )
    }

    fn matrix_drift(a: DMatrix<f64>) -> CharFunction {
        let d = a.nrows();
        CharFunction::new(MeasureRep::new(d, Support::VolterraHalfLine, vec![(0.0, a)], vec![]).unwrap())
    }

    #[test]
    fn eval_scalar_atom_is_lambda_minus_a() {
        let cf = matrix_drift(DMatrix::from_element(1, 1, 0.7));
        let v = cf.eval(Complex64::new(2.0, 1.0)).unwrap();
        assert!((v - Complex64::new(1.3, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn eval_example4_at_zero_is_ten() {
        let v = example4().eval(Complex64::new(0.0, 0.0)).unwrap();
        assert_relative_eq!(v.re, 10.0, epsilon = 1e-12);
        assert!(v.im.abs() < 1e-12);
    }

    #[test]
    fn eval_example5_vanishes_at_three() {
        let v = example5().eval(Complex64::new(3.0, 0.0)).unwrap();
        assert!(v.norm() < 1e-12);
    }

    #[test]
    fn counting_simple_roots() {
        let cf = matrix_drift(DMatrix::from_element(1, 1, -1.0));
        assert_eq!(cf.count_zeros(-2.0, 0.0, -1.0, 1.0).unwrap(), 1);
        assert_eq!(cf.count_zeros(0.5, 2.0, -1.0, 1.0).unwrap(), 0);
    }

    #[test]
    fn counting_example5_box() {
        assert_eq!(example5().count_zeros(2.5, 3.5, -1.0, 1.0).unwrap(), 1);
    }

    #[test]
    fn counting_example4_domain_box_is_empty() {
        assert_eq!(example4().count_zeros(-0.5, 1.0, -5.0, 5.0).unwrap(), 0);
    }

    #[test]
    fn find_roots_example5() {
        let roots = example5()
            .find_roots(SearchBox { re_min: 0.0, re_max: 5.0, im_max: Some(20.0) })
            .unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].location - Complex64::new(3.0, 0.0)).norm() < 1e-10);
        assert_eq!(roots[0].pole_order, 1);
        assert!(!roots[0].conjugate_pair);
    }

    #[test]
    fn find_roots_scalar_atom() {
        let cf = matrix_drift(DMatrix::from_element(1, 1, -1.0));
        let roots = cf
            .find_roots(SearchBox { re_min: -3.0, re_max: 1.0, im_max: Some(2.0) })
            .unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].location - Complex64::new(-1.0, 0.0)).norm() < 1e-11);
    }

    #[test]
    fn find_roots_rotation_conjugate_flagged() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let cf = matrix_drift(j.clone());
        let roots = cf
            .find_roots(SearchBox { re_min: -1.0, re_max: 1.0, im_max: Some(2.0) })
            .unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].location - Complex64::new(0.0, 1.0)).norm() < 1e-10);
        assert!(roots[0].conjugate_pair);
        // K_{1,0} = (I - iJ)/2
        let k0 = &roots[0].laurent[0];
        for r in 0..2 {
            for c in 0..2 {
                let expect = Complex64::new(if r == c { 0.5 } else { 0.0 }, -0.5 * j[(r, c)]);
                assert!((k0[(r, c)] - expect).norm() < 1e-9, "K0 mismatch at ({r},{c})");
            }
        }
    }

    #[test]
    fn defective_jordan_block_pole_order_two() {
        let gamma = 0.3;
        let a = DMatrix::from_row_slice(2, 2, &[gamma, 1.0, 0.0, gamma]);
        let cf = matrix_drift(a.clone());
        let sd = cf
            .spectral_summary(SearchBox { re_min: -1.0, re_max: 1.0, im_max: Some(1.0) })
            .unwrap();
        assert_eq!(sd.expansion.n, 1);
        assert_eq!(sd.expansion.modes.len(), 1);
        let pstar = &sd.expansion.modes[0].pstar;
        let expected = &a - gamma * DMatrix::identity(2, 2);
        assert!((pstar - &expected).norm() < 1e-8, "P* = {pstar}");
        assert!((sd.roots[0].location - Complex64::new(gamma, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn spectral_summary_example5_values() {
        let sd = example5()
            .spectral_summary(SearchBox { re_min: 0.0, re_max: 5.0, im_max: Some(20.0) })
            .unwrap();
        assert_relative_eq!(sd.expansion.alpha, 3.0, epsilon = 1e-10);
        assert_eq!(sd.expansion.n, 0);
        let e1 = (-1.0f64).exp();
        let pstar_expected = (1.0 - e1) / (1.0 - 2.0 * e1);
        assert_relative_eq!(sd.expansion.modes[0].pstar[(0, 0)], pstar_expected, epsilon = 1e-8);
        assert!(sd.expansion.gap > 0.0);
    }

    #[test]
    fn spectral_summary_example4_alpha_not_found() {
        let err = example4()
            .spectral_summary(SearchBox { re_min: -0.9, re_max: 2.0, im_max: Some(5.0) })
            .unwrap_err();
        assert!(matches!(err, Error::AlphaNotFound { .. }));
    }

    #[test]
    fn winding_consistency_with_multiplicities() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        let cf = matrix_drift(a);
        let total = cf.count_zeros(-3.0, 3.0, -1.0, 1.0).unwrap();
        let roots = cf
            .find_roots(SearchBox { re_min: -3.0, re_max: 3.0, im_max: Some(1.0) })
            .unwrap();
        let sum: i64 = roots
            .iter()
            .map(|r| r.multiplicity as i64 * if r.conjugate_pair { 2 } else { 1 })
            .sum();
        assert_eq!(sum, total);
        assert_eq!(roots.len(), 2);
    }

    #[test]
    fn contour_radius_independence() {
        let root = Complex64::new(3.0, 0.0);
        let k1 = example5().laurent_coeffs(root, 0, 0.4).unwrap();
        let k2 = example5().laurent_coeffs(root, 0, 0.2).unwrap();
        assert!((&k1[0] - &k2[0]).norm() < 1e-8);
    }

    #[test]
    fn conjugate_root_laurent_is_conjugate() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let cf = matrix_drift(j);
        let kp = cf.laurent_coeffs(Complex64::new(0.0, 1.0), 0, 0.3).unwrap();
        let km = cf.laurent_coeffs(Complex64::new(0.0, -1.0), 0, 0.3).unwrap();
        let diff = (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| (kp[0][(r, c)].conj() - km[0][(r, c)]).norm())
            .fold(0.0_f64, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn constant_drift_roots_match_eigenvalues_and_residues_sum_to_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[0.4, 1.0, 0.0, -1.0, 0.2, 0.5, 0.0, 0.3, -0.8]);
        let cf = matrix_drift(a.clone());
        let roots = cf
            .find_roots(SearchBox { re_min: -3.0, re_max: 3.0, im_max: Some(4.0) })
            .unwrap();
        // oracle: direct eigensolver
        let eigs = a.complex_eigenvalues();
        for r in &roots {
            let best = eigs
                .iter()
                .map(|e| (e - r.location).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "root {} not an eigenvalue", r.location);
        }
        // sum of K_{j,0} over all simple roots (conjugates included) = I
        let mut sum = DMatrix::<Complex64>::zeros(3, 3);
        for r in &roots {
            sum += &r.laurent[0];
            if r.conjugate_pair {
                sum += r.laurent[0].map(|x| x.conj());
            }
        }
        let eye = DMatrix::<Complex64>::identity(3, 3);
        assert!((sum - eye).norm() < 1e-8);
    }
}
