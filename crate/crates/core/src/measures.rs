//! Finite signed matrix measures closed under Laplace transformation.
//!
//! A measure is a sum of Dirac atoms and exponential-polynomial-trigonometric
//! densities `C t^k e^{g t} trig(b t)` on its support, which is either the
//! half-line `[0, inf)` (Volterra kernels, transform convention `e^{-lambda s}`)
//! or a bounded interval `[-tau, 0]` (delay kernels, convention `e^{+lambda s}`).
//! Every transform evaluates in closed form; no quadrature is involved.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{int_poly_exp, int_poly_exp_halfline};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Support {
    #[serde(rename = "volterra")]
    VolterraHalfLine,
    #[serde(untagged)]
    DelayInterval { delay_tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigPhase {
    Cos,
    Sin,
}

/// One density term `coeff * t^degree * e^{rate t} * trig(freq t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPolyTerm {
    pub coeff: DMatrix<f64>,
    pub degree: u32,
    pub rate: f64,
    pub freq: f64,
    pub phase: TrigPhase,
}

impl ExpPolyTerm {
    pub fn new(coeff: DMatrix<f64>, degree: u32, rate: f64, freq: f64, phase: TrigPhase) -> Result<Self> {
        if freq < 0.0 {
            return Err(Error::InvalidInput("trig frequency must be nonnegative".into()));
        }
        if freq == 0.0 && phase == TrigPhase::Sin {
            return Err(Error::InvalidInput(
                "freq = 0 with phase = sin is the identically-zero term".into(),
            ));
        }
        if !coeff.iter().all(|x| x.is_finite()) || !rate.is_finite() || !freq.is_finite() {
            return Err(Error::InvalidInput("non-finite density term".into()));
        }
        Ok(Self { coeff, degree, rate, freq, phase })
    }

    /// Scalar factor `t^degree e^{rate t} trig(freq t)`.
    pub fn scalar_at(&self, t: f64) -> f64 {
        let trig = match self.phase {
            TrigPhase::Cos => (self.freq * t).cos(),
            TrigPhase::Sin => (self.freq * t).sin(),
        };
        t.powi(self.degree as i32) * (self.rate * t).exp() * trig
    }
}

/// Finite signed matrix measure: atoms plus exp-poly-trig densities.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureRep {
    dim: usize,
    support: Support,
    atoms: Vec<(f64, DMatrix<f64>)>,
    density: Vec<ExpPolyTerm>,
}

/// Result of a Laplace-transform evaluation.
#[derive(Debug, Clone)]
pub struct TransformValue {
    pub value: Option<DMatrix<Complex64>>,
    pub domain_ok: bool,
}

impl MeasureRep {
    pub fn new(
        dim: usize,
        support: Support,
        atoms: Vec<(f64, DMatrix<f64>)>,
        density: Vec<ExpPolyTerm>,
    ) -> Result<Self> {
        if dim == 0 || dim > 8 {
            return Err(Error::InvalidInput(format!("dimension {dim} outside supported range 1..=8")));
        }
        for (loc, w) in &atoms {
            if w.nrows() != dim || w.ncols() != dim {
                return Err(Error::InvalidInput("atom weight shape mismatch".into()));
            }
            match support {
                Support::VolterraHalfLine if *loc < 0.0 => {
                    return Err(Error::InvalidInput(format!("atom location {loc} outside [0, inf)")));
                }
                Support::DelayInterval { delay_tau } if *loc < -delay_tau - 1e-12 || *loc > 0.0 => {
                    return Err(Error::InvalidInput(format!("atom location {loc} outside [-{delay_tau}, 0]")));
                }
                _ => {}
            }
        }
        for term in &density {
            if term.coeff.nrows() != dim || term.coeff.ncols() != dim {
                return Err(Error::InvalidInput("density coefficient shape mismatch".into()));
            }
        }
        if let Support::DelayInterval { delay_tau } = support {
            if !(delay_tau > 0.0) {
                return Err(Error::InvalidInput("delay_tau must be positive".into()));
            }
        }
        Ok(Self { dim, support, atoms, density })
    }

    /// Scalar convenience constructor for the half-line.
    pub fn volterra_scalar_atom(a: f64) -> Self {
        Self::new(1, Support::VolterraHalfLine, vec![(0.0, DMatrix::from_element(1, 1, a))], vec![]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn atoms(&self) -> &[(f64, DMatrix<f64>)] {
        &self.atoms
    }

    pub fn density(&self) -> &[ExpPolyTerm] {
        &self.density
    }

    pub fn is_delay(&self) -> bool {
        matches!(self.support, Support::DelayInterval { .. })
    }

    pub fn delay_tau(&self) -> Option<f64> {
        match self.support {
            Support::DelayInterval { delay_tau } => Some(delay_tau),
            Support::VolterraHalfLine => None,
        }
    }

    /// Abscissa of absolute convergence of the transform. Atoms and compactly
    /// supported measures contribute `-inf`; a half-line density contributes
    /// its exponential rate.
    pub fn alpha_star(&self) -> f64 {
        match self.support {
            Support::DelayInterval { .. } => f64::NEG_INFINITY,
            Support::VolterraHalfLine => self
                .density
                .iter()
                .map(|t| t.rate)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Closed-form `integral e^{-lambda s} mu(ds)` (Volterra) or
    /// `integral e^{+lambda s} nu(ds)` (delay).
    pub fn laplace_transform(&self, lambda: Complex64) -> TransformValue {
        if !self.is_delay() && lambda.re <= self.alpha_star() {
            return TransformValue { value: None, domain_ok: false };
        }
        let mut out = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        match self.support {
            Support::VolterraHalfLine => {
                for (loc, w) in &self.atoms {
                    let factor = (-lambda * *loc).exp();
                    add_scaled(&mut out, w, factor);
                }
                for term in &self.density {
                    let z = lambda - Complex64::new(term.rate, 0.0);
                    let ib = Complex64::new(0.0, term.freq);
                    let plus = int_poly_exp_halfline(term.degree, z - ib);
                    let minus = int_poly_exp_halfline(term.degree, z + ib);
                    let factor = match term.phase {
                        TrigPhase::Cos => 0.5 * (plus + minus),
                        TrigPhase::Sin => (plus - minus) / Complex64::new(0.0, 2.0),
                    };
                    add_scaled(&mut out, &term.coeff, factor);
                }
            }
            Support::DelayInterval { delay_tau } => {
                for (loc, w) in &self.atoms {
                    let factor = (lambda * *loc).exp();
                    add_scaled(&mut out, w, factor);
                }
                for term in &self.density {
                    let z = lambda + Complex64::new(term.rate, 0.0);
                    let ib = Complex64::new(0.0, term.freq);
                    let plus = int_poly_exp(term.degree, z + ib, -delay_tau, 0.0);
                    let minus = int_poly_exp(term.degree, z - ib, -delay_tau, 0.0);
                    let factor = match term.phase {
                        TrigPhase::Cos => 0.5 * (plus + minus),
                        TrigPhase::Sin => (plus - minus) / Complex64::new(0.0, 2.0),
                    };
                    add_scaled(&mut out, &term.coeff, factor);
                }
            }
        }
        TransformValue { value: Some(out), domain_ok: true }
    }

    /// `integral e^{-a s} |mu|(ds)` (Volterra) or `integral e^{a s} |nu|(ds)`
    /// (delay), reduced to the Frobenius norm of the elementwise
    /// total-variation matrix. Trig densities are integrated piecewise
    /// between sign changes; half-line pieces are truncated at `40 / rho`
    /// with the (certified, nonnegative) tail added as a bound.
    pub fn total_variation_transform(&self, a: f64) -> Result<f64> {
        if !self.is_delay() && a <= self.alpha_star() {
            return Err(Error::DomainViolation { re: a, abscissa: self.alpha_star() });
        }
        let mut tv = DMatrix::<f64>::zeros(self.dim, self.dim);
        for (loc, w) in &self.atoms {
            let weight = match self.support {
                Support::VolterraHalfLine => (-a * loc).exp(),
                Support::DelayInterval { .. } => (a * loc).exp(),
            };
            tv.zip_apply(w, |acc, x| *acc += weight * x.abs());
        }
        for term in &self.density {
            let scalar = match self.support {
                Support::VolterraHalfLine => {
                    let rho = a - term.rate; // > 0 by the domain check
                    abs_trig_poly_exp_halfline(term.degree, rho, term.freq, term.phase)
                }
                Support::DelayInterval { delay_tau } => {
                    abs_trig_poly_exp_interval(term.degree, a + term.rate, term.freq, term.phase, -delay_tau, 0.0)
                }
            };
            tv.zip_apply(&term.coeff, |acc, x| *acc += scalar * x.abs());
        }
        Ok(tv.norm())
    }

    /// Density value at `t` (sum of terms), excluding atoms.
    pub fn density_value(&self, t: f64) -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(self.dim, self.dim);
        for term in &self.density {
            let s = term.scalar_at(t);
            out.zip_apply(&term.coeff, |acc, x| *acc += s * x);
        }
        out
    }

    /// Exponentially tilted measure generating the dynamics of
    /// `e^{-c t} r(t)`: `e^{-c s} mu(ds) - c delta_0` on the half-line,
    /// `e^{+c s} nu(ds) - c delta_0` on a delay interval. Exact within the
    /// representation class.
    pub fn tilted(&self, c: f64) -> Self {
        let sign = if self.is_delay() { 1.0 } else { -1.0 };
        let mut atoms: Vec<(f64, DMatrix<f64>)> = self
            .atoms
            .iter()
            .map(|(loc, w)| (*loc, w * (sign * c * loc).exp()))
            .collect();
        atoms.push((0.0, DMatrix::from_diagonal_element(self.dim, self.dim, -c)));
        let density = self
            .density
            .iter()
            .map(|t| ExpPolyTerm { rate: t.rate + sign * c, ..t.clone() })
            .collect();
        Self { dim: self.dim, support: self.support, atoms, density }
    }

    /// Sum of two measures over the same support.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.support != other.support {
            return Err(Error::InvalidInput("measure sum requires identical dim and support".into()));
        }
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        let mut density = self.density.clone();
        density.extend(other.density.iter().cloned());
        Self::new(self.dim, self.support, atoms, density)
    }
}

fn add_scaled(out: &mut DMatrix<Complex64>, coeff: &DMatrix<f64>, factor: Complex64) {
    for (o, c) in out.iter_mut().zip(coeff.iter()) {
        *o += factor * c;
    }
}

/// `integral_0^inf t^k e^{-rho t} |trig(beta t)| dt` for `rho > 0`.
fn abs_trig_poly_exp_halfline(k: u32, rho: f64, beta: f64, phase: TrigPhase) -> f64 {
    if beta == 0.0 {
        // |cos(0)| = 1
        return int_poly_exp_halfline(k, Complex64::new(rho, 0.0)).re;
    }
    let horizon = 40.0 / rho;
    let value = abs_trig_poly_exp_interval(k, -rho, beta, phase, 0.0, horizon);
    // tail bound beyond the horizon with |trig| <= 1
    let tail = (int_poly_exp_halfline(k, Complex64::new(rho, 0.0))
        - int_poly_exp(k, Complex64::new(-rho, 0.0), 0.0, horizon))
    .re
    .max(0.0);
    value + tail
}

/// `integral_a^b t^k e^{w t} |trig(beta t)| dt`, splitting `[a, b]` at the
/// sign changes of the trig factor.
fn abs_trig_poly_exp_interval(k: u32, w: f64, beta: f64, phase: TrigPhase, a: f64, b: f64) -> f64 {
    let wz = Complex64::new(w, 0.0);
    if beta == 0.0 {
        return int_poly_exp(k, wz, a, b).re.abs();
    }
    // zeros of cos at (pi/2 + m pi)/beta, of sin at m pi / beta
    let offset = match phase {
        TrigPhase::Cos => std::f64::consts::FRAC_PI_2,
        TrigPhase::Sin => 0.0,
    };
    let first = ((a * beta - offset) / std::f64::consts::PI).ceil();
    let mut cuts = vec![a];
    let mut m = first;
    loop {
        let z = (offset + m * std::f64::consts::PI) / beta;
        if z >= b {
            break;
        }
        if z > a {
            cuts.push(z);
        }
        m += 1.0;
    }
    cuts.push(b);
    let ib = Complex64::new(0.0, beta);
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let plus = int_poly_exp(k, wz + ib, pair[0], pair[1]);
        let minus = int_poly_exp(k, wz - ib, pair[0], pair[1]);
        let piece = match phase {
            TrigPhase::Cos => 0.5 * (plus + minus).re,
            TrigPhase::Sin => ((plus - minus) / Complex64::new(0.0, 2.0)).re,
        };
        total += piece.abs();
    }
    total
}

// --- JSON schema -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TermJson {
    matrix: Vec<Vec<f64>>,
    degree: u32,
    rate: f64,
    freq: f64,
    phase: TrigPhase,
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    loc: f64,
    weight: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    dim: usize,
    support: Support,
    atoms: Vec<AtomJson>,
    density: Vec<TermJson>,
}

pub fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn rows_to_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) || nc == 0 {
        return Err(Error::InvalidInput("ragged or empty matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl Serialize for MeasureRep {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureJson {
            dim: self.dim,
            support: self.support,
            atoms: self
                .atoms
                .iter()
                .map(|(loc, w)| AtomJson { loc: *loc, weight: mat_to_rows(w) })
                .collect(),
            density: self
                .density
                .iter()
                .map(|t| TermJson {
                    matrix: mat_to_rows(&t.coeff),
                    degree: t.degree,
                    rate: t.rate,
                    freq: t.freq,
                    phase: t.phase,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MeasureRep {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = MeasureJson::deserialize(deserializer)?;
        let atoms = raw
            .atoms
            .iter()
            .map(|a| Ok((a.loc, rows_to_mat(&a.weight).map_err(serde::de::Error::custom)?)))
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        let density = raw
            .density
            .iter()
            .map(|t| {
                ExpPolyTerm::new(
                    rows_to_mat(&t.matrix).map_err(serde::de::Error::custom)?,
                    t.degree,
                    t.rate,
                    t.freq,
                    t.phase,
                )
                .map_err(serde::de::Error::custom)
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        MeasureRep::new(raw.dim, raw.support, atoms, density).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn example4_measure() -> MeasureRep {
        // -6 delta_0 - 4 e^{-s} ds, scalar
        MeasureRep::new(
            1,
            Support::VolterraHalfLine,
            vec![(0.0, DMatrix::from_element(1, 1, -6.0))],
            vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, -4.0), 0, -1.0, 0.0, TrigPhase::Cos).unwrap()],
        )
        .unwrap()
    }

    fn example5_measure(a: f64) -> MeasureRep {
        MeasureRep::new(
            1,
            Support::DelayInterval { delay_tau: 1.0 / 3.0 },
            vec![
                (0.0, DMatrix::from_element(1, 1, a)),
                (-1.0 / 3.0, DMatrix::from_element(1, 1, -a)),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn atom_transform_is_exponential_factor() {
        let m = MeasureRep::volterra_scalar_atom(2.5);
        let tv = m.laplace_transform(Complex64::new(1.0, 0.0));
        assert!(tv.domain_ok);
        assert_relative_eq!(tv.value.unwrap()[(0, 0)].re, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn example4_transform_matches_closed_form() {
        let m = example4_measure();
        for lambda in [Complex64::new(0.0, 0.0), Complex64::new(1.0, 2.0), Complex64::new(-0.5, 4.0)] {
            let tv = m.laplace_transform(lambda);
            assert!(tv.domain_ok);
            let expected = Complex64::new(-6.0, 0.0) - 4.0 / (lambda + 1.0);
            let got = tv.value.unwrap()[(0, 0)];
            assert!((got - expected).norm() < 1e-12, "lambda={lambda}, got {got}, want {expected}");
        }
    }

    #[test]
    fn example5_transform_matches_closed_form() {
        let a = 3.0 / (1.0 - (-1.0f64).exp());
        let m = example5_measure(a);
        let lambda = Complex64::new(3.0, 0.0);
        let got = m.laplace_transform(lambda).value.unwrap()[(0, 0)];
        let expected = a - a * (-lambda / 3.0).exp();
        assert!((got - expected).norm() < 1e-12);
    }

    #[test]
    fn alpha_star_examples() {
        assert_relative_eq!(example4_measure().alpha_star(), -1.0);
        assert_eq!(MeasureRep::volterra_scalar_atom(1.0).alpha_star(), f64::NEG_INFINITY);
        assert_eq!(example5_measure(1.0).alpha_star(), f64::NEG_INFINITY);
    }

    #[test]
    fn domain_flags_around_abscissa() {
        let m = example4_measure();
        assert!(!m.laplace_transform(Complex64::new(-1.1, 0.0)).domain_ok);
        assert!(m.laplace_transform(Complex64::new(-0.9, 0.0)).domain_ok);
    }

    #[test]
    fn total_variation_examples() {
        let m = example4_measure();
        assert_relative_eq!(m.total_variation_transform(0.0).unwrap(), 10.0, epsilon = 1e-9);
        let atom = MeasureRep::volterra_scalar_atom(-3.5);
        assert_relative_eq!(atom.total_variation_transform(7.0).unwrap(), 3.5, epsilon = 1e-12);
        assert!(m.total_variation_transform(-1.0).is_err());
    }

    #[test]
    fn total_variation_trig_density_matches_quadrature() {
        // density e^{-s} cos(s), a = 0
        let m = MeasureRep::new(
            1,
            Support::VolterraHalfLine,
            vec![],
            vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, 1.0), 0, -1.0, 1.0, TrigPhase::Cos).unwrap()],
        )
        .unwrap();
        let got = m.total_variation_transform(0.0).unwrap();
        let oracle = crate::numeric::adaptive_simpson(&|s: f64| (-s).exp() * s.cos().abs(), 0.0, 40.0, 1e-13);
        assert_relative_eq!(got, oracle, epsilon = 1e-8);
    }

    #[test]
    fn rejects_zero_sin_term() {
        assert!(ExpPolyTerm::new(DMatrix::from_element(1, 1, 1.0), 0, 0.0, 0.0, TrigPhase::Sin).is_err());
    }

    #[test]
    fn json_round_trip_matches_schema() {
        let m = example4_measure();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"support\":\"volterra\""));
        let back: MeasureRep = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);

        let d = example5_measure(2.0);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("delay_tau"));
        let back: MeasureRep = serde_json::from_str(&json).unwrap();
        assert_eq!(d, back);
    }

    proptest! {
        #[test]
        fn transform_is_linear_in_the_measure(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            rate1 in -2.0f64..-0.5, rate2 in -2.0f64..-0.5,
            re in 0.5f64..3.0, im in -5.0f64..5.0,
        ) {
            let m1 = MeasureRep::new(1, Support::VolterraHalfLine,
                vec![(0.3, DMatrix::from_element(1, 1, a))],
                vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, b), 1, rate1, 2.0, TrigPhase::Sin).unwrap()]).unwrap();
            let m2 = MeasureRep::new(1, Support::VolterraHalfLine,
                vec![(1.0, DMatrix::from_element(1, 1, b))],
                vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, a), 0, rate2, 0.0, TrigPhase::Cos).unwrap()]).unwrap();
            let sum = m1.sum(&m2).unwrap();
            let lambda = Complex64::new(re, im);
            let lhs = sum.laplace_transform(lambda).value.unwrap()[(0,0)];
            let rhs = m1.laplace_transform(lambda).value.unwrap()[(0,0)]
                + m2.laplace_transform(lambda).value.unwrap()[(0,0)];
            prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + rhs.norm()));
        }

        #[test]
        fn real_lambda_gives_real_transform(rate in -2.0f64..-0.5, lam in -0.4f64..3.0) {
            let m = MeasureRep::new(1, Support::VolterraHalfLine,
                vec![(0.5, DMatrix::from_element(1, 1, -1.2))],
                vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, 2.0), 2, rate, 1.5, TrigPhase::Cos).unwrap()]).unwrap();
            let v = m.laplace_transform(Complex64::new(lam, 0.0)).value.unwrap()[(0,0)];
            prop_assert!(v.im.abs() < 1e-12);
        }

        #[test]
        fn tv_transform_nonincreasing_in_a(a1 in 0.0f64..2.0, da in 0.01f64..2.0) {
            let m = MeasureRep::new(1, Support::VolterraHalfLine,
                vec![(0.2, DMatrix::from_element(1, 1, 1.5))],
                vec![ExpPolyTerm::new(DMatrix::from_element(1, 1, -0.7), 1, -0.5, 3.0, TrigPhase::Sin).unwrap()]).unwrap();
            let lo = m.total_variation_transform(a1).unwrap();
            let hi = m.total_variation_transform(a1 + da).unwrap();
            prop_assert!(hi <= lo + 1e-9);
        }
    }
}
