//! Eve's probe, described by the Gram matrix of her four ancilla kets.
//!
//! With Bob's basis-0 states `phi_x`, `phi_y`, Eve's unitary maps Alice's
//! basis-0 states to
//!
//! ```text
//! |Psi_x> = |phi_x>(|a> + |b>) + |phi_y>(|c> + |d>)
//! |Psi_y> = |phi_y>(|a> - |b>) + |phi_x>(|c> - |d>)
//! ```
//!
//! and the metric `gamma_ij = <i|j>`, `i, j in {a, b, c, d}`, fixes every
//! statistic of the attack. Fixing the QBER at `q` in both bases, with
//! symmetric errors, leaves the following feasible set:
//!
//! * `a^2 + b^2 = 1 - q` and `c^2 + d^2 = q`,
//! * `Re gamma_ab = Re gamma_cd = Re gamma_ac = Re gamma_bd = 0`,
//! * `Im gamma_bc = Im gamma_ad`,
//! * `sin(2 delta) Re gamma_ad + sin(2 theta) Re gamma_bc
//!    = sin^2(delta) (a^2 - d^2) + sin^2(theta) (b^2 - c^2)`,
//! * `gamma` positive semidefinite.

use std::fmt::Write as _;

use nalgebra::{Matrix4, SMatrix, SVector};
use num_complex::Complex64;

use crate::alignment::{frame_rotation, Alignment};
use crate::error::{check_probability, Error, Result};

pub const KET_A: usize = 0;
pub const KET_B: usize = 1;
pub const KET_C: usize = 2;
pub const KET_D: usize = 3;

/// Equality residual accepted inside the crate.
pub const EQUALITY_TOL: f64 = 1e-10;
/// Equality residual accepted at API boundaries (`encode`, replayed dumps).
pub const BOUNDARY_TOL: f64 = 1e-8;
/// Smallest eigenvalue still counted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;

const BOX_SLACK: f64 = 1e-12;

#[inline]
fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Gram matrix of Eve's kets together with the QBER it is built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMetric {
    gamma: Matrix4<Complex64>,
    q: f64,
}

impl ProbeMetric {
    pub fn new(gamma: Matrix4<Complex64>, q: f64) -> Self {
        Self { gamma, q }
    }

    /// Eve leaves an uncorrelated ancilla: `gamma = diag(1, 0, 0, 0)`, `q = 0`.
    pub fn non_interacting() -> Self {
        let mut gamma = Matrix4::zeros();
        gamma[(KET_A, KET_A)] = c(1.0, 0.0);
        Self { gamma, q: 0.0 }
    }

    /// Eve keeps no ancilla correlation but rotates the qubit by half the
    /// basis offset, which realizes the smallest QBER the misalignment
    /// allows. Reduces to [`ProbeMetric::non_interacting`] when `alpha = beta`.
    pub fn non_interfering(align: &Alignment) -> Self {
        let (s, co) = (0.5 * align.delta()).sin_cos();
        let mut gamma = Matrix4::zeros();
        gamma[(KET_A, KET_A)] = c(co * co, 0.0);
        gamma[(KET_D, KET_D)] = c(s * s, 0.0);
        gamma[(KET_A, KET_D)] = c(s * co, 0.0);
        gamma[(KET_D, KET_A)] = c(s * co, 0.0);
        Self { gamma, q: s * s }
    }

    /// The optimal attack on aligned BB84:
    /// `diag((1-q)^2, q(1-q), q(1-q), q^2)`.
    pub fn ideal_optimum(q: f64) -> Self {
        let p = 1.0 - q;
        let gamma = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            c(p * p, 0.0),
            c(q * p, 0.0),
            c(q * p, 0.0),
            c(q * q, 0.0),
        ));
        Self { gamma, q }
    }

    pub fn gamma(&self) -> &Matrix4<Complex64> {
        &self.gamma
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.gamma[(i, j)]
    }

    /// Smallest eigenvalue of the Hermitian part of `gamma`.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = hermitian_part(&self.gamma);
        h.symmetric_eigenvalues().min()
    }

    /// Plain-text form: sixteen lines of `re im`, row-major, 17 significant
    /// digits.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(16 * 50);
        for i in 0..4 {
            for j in 0..4 {
                let z = self.gamma[(i, j)];
                writeln!(out, "{:.16e} {:.16e}", z.re, z.im).unwrap();
            }
        }
        out
    }

    /// Parse [`ProbeMetric::to_text`] output. Blank lines and lines starting
    /// with `#` are ignored. The QBER is recovered as `c^2 + d^2`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut values = Vec::with_capacity(32);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("not a number: {tok:?}"),
                })?;
                values.push(v);
            }
        }
        if values.len() != 32 {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected 32 numbers, found {}", values.len()),
            });
        }
        let gamma = Matrix4::from_fn(|i, j| {
            let k = 2 * (4 * i + j);
            c(values[k], values[k + 1])
        });
        let q = (gamma[(KET_C, KET_C)] + gamma[(KET_D, KET_D)]).re;
        Ok(Self { gamma, q })
    }
}

pub(crate) fn hermitian_part(m: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// The metric expressed in Bob's basis-1 frame, `R gamma R^T`.
pub fn to_basis1(metric: &ProbeMetric, align: &Alignment) -> ProbeMetric {
    let r = frame_rotation(align).matrix().map(|x| c(x, 0.0));
    ProbeMetric {
        gamma: r * metric.gamma * r.transpose(),
        q: metric.q,
    }
}

/// Squared norms of the primed kets `(a'^2, b'^2, c'^2, d'^2)`, evaluated
/// from the basis-0 metric.
pub fn primed_norms(metric: &ProbeMetric, align: &Alignment) -> [f64; 4] {
    let g = &metric.gamma;
    let (a2, b2, c2, d2) = (
        g[(KET_A, KET_A)].re,
        g[(KET_B, KET_B)].re,
        g[(KET_C, KET_C)].re,
        g[(KET_D, KET_D)].re,
    );
    let re_ad = g[(KET_A, KET_D)].re;
    let re_bc = g[(KET_B, KET_C)].re;
    let (sd, cd) = align.delta().sin_cos();
    let (st, ct) = align.theta().sin_cos();
    let s2d = (2.0 * align.delta()).sin();
    let s2t = (2.0 * align.theta()).sin();
    [
        cd * cd * a2 + sd * sd * d2 + s2d * re_ad,
        ct * ct * b2 + st * st * c2 + s2t * re_bc,
        ct * ct * c2 + st * st * b2 - s2t * re_bc,
        cd * cd * d2 + sd * sd * a2 - s2d * re_ad,
    ]
}

/// Coefficients of the basis-consistency constraint
/// `c_ad Re gamma_ad + c_bc Re gamma_bc = s_d (a^2 - d^2) + s_t (b^2 - c^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConstraint {
    pub c_ad: f64,
    pub c_bc: f64,
    pub s_d: f64,
    pub s_t: f64,
}

impl LinearConstraint {
    pub fn new(align: &Alignment) -> Self {
        let sd = align.delta().sin();
        let st = align.theta().sin();
        Self {
            c_ad: (2.0 * align.delta()).sin(),
            c_bc: (2.0 * align.theta()).sin(),
            s_d: sd * sd,
            s_t: st * st,
        }
    }

    /// Left side minus right side, evaluated on a metric.
    pub fn residual(&self, g: &Matrix4<Complex64>) -> f64 {
        let diag = |i: usize| g[(i, i)].re;
        self.c_ad * g[(KET_A, KET_D)].re + self.c_bc * g[(KET_B, KET_C)].re
            - self.s_d * (diag(KET_A) - diag(KET_D))
            - self.s_t * (diag(KET_B) - diag(KET_C))
    }
}

/// Free parameters of a metric once the fixed equalities are imposed.
///
/// `b^2 = 1 - q - a^2`, `c^2 = q - d^2` and `Im gamma_bc = Im gamma_ad` are
/// implied. One of `re_bc`, `re_ad` or `a_sq` is the *pivot*: it is solved
/// from the basis-consistency constraint rather than chosen freely (see
/// [`Pivot`]).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamVector {
    pub a_sq: f64,
    pub d_sq: f64,
    pub im_ab: f64,
    pub im_ac: f64,
    pub im_db: f64,
    pub im_dc: f64,
    pub re_ad: f64,
    pub im_ad: f64,
    pub re_bc: f64,
}

impl ParamVector {
    pub const LEN: usize = 9;
    const NAMES: [&'static str; 9] = [
        "a_sq", "d_sq", "im_ab", "im_ac", "im_db", "im_dc", "re_ad", "im_ad", "re_bc",
    ];

    /// Read the parameter entries of a metric without checking constraints.
    pub fn read(metric: &ProbeMetric) -> Self {
        let g = &metric.gamma;
        Self {
            a_sq: g[(KET_A, KET_A)].re,
            d_sq: g[(KET_D, KET_D)].re,
            im_ab: g[(KET_A, KET_B)].im,
            im_ac: g[(KET_A, KET_C)].im,
            im_db: g[(KET_D, KET_B)].im,
            im_dc: g[(KET_D, KET_C)].im,
            re_ad: g[(KET_A, KET_D)].re,
            im_ad: g[(KET_A, KET_D)].im,
            re_bc: g[(KET_B, KET_C)].re,
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.a_sq, self.d_sq, self.im_ab, self.im_ac, self.im_db, self.im_dc, self.re_ad,
            self.im_ad, self.re_bc,
        ]
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        Self {
            a_sq: v[0],
            d_sq: v[1],
            im_ab: v[2],
            im_ac: v[3],
            im_db: v[4],
            im_dc: v[5],
            re_ad: v[6],
            im_ad: v[7],
            re_bc: v[8],
        }
    }
}

/// Which parameter the basis-consistency constraint is solved for.
///
/// The constraint is linear in `re_bc` (coefficient `sin 2theta`), `re_ad`
/// (coefficient `sin 2delta`) and `a^2` (coefficient
/// `sin^2 theta - sin^2 delta` once `b^2` and `d^2` are substituted). The
/// variable with the largest coefficient is eliminated. When all three
/// vanish the constraint no longer involves free parameters and only
/// restricts `q`; it is then checked, not solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pivot {
    ReBc,
    ReAd,
    ASq,
    None,
}

impl Pivot {
    const DEGENERATE: f64 = 1e-9;

    pub fn choose(cons: &LinearConstraint) -> Self {
        let candidates = [
            (cons.c_bc.abs(), Pivot::ReBc),
            (cons.c_ad.abs(), Pivot::ReAd),
            ((cons.s_t - cons.s_d).abs(), Pivot::ASq),
        ];
        let (best, pivot) = candidates
            .into_iter()
            .fold((0.0, Pivot::None), |acc, c| if c.0 > acc.0 { c } else { acc });
        if best > Self::DEGENERATE {
            pivot
        } else {
            Pivot::None
        }
    }

    fn index(self) -> Option<usize> {
        match self {
            Pivot::ASq => Some(0),
            Pivot::ReAd => Some(6),
            Pivot::ReBc => Some(8),
            Pivot::None => None,
        }
    }
}

/// Affine coordinates on the feasible set for a fixed `(q, alignment)`.
///
/// The coordinate vector is the [`ParamVector`] with the pivot entry
/// removed, so the map from coordinates to metrics is affine and every
/// equality constraint holds by construction.
#[derive(Debug, Clone, Copy)]
pub struct Parameterization {
    q: f64,
    align: Alignment,
    constraint: LinearConstraint,
    pivot: Pivot,
}

impl Parameterization {
    pub fn new(q: f64, align: Alignment) -> Self {
        let constraint = LinearConstraint::new(&align);
        Self {
            q,
            align,
            constraint,
            pivot: Pivot::choose(&constraint),
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn alignment(&self) -> &Alignment {
        &self.align
    }

    pub fn pivot(&self) -> Pivot {
        self.pivot
    }

    pub fn constraint(&self) -> &LinearConstraint {
        &self.constraint
    }

    pub fn dim(&self) -> usize {
        match self.pivot {
            Pivot::None => ParamVector::LEN,
            _ => ParamVector::LEN - 1,
        }
    }

    /// Overwrite the pivot entry so the basis-consistency constraint holds.
    pub fn complete(&self, p: &mut ParamVector) {
        let k = &self.constraint;
        // residual = c_ad re_ad + c_bc re_bc + (s_t - s_d)(a^2 - d^2) - s_t (1 - 2q)
        let slope = k.s_t - k.s_d;
        let rest = |p: &ParamVector| {
            k.c_ad * p.re_ad + k.c_bc * p.re_bc + slope * (p.a_sq - p.d_sq)
                - k.s_t * (1.0 - 2.0 * self.q)
        };
        match self.pivot {
            Pivot::ReBc => {
                p.re_bc = 0.0;
                p.re_bc = -rest(p) / k.c_bc;
            }
            Pivot::ReAd => {
                p.re_ad = 0.0;
                p.re_ad = -rest(p) / k.c_ad;
            }
            Pivot::ASq => {
                p.a_sq = 0.0;
                p.a_sq = -rest(p) / slope;
            }
            Pivot::None => {}
        }
    }

    pub fn params_from_coords(&self, x: &[f64]) -> ParamVector {
        debug_assert_eq!(x.len(), self.dim());
        let mut full = [0.0; 9];
        let skip = self.pivot.index();
        let mut it = x.iter();
        for (k, slot) in full.iter_mut().enumerate() {
            if Some(k) != skip {
                *slot = *it.next().unwrap();
            }
        }
        let mut p = ParamVector::from_array(full);
        self.complete(&mut p);
        p
    }

    pub fn coords_from_params(&self, p: &ParamVector) -> Vec<f64> {
        let skip = self.pivot.index();
        p.to_array()
            .into_iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != skip)
            .map(|(_, v)| v)
            .collect()
    }

    /// Positions in [`ParamVector::to_array`] that are free coordinates.
    pub fn free_indices(&self) -> Vec<usize> {
        let skip = self.pivot.index();
        (0..ParamVector::LEN).filter(|k| Some(*k) != skip).collect()
    }

    /// Metric for a full parameter vector after solving for the pivot.
    pub fn metric_of(&self, p: &ParamVector) -> ProbeMetric {
        let mut p = *p;
        self.complete(&mut p);
        build_metric(&p, self.q)
    }

    /// Metric for a coordinate vector; box bounds and positivity unchecked.
    pub fn metric(&self, x: &[f64]) -> ProbeMetric {
        build_metric(&self.params_from_coords(x), self.q)
    }

    /// Residual of the basis-consistency constraint that no parameter can
    /// absorb (nonzero only for [`Pivot::None`]).
    pub fn fixed_residual(&self) -> f64 {
        match self.pivot {
            Pivot::None => -self.constraint.s_t * (1.0 - 2.0 * self.q),
            _ => 0.0,
        }
    }
}

fn build_metric(p: &ParamVector, q: f64) -> ProbeMetric {
    let mut g = Matrix4::<Complex64>::zeros();
    g[(KET_A, KET_A)] = c(p.a_sq, 0.0);
    g[(KET_B, KET_B)] = c(1.0 - q - p.a_sq, 0.0);
    g[(KET_C, KET_C)] = c(q - p.d_sq, 0.0);
    g[(KET_D, KET_D)] = c(p.d_sq, 0.0);
    let mut set = |i: usize, j: usize, z: Complex64| {
        g[(i, j)] = z;
        g[(j, i)] = z.conj();
    };
    set(KET_A, KET_B, c(0.0, p.im_ab));
    set(KET_A, KET_C, c(0.0, p.im_ac));
    set(KET_A, KET_D, c(p.re_ad, p.im_ad));
    set(KET_B, KET_C, c(p.re_bc, p.im_ad));
    set(KET_D, KET_B, c(0.0, p.im_db));
    set(KET_D, KET_C, c(0.0, p.im_dc));
    ProbeMetric { gamma: g, q }
}

/// Build the metric for `params` at QBER `q`, solving the pivot parameter
/// from the basis-consistency constraint (its input value is ignored).
///
/// Equality constraints hold by construction; positivity does not and is
/// reported by [`validate`].
pub fn decode(params: &ParamVector, q: f64, align: &Alignment) -> Result<ProbeMetric> {
    let q = check_probability("q", q)?;
    let param = Parameterization::new(q, *align);
    let mut p = *params;
    param.complete(&mut p);
    for (name, value, hi) in [("a_sq", p.a_sq, 1.0 - q), ("d_sq", p.d_sq, q)] {
        if !value.is_finite() || value < -BOX_SLACK || value > hi + BOX_SLACK {
            return Err(Error::ParameterBounds {
                name,
                value,
                lo: 0.0,
                hi,
            });
        }
    }
    if let Some(bad) = p.to_array().iter().position(|v| !v.is_finite()) {
        return Err(Error::ParameterBounds {
            name: ParamVector::NAMES[bad],
            value: p.to_array()[bad],
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        });
    }
    Ok(build_metric(&p, q))
}

/// Inverse of [`decode`]; fails when the metric violates an equality
/// constraint by more than `1e-8`.
pub fn encode(metric: &ProbeMetric, align: &Alignment) -> Result<ParamVector> {
    let report = validate(metric, align);
    if let Some(bad) = report
        .checks
        .iter()
        .filter(|c| c.kind == CheckKind::Equality)
        .find(|c| c.value.abs() > BOUNDARY_TOL)
    {
        return Err(Error::ConstraintViolation {
            name: bad.name,
            residual: bad.value,
        });
    }
    Ok(ParamVector::read(metric))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// `value` is a residual that should vanish.
    Equality,
    /// `value` is a margin that should be nonnegative.
    Inequality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub kind: CheckKind,
    pub value: f64,
}

impl ConstraintCheck {
    pub fn satisfied(&self, eq_tol: f64, ineq_tol: f64) -> bool {
        match self.kind {
            CheckKind::Equality => self.value.abs() <= eq_tol,
            CheckKind::Inequality => self.value >= -ineq_tol,
        }
    }
}

/// Itemized constraint residuals and margins of a metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn get(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn violations(&self, eq_tol: f64, ineq_tol: f64) -> Vec<&ConstraintCheck> {
        self.checks
            .iter()
            .filter(|c| !c.satisfied(eq_tol, ineq_tol))
            .collect()
    }

    pub fn is_feasible(&self, eq_tol: f64, ineq_tol: f64) -> bool {
        self.violations(eq_tol, ineq_tol).is_empty()
    }

    pub fn max_equality_residual(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.kind == CheckKind::Equality)
            .fold(0.0, |m, c| m.max(c.value.abs()))
    }

    pub fn min_margin(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.kind == CheckKind::Inequality)
            .fold(f64::INFINITY, |m, c| m.min(c.value))
    }
}

pub fn validate(metric: &ProbeMetric, align: &Alignment) -> ConstraintReport {
    use CheckKind::*;
    let g = &metric.gamma;
    let q = metric.q;
    let herm = (g - g.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let primed = primed_norms(metric, align);
    let re = |i: usize, j: usize| g[(i, j)].re;
    let checks = vec![
        ConstraintCheck { name: "hermitian", kind: Equality, value: herm },
        ConstraintCheck { name: "norm_ab", kind: Equality, value: re(KET_A, KET_A) + re(KET_B, KET_B) - (1.0 - q) },
        ConstraintCheck { name: "norm_cd", kind: Equality, value: re(KET_C, KET_C) + re(KET_D, KET_D) - q },
        ConstraintCheck { name: "re_ab", kind: Equality, value: re(KET_A, KET_B) },
        ConstraintCheck { name: "re_cd", kind: Equality, value: re(KET_C, KET_D) },
        ConstraintCheck { name: "re_ac", kind: Equality, value: re(KET_A, KET_C) },
        ConstraintCheck { name: "re_bd", kind: Equality, value: re(KET_B, KET_D) },
        ConstraintCheck { name: "im_bc_ad", kind: Equality, value: g[(KET_B, KET_C)].im - g[(KET_A, KET_D)].im },
        ConstraintCheck { name: "basis_consistency", kind: Equality, value: LinearConstraint::new(align).residual(g) },
        ConstraintCheck { name: "psd", kind: Inequality, value: metric.min_eigenvalue() },
        ConstraintCheck { name: "a_prime", kind: Inequality, value: (1.0 - q) - primed[0] },
        ConstraintCheck { name: "b_prime", kind: Inequality, value: (1.0 - q) - primed[1] },
        ConstraintCheck { name: "c_prime", kind: Inequality, value: q - primed[2] },
        ConstraintCheck { name: "d_prime", kind: Inequality, value: q - primed[3] },
    ];
    ConstraintReport { checks }
}

// Hermitian 4x4 matrices as vectors in R^16 with the Frobenius inner product:
// four diagonal entries, then sqrt(2) Re and sqrt(2) Im of the six upper
// off-diagonal entries.
const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

fn pair_index(i: usize, j: usize) -> usize {
    PAIRS.iter().position(|&p| p == (i, j)).unwrap()
}

fn to_frobenius(g: &Matrix4<Complex64>) -> SVector<f64, 16> {
    let s = std::f64::consts::SQRT_2;
    let mut v = SVector::<f64, 16>::zeros();
    for i in 0..4 {
        v[i] = g[(i, i)].re;
    }
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        let z = 0.5 * (g[(i, j)] + g[(j, i)].conj());
        v[4 + k] = s * z.re;
        v[10 + k] = s * z.im;
    }
    v
}

fn from_frobenius(v: &SVector<f64, 16>) -> Matrix4<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut g = Matrix4::zeros();
    for i in 0..4 {
        g[(i, i)] = c(v[i], 0.0);
    }
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        let z = c(s * v[4 + k], s * v[10 + k]);
        g[(i, j)] = z;
        g[(j, i)] = z.conj();
    }
    g
}

/// Frobenius-orthogonal projection of a Hermitian matrix onto the affine set
/// cut out by the equality constraints at `(q, align)`.
pub fn project_onto_equalities(g: &Matrix4<Complex64>, q: f64, align: &Alignment) -> Matrix4<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let k = LinearConstraint::new(align);
    let re = |i, j| 4 + pair_index(i, j);
    let im = |i, j| 10 + pair_index(i, j);
    let mut rows = SMatrix::<f64, 8, 16>::zeros();
    let mut rhs = SVector::<f64, 8>::zeros();
    rows[(0, KET_A)] = 1.0;
    rows[(0, KET_B)] = 1.0;
    rhs[0] = 1.0 - q;
    rows[(1, KET_C)] = 1.0;
    rows[(1, KET_D)] = 1.0;
    rhs[1] = q;
    rows[(2, re(KET_A, KET_B))] = s;
    rows[(3, re(KET_C, KET_D))] = s;
    rows[(4, re(KET_A, KET_C))] = s;
    rows[(5, re(KET_B, KET_D))] = s;
    rows[(6, im(KET_B, KET_C))] = s;
    rows[(6, im(KET_A, KET_D))] = -s;
    rows[(7, re(KET_A, KET_D))] = k.c_ad * s;
    rows[(7, re(KET_B, KET_C))] = k.c_bc * s;
    rows[(7, KET_A)] = -k.s_d;
    rows[(7, KET_D)] = k.s_d;
    rows[(7, KET_B)] = -k.s_t;
    rows[(7, KET_C)] = k.s_t;

    // Minimum-norm correction solving rows * dv = rows * v - rhs.
    // A few refinement passes recover the digits the SVD loses.
    let mut v = to_frobenius(g);
    let svd = rows.svd(true, true);
    for _ in 0..3 {
        let lhs = rows * v - rhs;
        match svd.solve(&lhs, 1e-12) {
            Ok(dv) => v -= dv,
            Err(_) => break,
        }
    }
    from_frobenius(&v)
}

/// Draw a feasible metric at `(q, align)`: a random Gram matrix is moved onto
/// the feasible set by alternating projections between the equality
/// constraints and the PSD cone. Returns `None` if that does not settle.
pub fn sample_feasible<R: rand::Rng + ?Sized>(rng: &mut R, q: f64, align: &Alignment, real_only: bool) -> Option<ProbeMetric> {
    let rank = rng.gen_range(1..=4);
    let k = SMatrix::<Complex64, 4, 4>::from_fn(|_, j| {
        if j >= rank {
            return c(0.0, 0.0);
        }
        let im = if real_only { 0.0 } else { rng.gen_range(-1.0..1.0) };
        c(rng.gen_range(-1.0..1.0), im)
    });
    let mut g = k * k.adjoint();
    for _ in 0..2000 {
        g = project_onto_equalities(&g, q, align);
        let eig = hermitian_part(&g).symmetric_eigen();
        if eig.eigenvalues.min() >= -1e-14 {
            let m = ProbeMetric::new(g, q);
            return validate(&m, align).is_feasible(EQUALITY_TOL, PSD_TOL).then_some(m);
        }
        let clipped = eig.eigenvalues.map(|x| c(x.max(0.0), 0.0));
        g = eig.eigenvectors * Matrix4::from_diagonal(&clipped) * eig.eigenvectors.adjoint();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random feasible metric: a random Gram matrix pushed onto the
    /// equality set and then mixed with a strictly feasible point until it
    /// is positive semidefinite.
    fn random_feasible(rng: &mut ChaCha8Rng, q: f64, align: &Alignment) -> Option<ProbeMetric> {
        let param = Parameterization::new(q, *align);
        for _ in 0..50 {
            let mut x = ParamVector {
                a_sq: rng.gen_range(0.0..=1.0 - q),
                d_sq: rng.gen_range(0.0..=q),
                ..Default::default()
            };
            let scale = (q * (1.0 - q)).sqrt();
            x.im_ab = rng.gen_range(-0.3..0.3) * (1.0 - q);
            x.im_ac = rng.gen_range(-0.3..0.3) * scale;
            x.im_db = rng.gen_range(-0.3..0.3) * scale;
            x.im_dc = rng.gen_range(-0.3..0.3) * q;
            x.re_ad = rng.gen_range(-0.3..0.3) * scale;
            x.im_ad = rng.gen_range(-0.3..0.3) * scale;
            x.re_bc = rng.gen_range(-0.3..0.3) * scale;
            param.complete(&mut x);
            let m = build_metric(&x, q);
            if m.min_eigenvalue() > 1e-6 {
                return Some(m);
            }
        }
        None
    }

    fn kron_transform(align: &Alignment) -> Matrix4<f64> {
        let (sd, cd) = align.delta().sin_cos();
        let (st, ct) = align.theta().sin_cos();
        let rd = nalgebra::Matrix2::new(cd, sd, -sd, cd);
        let rt = nalgebra::Matrix2::new(ct, st, -st, ct);
        rd.kronecker(&rt).fixed_view::<4, 4>(0, 0).into_owned()
    }

    #[test]
    fn decode_non_interacting() {
        let p = ParamVector { a_sq: 1.0, ..Default::default() };
        let m = decode(&p, 0.0, &Alignment::ideal()).unwrap();
        assert_eq!(m, ProbeMetric::non_interacting());
        let p2 = encode(&m, &Alignment::ideal()).unwrap();
        assert_eq!(p2, ParamVector { a_sq: 1.0, ..Default::default() });
    }

    #[test]
    fn decode_diagonal_ideal() {
        let q = 0.07;
        let p = ParamVector { a_sq: 1.0 - q, d_sq: q, ..Default::default() };
        let m = decode(&p, q, &Alignment::ideal()).unwrap();
        let expect = Matrix4::from_diagonal(&nalgebra::Vector4::new(c(1.0 - q, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(q, 0.0)));
        assert!((m.gamma() - expect).norm() < 1e-15);
        assert!(validate(&m, &Alignment::ideal()).is_feasible(EQUALITY_TOL, PSD_TOL));
        let back = encode(&m, &Alignment::ideal()).unwrap();
        assert_abs_diff_eq!(back.a_sq, 1.0 - q, epsilon = 1e-15);
        assert_abs_diff_eq!(back.d_sq, q, epsilon = 1e-15);
    }

    #[test]
    fn decode_rejects_box_violations() {
        let p = ParamVector { a_sq: 0.5, d_sq: 0.2, ..Default::default() };
        let err = decode(&p, 0.1, &Alignment::symmetric_degrees(80.0).unwrap());
        assert!(err.is_err());
        let p = ParamVector { a_sq: 0.95, d_sq: 0.0, ..Default::default() };
        assert!(decode(&p, 0.1, &Alignment::symmetric_degrees(50.0).unwrap()).is_err());
        // At 90 degrees a_sq is the pivot, so its input value is ignored.
        let p = ParamVector { a_sq: 0.95, d_sq: 0.01, ..Default::default() };
        let m = decode(&p, 0.1, &Alignment::ideal()).unwrap();
        assert_abs_diff_eq!(m.entry(0, 0).re, 0.81, epsilon = 1e-12);
    }

    #[test]
    fn validate_non_interacting() {
        let report = validate(&ProbeMetric::non_interacting(), &Alignment::ideal());
        assert!(report.is_feasible(EQUALITY_TOL, PSD_TOL), "{report:?}");
        let aligned = Alignment::symmetric_degrees(70.0).unwrap();
        assert!(validate(&ProbeMetric::non_interacting(), &aligned).is_feasible(EQUALITY_TOL, PSD_TOL));
    }

    #[test]
    fn validate_flags_primed_box() {
        // With delta = 30 degrees the diagonal probe puts too much weight on d'.
        let align = Alignment::from_degrees(30.0, 90.0).unwrap();
        let q = 0.05;
        let mut g = Matrix4::zeros();
        g[(0, 0)] = c(1.0 - q, 0.0);
        g[(3, 3)] = c(q, 0.0);
        let m = ProbeMetric::new(g, q);
        let report = validate(&m, &align);
        let d_margin = report.get("d_prime").unwrap();
        let sd2 = (align.delta().sin()).powi(2);
        let expect = q - (q * (1.0 - sd2) + sd2 * (1.0 - q));
        assert_abs_diff_eq!(d_margin.value, expect, epsilon = 1e-15);
        assert!(!d_margin.satisfied(EQUALITY_TOL, PSD_TOL));
    }

    #[test]
    fn validate_reports_equality_residual() {
        let mut m = ProbeMetric::non_interacting();
        m.gamma[(0, 1)] = c(0.1, 0.0);
        m.gamma[(1, 0)] = c(0.1, 0.0);
        let report = validate(&m, &Alignment::ideal());
        assert_abs_diff_eq!(report.get("re_ab").unwrap().value, 0.1, epsilon = 1e-15);
        assert!(encode(&m, &Alignment::ideal()).is_err());
    }

    #[test]
    fn to_basis1_identity_rotation() {
        let align = Alignment::from_degrees(0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_feasible(&mut rng, 0.2, &Alignment::symmetric_degrees(70.0).unwrap()).unwrap();
        assert!((to_basis1(&m, &align).gamma() - m.gamma()).norm() < 1e-15);
    }

    #[test]
    fn pivot_choice() {
        let pick = |a: f64, b: f64| Parameterization::new(0.1, Alignment::from_degrees(a, b).unwrap()).pivot();
        assert_eq!(pick(90.0, 90.0), Pivot::ASq);
        assert_eq!(pick(45.0, 45.0), Pivot::ReBc);
        assert_eq!(pick(30.0, 150.0), Pivot::ReAd);
        assert_eq!(pick(0.0, 0.0), Pivot::None);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let align = Alignment::from_degrees(75.0, 85.0).unwrap();
        let m = random_feasible(&mut rng, 0.12, &align).unwrap();
        let text = m.to_text();
        assert_eq!(text.lines().count(), 16);
        assert!(text.lines().all(|l| l.split(' ').count() == 2));
        let back = ProbeMetric::from_text(&text).unwrap();
        assert_eq!(back.gamma(), m.gamma());
        assert_abs_diff_eq!(back.q(), m.q(), epsilon = 1e-15);
        assert!(ProbeMetric::from_text("1 2 3").is_err());
        assert!(ProbeMetric::from_text(&text.replace('e', "x")).is_err());
    }

    #[test]
    fn projection_restores_equalities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let align = Alignment::from_degrees(rng.gen_range(0.0..180.0), rng.gen_range(0.0..180.0)).unwrap();
            let q = rng.gen_range(0.0..0.5);
            if Parameterization::new(q, align).pivot() == Pivot::None {
                continue;
            }
            let g = Matrix4::from_fn(|_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let g = hermitian_part(&g);
            let p = project_onto_equalities(&g, q, &align);
            let report = validate(&ProbeMetric::new(p, q), &align);
            assert!(report.max_equality_residual() < 1e-12, "{align:?} {q} {report:?}");
            // Idempotent.
            let pp = project_onto_equalities(&p, q, &align);
            assert!((pp - p).norm() < 1e-12);
        }
    }

    #[test]
    fn random_feasible_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut done = 0;
        while done < 1000 {
            let align = Alignment::from_degrees(rng.gen_range(0.0..180.0), rng.gen_range(0.0..180.0)).unwrap();
            let bounds = crate::alignment::inherent_qber_bounds(&align);
            let q = rng.gen_range(bounds.min..0.5f64.max(bounds.min));
            let param = Parameterization::new(q, align);
            if param.pivot() == Pivot::None {
                continue;
            }
            let Some(m) = random_feasible(&mut rng, q, &align) else { continue };
            let report = validate(&m, &align);
            assert!(report.is_feasible(EQUALITY_TOL, PSD_TOL), "{report:?}");
            let p = encode(&m, &align).unwrap();
            let again = decode(&p, q, &align).unwrap();
            assert!((again.gamma() - m.gamma()).norm() < 1e-12);
            let p2 = encode(&again, &align).unwrap();
            for (x, y) in p.to_array().iter().zip(p2.to_array()) {
                assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
            }
            // Coordinates are a faithful chart.
            let x = param.coords_from_params(&p);
            assert_eq!(x.len(), param.dim());
            assert!((param.metric(&x).gamma() - m.gamma()).norm() < 1e-12);
            done += 1;
        }
    }

    #[test]
    fn basis_change_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let align = Alignment::from_degrees(rng.gen_range(0.0..180.0), rng.gen_range(0.0..180.0)).unwrap();
            let q = rng.gen_range(0.0..0.5);
            if Parameterization::new(q, align).pivot() == Pivot::None {
                continue;
            }
            let g = hermitian_part(&Matrix4::from_fn(|_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))));
            let g = g * g.adjoint();
            let g = project_onto_equalities(&g, q, &align);
            let m = ProbeMetric::new(g, q);
            let m1 = to_basis1(&m, &align);

            // Isometry: same spectrum and trace.
            let e0 = hermitian_part(m.gamma()).symmetric_eigenvalues();
            let e1 = hermitian_part(m1.gamma()).symmetric_eigenvalues();
            let mut e0: Vec<f64> = e0.iter().copied().collect();
            let mut e1: Vec<f64> = e1.iter().copied().collect();
            e0.sort_by(f64::total_cmp);
            e1.sort_by(f64::total_cmp);
            for (x, y) in e0.iter().zip(&e1) {
                assert_abs_diff_eq!(*x, *y, epsilon = 1e-10);
            }

            // Inverse rotation undoes it.
            let inv = crate::alignment::FrameRotation::new(-align.delta(), -align.theta());
            let r = inv.matrix().map(|x| c(x, 0.0));
            let back = r * m1.gamma() * r.transpose();
            assert!((back - m.gamma()).norm() < 1e-12);

            // Primed norms agree with the explicit expressions.
            let primed = primed_norms(&m, &align);
            for (k, p) in primed.iter().enumerate() {
                assert_abs_diff_eq!(m1.entry(k, k).re, *p, epsilon = 1e-12);
            }

            // Component transform of (ab, ac, db, dc) is the Kronecker product.
            let v = nalgebra::Vector4::new(m.entry(0, 1), m.entry(0, 2), m.entry(3, 1), m.entry(3, 2));
            let w = kron_transform(&align).map(|x| c(x, 0.0)) * v;
            let w1 = nalgebra::Vector4::new(m1.entry(0, 1), m1.entry(0, 2), m1.entry(3, 1), m1.entry(3, 2));
            assert!((w - w1).norm() < 1e-12);

            // Basis-1 metric keeps the normalization split.
            assert_abs_diff_eq!(m1.entry(0, 0).re + m1.entry(1, 1).re, 1.0 - q, epsilon = 1e-12);
            assert_abs_diff_eq!(m1.entry(2, 2).re + m1.entry(3, 3).re, q, epsilon = 1e-12);

            // delta'_ad and Im gamma'_ad.
            let dad = 0.5 * (m.entry(0, 0).re - m.entry(3, 3).re);
            let dad1 = 0.5 * (m1.entry(0, 0).re - m1.entry(3, 3).re);
            let s2 = (2.0 * align.delta()).sin_cos();
            assert_abs_diff_eq!(dad1, s2.1 * dad + s2.0 * m.entry(0, 3).re, epsilon = 1e-12);
            assert_abs_diff_eq!(m1.entry(0, 3).im, m.entry(0, 3).im, epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_metrics_are_feasible() {
        for q in [0.0, 0.03, 0.1, 0.3] {
            let m = ProbeMetric::ideal_optimum(q);
            for theta in [10.0, 70.0, 90.0, 120.0] {
                let align = Alignment::symmetric_degrees(theta).unwrap();
                assert!(validate(&m, &align).is_feasible(EQUALITY_TOL, PSD_TOL));
            }
        }
        for (a, b) in [(30.0, 150.0), (70.0, 90.0), (80.0, 80.0), (0.0, 120.0)] {
            let align = Alignment::from_degrees(a, b).unwrap();
            let m = ProbeMetric::non_interfering(&align);
            let report = validate(&m, &align);
            assert!(report.is_feasible(EQUALITY_TOL, PSD_TOL), "{report:?}");
            let bounds = crate::alignment::inherent_qber_bounds(&align);
            assert_abs_diff_eq!(m.q(), bounds.min, epsilon = 1e-12);
        }
    }
}
