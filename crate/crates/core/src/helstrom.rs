//! Eve's optimal binary measurement on her ancilla.
//!
//! For one basis, Eve's two conditional states are `rho_0 = Tr_B |Psi_x><Psi_x|`
//! and `rho_1 = Tr_B |Psi_y><Psi_y|`. Her error rate after guessing with the
//! POVM `{F, 1 - F}`, shifted by a weight `eps` on her bias, is
//!
//! ```text
//! Q_AE(eps) = Q_AE + eps * delta = 1/2 - 1/4 || (rho_0 - rho_1) + eps (rho_0 + rho_1) ||_1
//! ```
//!
//! In the frame of the kets `(a, b, c, d)` the operator inside the norm is
//! `2 (A + eps) Gamma` with `A` the permutation swapping `a <-> b` and
//! `c <-> d`. It is diagonalized as the Hermitian matrix
//! `S = G (A + eps) G`, `G = Gamma^(1/2)`, which is the same operator written
//! in an orthonormal basis of Eve's space.
//!
//! Eigenvalues with `|lambda| <= 1e-10` are treated as null: Eve's guess on
//! that subspace is a fair coin. The Helstrom value does not depend on this
//! choice, only the split into `(Q_AE, delta)` does.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;

use crate::alignment::{frame_rotation, Alignment};
use crate::error::{Error, Result};
use crate::infotheory::{keyrate_general, mutual_info_ae, JointDistAE};
use crate::probe::{hermitian_part, to_basis1, ProbeMetric, KET_A, KET_B, KET_C, KET_D};

/// Eigenvalues at or below this magnitude are null.
pub const NULL_EIGENVALUE_TOL: f64 = 1e-10;

const FORM_AGREEMENT_TOL: f64 = 1e-10;

type CMat = Matrix4<Complex64>;

fn real(m: &Matrix4<f64>) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Coefficients of `(rho_0 - rho_1) / 2` in the ket frame: the permutation
/// exchanging `a <-> b` and `c <-> d`.
pub fn difference_coefficients() -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a[(KET_A, KET_B)] = 1.0;
    a[(KET_B, KET_A)] = 1.0;
    a[(KET_C, KET_D)] = 1.0;
    a[(KET_D, KET_C)] = 1.0;
    a
}

/// Solution of `(D + eps Gamma) v = lambda v`, `D = A Gamma`, in ascending
/// order of `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolution {
    pub lambdas: [f64; 4],
    /// Coefficient vectors in the `(a, b, c, d)` frame.
    pub vectors: [Vector4<Complex64>; 4],
    /// Orthonormal eigenvectors of `S = G (A + eps) G`.
    pub(crate) embedded: [Vector4<Complex64>; 4],
}

impl EigenSolution {
    /// Largest `||(D + eps Gamma) v_p - lambda_p v_p||` over the eigenpairs.
    pub fn max_residual(&self, metric: &ProbeMetric, eps: f64) -> f64 {
        let op = shifted(eps) * metric.gamma();
        (0..4)
            .map(|p| (op * self.vectors[p] - self.vectors[p] * Complex64::new(self.lambdas[p], 0.0)).norm())
            .fold(0.0, f64::max)
    }
}

fn shifted(eps: f64) -> CMat {
    real(&(difference_coefficients() + Matrix4::identity() * eps))
}

/// Hermitian square root with negative eigenvalues clipped to zero.
pub(crate) fn sqrt_psd(gamma: &CMat) -> Result<(CMat, f64)> {
    let h = hermitian_part(gamma);
    let eig = h.symmetric_eigen();
    if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(numerical("metric eigendecomposition produced non-finite values", gamma));
    }
    let min = eig.eigenvalues.min();
    Ok((root_from_eigen(&eig), min))
}

/// Relative size below which metric eigenvalues are rounding noise. Their
/// square roots would otherwise leak `sqrt(1e-16)`-sized terms into `S`.
const RANK_TOL: f64 = 1e-14;

fn root_from_eigen(eig: &nalgebra::SymmetricEigen<Complex64, nalgebra::U4>) -> CMat {
    let cutoff = RANK_TOL * eig.eigenvalues.max().max(0.0);
    let roots = eig
        .eigenvalues
        .map(|x| Complex64::new(if x > cutoff { x.sqrt() } else { 0.0 }, 0.0));
    let v = &eig.eigenvectors;
    v * CMat::from_diagonal(&roots) * v.adjoint()
}

fn numerical(message: &str, gamma: &CMat) -> Error {
    Error::Numerical {
        message: message.to_string(),
        gamma: Box::new(*gamma),
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !eps.is_finite() || eps.abs() > 1.0 {
        return Err(Error::Domain {
            what: "eps",
            value: eps,
            lo: -1.0,
            hi: 1.0,
        });
    }
    Ok(())
}

struct Spectrum {
    g: CMat,
    solution: EigenSolution,
    trace: f64,
}

fn spectrum(metric: &ProbeMetric, eps: f64) -> Result<Spectrum> {
    check_eps(eps)?;
    let gamma = metric.gamma();
    let (g, _) = sqrt_psd(gamma)?;
    let m = shifted(eps);
    let s = hermitian_part(&(g * m * g));
    let eig = s.symmetric_eigen();
    if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(numerical("Helstrom eigendecomposition produced non-finite values", gamma));
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambdas = [0, 1, 2, 3].map(|k| eig.eigenvalues[order[k]]);
    let embedded = [0, 1, 2, 3].map(|k| eig.eigenvectors.column(order[k]).into_owned());
    let vectors = embedded.map(|w| m * g * w);
    Ok(Spectrum {
        g,
        solution: EigenSolution {
            lambdas,
            vectors,
            embedded,
        },
        trace: s.trace().re,
    })
}

/// Eve's minimum `eps`-weighted error on one basis and the eigensystem
/// behind it.
///
/// The value is `1/2 - 1/2 sum |lambda_p|`; the positive-part form
/// `(1 + eps)/2 - sum_{lambda_p > 0} lambda_p` is computed alongside and the
/// two must agree to `1e-10` whenever `Gamma` has unit trace and
/// `Re gamma_ab + Re gamma_cd = 0`.
pub fn weighted_error(metric: &ProbeMetric, eps: f64) -> Result<(f64, EigenSolution)> {
    let sp = spectrum(metric, eps)?;
    let lambdas = &sp.solution.lambdas;
    let trace_norm = 0.5 - 0.5 * lambdas.iter().map(|l| l.abs()).sum::<f64>();
    let positive = 0.5 * (1.0 + eps)
        - lambdas
            .iter()
            .filter(|&&l| l > NULL_EIGENVALUE_TOL)
            .sum::<f64>();
    // On normalized metrics the forms differ only through null eigenvalues.
    let null_mass: f64 = lambdas.iter().filter(|l| l.abs() <= NULL_EIGENVALUE_TOL).map(|l| l.abs()).sum();
    if (eps - sp.trace).abs() <= 1e-12 && (positive - trace_norm).abs() > FORM_AGREEMENT_TOL + null_mass {
        return Err(numerical("Helstrom value forms disagree", metric.gamma()));
    }
    Ok((trace_norm, sp.solution))
}

/// Eve's error and bias on one basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisAttack {
    pub q_ae: f64,
    pub delta: f64,
    pub i_ae: f64,
    /// Null eigenvectors carrying weight in `Gamma`; when nonzero, `delta`
    /// depends on the coin-flip convention for the null subspace.
    pub null_modes: usize,
}

impl BasisAttack {
    pub fn joint(&self) -> JointDistAE {
        JointDistAE::new(self.q_ae, self.delta).expect("BasisAttack holds a valid distribution")
    }

    pub(crate) fn from_parts(q_ae: f64, delta: f64, null_modes: usize) -> Result<Self> {
        let joint = JointDistAE::new(q_ae, delta)?;
        Ok(Self {
            q_ae: joint.q_ae(),
            delta: joint.delta(),
            i_ae: mutual_info_ae(&joint),
            null_modes,
        })
    }
}

/// `(Q_AE, delta)` realized by the measurement that minimizes the
/// `eps`-weighted error.
pub fn extract_q_delta(metric: &ProbeMetric, eps: f64) -> Result<BasisAttack> {
    let sp = spectrum(metric, eps)?;
    let gamma = metric.gamma();
    let a_hat = sp.g * real(&difference_coefficients()) * sp.g;
    let gamma_h = hermitian_part(gamma);
    let mut q_ae = 0.5;
    let mut delta = 0.5;
    let mut null_modes = 0;
    for (lambda, w) in sp.solution.lambdas.iter().zip(&sp.solution.embedded) {
        let weight = if *lambda > NULL_EIGENVALUE_TOL {
            1.0
        } else if lambda.abs() <= NULL_EIGENVALUE_TOL {
            0.5
        } else {
            0.0
        };
        if weight == 0.0 {
            continue;
        }
        let gw = (w.adjoint() * gamma_h * w)[(0, 0)].re;
        if weight == 0.5 && gw > 1e-12 {
            null_modes += 1;
        }
        q_ae -= weight * (w.adjoint() * a_hat * w)[(0, 0)].re;
        delta -= weight * gw;
    }
    BasisAttack::from_parts(q_ae, delta, null_modes).map_err(|_| {
        numerical(
            &format!("extracted (Q_AE, delta) = ({q_ae}, {delta}) is not a distribution"),
            gamma,
        )
    })
}

/// `(1+eps)/2 Q0(eps0) + (1-eps)/2 Q1(eps1)`, basis 1 evaluated on the
/// rotated metric.
pub fn combined_objective(metric: &ProbeMetric, align: &Alignment, eps0: f64, eps1: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let (q0, _) = weighted_error(metric, eps0)?;
    let (q1, _) = weighted_error(&to_basis1(metric, align), eps1)?;
    Ok(0.5 * (1.0 + eps) * q0 + 0.5 * (1.0 - eps) * q1)
}

/// Everything reported for one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPoint {
    pub q: f64,
    pub align: Alignment,
    pub basis0: BasisAttack,
    pub basis1: BasisAttack,
    pub i_ab: f64,
    /// Average of the per-basis `I(A:E)`.
    pub i_ae: f64,
    pub r: f64,
    pub gamma: ProbeMetric,
    pub converged: bool,
    /// Index of the optimizer start that produced `gamma`, if any.
    pub best_start: Option<usize>,
}

impl AttackPoint {
    /// Eve's error averaged over the two bases.
    pub fn q_ae(&self) -> f64 {
        0.5 * (self.basis0.q_ae + self.basis1.q_ae)
    }
}

/// Evaluate both bases at `eps = 0` and the resulting keyrate.
pub fn attack_summary(metric: &ProbeMetric, align: &Alignment, q: f64) -> Result<AttackPoint> {
    let basis0 = extract_q_delta(metric, 0.0)?;
    let basis1 = extract_q_delta(&to_basis1(metric, align), 0.0)?;
    let rate = keyrate_general(q, &basis0.joint(), &basis1.joint())?;
    Ok(AttackPoint {
        q,
        align: *align,
        basis0,
        basis1,
        i_ab: rate.i_ab,
        i_ae: rate.i_ae,
        r: rate.r,
        gamma: metric.clone(),
        converged: true,
        best_start: None,
    })
}

/// Evaluator for the optimizer inner loop: one metric eigendecomposition and
/// two eigenvalue-only solves per call.
#[derive(Debug, Clone)]
pub(crate) struct FastObjective {
    m0: CMat,
    m1: CMat,
    eps: f64,
}

pub(crate) struct FastValue {
    pub min_eigenvalue: f64,
    pub q0: f64,
    pub combined: f64,
}

impl FastObjective {
    pub fn new(align: &Alignment, eps0: f64, eps1: f64, eps: f64) -> Self {
        let r = real(frame_rotation(align).matrix());
        Self {
            m0: shifted(eps0),
            m1: r.transpose() * shifted(eps1) * r,
            eps,
        }
    }

    pub fn eval(&self, gamma: &CMat) -> FastValue {
        let h = hermitian_part(gamma);
        let eig = h.symmetric_eigen();
        let min_eigenvalue = eig.eigenvalues.min();
        let g = root_from_eigen(&eig);
        let value = |m: &CMat| {
            let s = hermitian_part(&(g * m * g));
            0.5 - 0.5 * s.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>()
        };
        let q0 = value(&self.m0);
        let q1 = value(&self.m1);
        FastValue {
            min_eigenvalue,
            q0,
            combined: 0.5 * (1.0 + self.eps) * q0 + 0.5 * (1.0 - self.eps) * q1,
        }
    }
}
