//! Brute-force replay of an attack in the explicit Bob (x) Eve space.
//!
//! A metric is factorized into four kets in `C^4`, Eve's interaction is
//! written out as state vectors in `C^2 (x) C^4` (index `bob * 4 + eve`),
//! and every statistic is recomputed from those vectors with the Born rule
//! and partial traces. Eigenproblems here go through a cyclic Jacobi solver
//! of this module, never through the analytic evaluator, so the two paths
//! share no numerical code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::alignment::{inherent_qber_bounds, Alignment};
use crate::error::{Error, Result};
use crate::helstrom::{extract_q_delta, weighted_error};
use crate::probe::{to_basis1, validate, ProbeMetric};

type CMatrix = DMatrix<Complex64>;
type CVector = DVector<Complex64>;

const EVE_DIM: usize = 4;
const BOB_DIM: usize = 2;
/// Eigenvalues of the Helstrom operator at or below this are null; matches
/// the analytic threshold after the factor of two between the operators.
const NULL_TOL: f64 = 2e-10;

fn cr(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: CMatrix,
}

/// Cyclic Jacobi diagonalization of a Hermitian matrix.
pub fn jacobi_eigen(h: &CMatrix) -> HermitianEigen {
    let n = h.nrows();
    let mut a = (h + h.adjoint()).map(|z| z * 0.5);
    let mut v = CMatrix::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                // Phase-rotate column q so the pivot is real, then apply a
                // real Jacobi rotation.
                let phase = apq / mag;
                let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Columns p, q of the unitary: u_p = c e_p - s conj(phase) e_q,
                // u_q = s e_p + c conj(phase) e_q.
                let w = phase.conj();
                let (upp, uqp, upq, uqq) = (cr(c), -w * s, cr(s), w * c);
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * upp + akq * uqp;
                    a[(k, q)] = akp * upq + akq * uqq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = upp.conj() * apk + uqp.conj() * aqk;
                    a[(q, k)] = upq.conj() * apk + uqq.conj() * aqk;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * upp + vkq * uqp;
                    v[(k, q)] = vkp * upq + vkq * uqq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    HermitianEigen { values, vectors }
}

fn metric_matrix(metric: &ProbeMetric) -> CMatrix {
    CMatrix::from_fn(EVE_DIM, EVE_DIM, |i, j| metric.entry(i, j))
}

/// Four kets in `C^4` whose Gram matrix is the metric.
pub fn gram_factorize(metric: &ProbeMetric) -> Result<[CVector; 4]> {
    let eig = jacobi_eigen(&metric_matrix(metric));
    let min = eig.values[0];
    if min < -1e-8 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    // K = sqrt(Lambda) V^dagger; column i of K is ket i. Eigenvalues at
    // rounding level are dropped so the kets span exactly the metric's rank.
    let cutoff = 1e-14 * eig.values[EVE_DIM - 1].max(0.0);
    let roots = CMatrix::from_diagonal(&DVector::from_iterator(
        EVE_DIM,
        eig.values.iter().map(|&x| cr(if x > cutoff { x.sqrt() } else { 0.0 })),
    ));
    let k = roots * eig.vectors.adjoint();
    Ok([0, 1, 2, 3].map(|i| k.column(i).into_owned()))
}

fn tensor(bob: &[Complex64; BOB_DIM], eve: &CVector) -> CVector {
    CVector::from_fn(BOB_DIM * EVE_DIM, |k, _| bob[k / EVE_DIM] * eve[k % EVE_DIM])
}

/// `(<phi| (x) 1) |Psi>`: Eve's unnormalized conditional vector.
fn bob_project(phi: &[Complex64; BOB_DIM], psi: &CVector) -> CVector {
    CVector::from_fn(EVE_DIM, |e, _| {
        (0..BOB_DIM).map(|b| phi[b].conj() * psi[b * EVE_DIM + e]).sum()
    })
}

fn inner(x: &CVector, y: &CVector) -> Complex64 {
    x.dotc(y)
}

/// Bob's measurement vectors for basis `b`: `(phi_b0, phi_b1)`.
fn bob_basis(align: &Alignment, b: usize) -> [[Complex64; BOB_DIM]; 2] {
    let (s, c) = if b == 0 { (0.0, 1.0) } else { (0.5 * align.beta()).sin_cos() };
    [[cr(c), cr(s)], [cr(-s), cr(c)]]
}

/// An attack written out as explicit vectors.
#[derive(Debug, Clone)]
pub struct LiftedAttack {
    pub kets: [CVector; 4],
    /// `|Psi_00>, |Psi_01>, |Psi_10>, |Psi_11>` (basis, bit), each in the
    /// 8-dimensional Bob (x) Eve space.
    pub states: [CVector; 4],
    pub align: Alignment,
    source: ProbeMetric,
}

impl LiftedAttack {
    pub fn state(&self, basis: usize, bit: usize) -> &CVector {
        &self.states[2 * basis + bit]
    }

    /// Eve's kets of the basis-1 decomposition, recovered by projecting the
    /// basis-1 states onto Bob's basis-1 vectors.
    pub fn primed_kets(&self) -> [CVector; 4] {
        let [u, v] = bob_basis(&self.align, 1);
        let (pu_u, pv_u) = (bob_project(&u, self.state(1, 0)), bob_project(&v, self.state(1, 0)));
        let (pu_v, pv_v) = (bob_project(&u, self.state(1, 1)), bob_project(&v, self.state(1, 1)));
        [
            (&pu_u + &pv_v) * cr(0.5),
            (&pu_u - &pv_v) * cr(0.5),
            (&pv_u + &pu_v) * cr(0.5),
            (&pv_u - &pu_v) * cr(0.5),
        ]
    }

    /// Named invariants of the lift with their residuals.
    pub fn invariants(&self) -> Vec<OracleCheck> {
        let mut out = Vec::new();
        let gram = CMatrix::from_fn(EVE_DIM, EVE_DIM, |i, j| inner(&self.kets[i], &self.kets[j]));
        out.push(OracleCheck::residual("gram_reproduces_metric", (gram - metric_matrix(&self.source)).camax()));
        for b in 0..2 {
            let (x, y) = (self.state(b, 0), self.state(b, 1));
            let res = (inner(x, x).re - 1.0)
                .abs()
                .max((inner(y, y).re - 1.0).abs())
                .max(inner(x, y).norm());
            out.push(OracleCheck::residual(if b == 0 { "unitarity_basis0" } else { "unitarity_basis1" }, res));
        }
        let primed = self.primed_kets();
        let gram1 = CMatrix::from_fn(EVE_DIM, EVE_DIM, |i, j| inner(&primed[i], &primed[j]));
        let analytic = to_basis1(&self.source, &self.align);
        out.push(OracleCheck::residual("primed_gram_matches_rotation", (gram1 - metric_matrix(&analytic)).camax()));
        out
    }
}

/// Build the explicit states of the attack described by `metric`.
pub fn lift(metric: &ProbeMetric, align: &Alignment) -> Result<LiftedAttack> {
    let kets = gram_factorize(metric)?;
    let [a, b, c, d] = &kets;
    let [phx, phy] = bob_basis(align, 0);
    let psi_x = tensor(&phx, &(a + b)) + tensor(&phy, &(c + d));
    let psi_y = tensor(&phy, &(a - b)) + tensor(&phx, &(c - d));
    let (s, co) = (0.5 * align.alpha()).sin_cos();
    let psi_u = &psi_x * cr(co) + &psi_y * cr(s);
    let psi_v = &psi_y * cr(co) - &psi_x * cr(s);
    Ok(LiftedAttack {
        kets: kets.clone(),
        states: [psi_x, psi_y, psi_u, psi_v],
        align: *align,
        source: metric.clone(),
    })
}

/// Alice-Bob coincidences per basis: `p[b][m][n]` for Alice sending `m` and
/// Bob reading `n`, with Alice's bit uniform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BobStatistics {
    pub p: [[[f64; 2]; 2]; 2],
}

impl BobStatistics {
    pub fn qber(&self, basis: usize) -> f64 {
        self.p[basis][0][1] + self.p[basis][1][0]
    }

    /// `|p(0,1) - p(1,0)|`, zero when errors are symmetric.
    pub fn error_asymmetry(&self, basis: usize) -> f64 {
        (self.p[basis][0][1] - self.p[basis][1][0]).abs()
    }
}

pub fn bob_statistics(attack: &LiftedAttack) -> BobStatistics {
    let mut p = [[[0.0; 2]; 2]; 2];
    for (b, table) in p.iter_mut().enumerate() {
        let phis = bob_basis(&attack.align, b);
        for (m, row) in table.iter_mut().enumerate() {
            for (n, cell) in row.iter_mut().enumerate() {
                *cell = 0.5 * bob_project(&phis[n], attack.state(b, m)).norm_squared();
            }
        }
    }
    BobStatistics { p }
}

/// Eve's reduced states `[rho_00, rho_01, rho_10, rho_11]`.
pub fn eve_marginals(attack: &LiftedAttack) -> [CMatrix; 4] {
    let std_basis = [[cr(1.0), cr(0.0)], [cr(0.0), cr(1.0)]];
    [0, 1, 2, 3].map(|k| {
        let mut rho = CMatrix::zeros(EVE_DIM, EVE_DIM);
        for phi in &std_basis {
            let e = bob_project(phi, &attack.states[k]);
            rho += &e * e.adjoint();
        }
        rho
    })
}

/// Eve's two-outcome measurement; `f0 + f1 = 1`.
#[derive(Debug, Clone)]
pub struct EvePovm {
    pub f0: CMatrix,
    pub f1: CMatrix,
}

#[derive(Debug, Clone)]
pub struct HelstromDirect {
    /// `1/2 - 1/4 ||(rho0 - rho1) + eps (rho0 + rho1)||_1`.
    pub value: f64,
    /// Projector onto the positive part; null eigenvectors are split evenly
    /// between the outcomes.
    pub povm: EvePovm,
    pub q_ae: f64,
    pub delta: f64,
    /// Eigenvalues of the operator inside the norm, ascending.
    pub spectrum: Vec<f64>,
}

/// Optimal binary discrimination of `rho0` against `rho1` with weight `eps`.
pub fn helstrom_direct(rho0: &CMatrix, rho1: &CMatrix, eps: f64) -> HelstromDirect {
    let diff = rho0 - rho1;
    let sum = rho0 + rho1;
    let x = &diff + &sum * cr(eps);
    let eig = jacobi_eigen(&x);
    let value = 0.5 - 0.25 * eig.values.iter().map(|l| l.abs()).sum::<f64>();
    let n = rho0.nrows();
    let mut f0 = CMatrix::zeros(n, n);
    for (k, &l) in eig.values.iter().enumerate() {
        let weight = if l > NULL_TOL {
            1.0
        } else if l.abs() <= NULL_TOL {
            0.5
        } else {
            continue;
        };
        let col = eig.vectors.column(k);
        f0 += col * col.adjoint() * cr(weight);
    }
    let f1 = CMatrix::identity(n, n) - &f0;
    let tr = |m: &CMatrix| m.trace().re;
    // Born rule with Alice's bit uniform.
    let q_ae = 0.5 * tr(&(rho0 * &f1)) + 0.5 * tr(&(rho1 * &f0));
    let delta = 0.5 - 0.5 * tr(&(&sum * &f0));
    HelstromDirect {
        value,
        povm: EvePovm { f0, f1 },
        q_ae,
        delta,
        spectrum: eig.values,
    }
}

/// Average QBER from the intermediate-basis trace expression.
pub fn trace_formula_qber(attack: &LiftedAttack) -> f64 {
    let (alpha, beta) = (attack.align.alpha(), attack.align.beta());
    let (psx, psy) = (attack.state(0, 0), attack.state(0, 1));
    let (sa, ca) = (0.25 * alpha).sin_cos();
    let zero_p = psx * cr(ca) + psy * cr(sa);
    let one_p = psy * cr(ca) - psx * cr(sa);
    let (sb, cb) = (0.25 * beta).sin_cos();
    let zero = [cr(cb), cr(sb)];
    let one = [cr(-sb), cr(cb)];
    // sigma (x) 1 on the joint space.
    let lift_op = |m: [[f64; 2]; 2]| {
        CMatrix::from_fn(BOB_DIM * EVE_DIM, BOB_DIM * EVE_DIM, |r, c| {
            if r % EVE_DIM == c % EVE_DIM {
                cr(m[r / EVE_DIM][c / EVE_DIM])
            } else {
                cr(0.0)
            }
        })
    };
    let outer = |u: &[Complex64; 2], v: &[Complex64; 2]| {
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = (u[i] * v[j].conj()).re;
            }
        }
        m
    };
    let add = |x: [[f64; 2]; 2], y: [[f64; 2]; 2], s: f64| {
        let mut m = x;
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] += s * y[i][j];
            }
        }
        m
    };
    let sigma_z = lift_op(add(outer(&zero, &zero), outer(&one, &one), -1.0));
    let sigma_x = lift_op(add(outer(&zero, &one), outer(&one, &zero), 1.0));
    // Tr[|u><v| O] = <v|O|u>.
    let expect = |u: &CVector, v: &CVector, o: &CMatrix| inner(v, &(o * u)).re;
    let tz = expect(&zero_p, &zero_p, &sigma_z) - expect(&one_p, &one_p, &sigma_z);
    let tx = expect(&zero_p, &one_p, &sigma_x) + expect(&one_p, &zero_p, &sigma_x);
    0.5 - 0.25 * (0.5 * alpha).cos() * (0.5 * beta).cos() * tz - 0.25 * (0.5 * alpha).sin() * (0.5 * beta).sin() * tx
}

/// One named comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub residual: f64,
    /// Checks that compare against a bound pass when `residual <= 0`.
    pub one_sided: bool,
}

impl OracleCheck {
    fn residual(name: &str, residual: f64) -> Self {
        Self {
            name: name.to_string(),
            residual,
            one_sided: false,
        }
    }

    fn bound(name: &str, excess: f64) -> Self {
        Self {
            name: name.to_string(),
            residual: excess,
            one_sided: true,
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        if self.one_sided {
            self.residual <= tol
        } else {
            self.residual.abs() <= tol && self.residual.is_finite()
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub tol: f64,
    pub checks: Vec<OracleCheck>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed(self.tol))
    }

    pub fn failures(&self) -> Vec<&OracleCheck> {
        self.checks.iter().filter(|c| !c.passed(self.tol)).collect()
    }

    /// One line per check: `PASS|FAIL name residual`.
    pub fn to_text(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {} {:.3e}\n",
                    if c.passed(self.tol) { "PASS" } else { "FAIL" },
                    c.name,
                    c.residual
                )
            })
            .collect()
    }
}

fn ket_difference_operator(kets: &[CVector; 4]) -> CMatrix {
    // |a><b| + |b><a| + |c><d| + |d><c|.
    let pairs = [(0, 1), (1, 0), (2, 3), (3, 2)];
    let mut m = CMatrix::zeros(EVE_DIM, EVE_DIM);
    for (i, j) in pairs {
        m += &kets[i] * kets[j].adjoint();
    }
    m
}

/// Replay `metric` explicitly and compare every quantity with the analytic
/// modules. Never fails; problems appear as failed checks.
pub fn verify_attack(metric: &ProbeMetric, align: &Alignment, tol: f64) -> VerificationReport {
    let mut checks = Vec::new();
    let report = validate(metric, align);
    checks.push(OracleCheck::residual("equality_constraints", report.max_equality_residual()));
    checks.push(OracleCheck::bound("positivity", -report.min_margin()));

    let attack = match lift(metric, align) {
        Ok(a) => a,
        Err(e) => {
            checks.push(OracleCheck::residual(&format!("lift ({e})"), f64::INFINITY));
            return VerificationReport { tol, checks };
        }
    };
    checks.extend(attack.invariants());

    let stats = bob_statistics(&attack);
    for b in 0..2 {
        checks.push(OracleCheck::residual(&format!("qber_basis{b}"), stats.qber(b) - metric.q()));
        checks.push(OracleCheck::residual(&format!("symmetric_errors_basis{b}"), stats.error_asymmetry(b)));
    }
    let mean_qber = 0.5 * (stats.qber(0) + stats.qber(1));
    checks.push(OracleCheck::residual("trace_formula_qber", trace_formula_qber(&attack) - mean_qber));
    let bounds = inherent_qber_bounds(align);
    checks.push(OracleCheck::bound("inherent_lower_bound", bounds.min - mean_qber));
    checks.push(OracleCheck::bound("inherent_upper_bound", mean_qber - bounds.max));

    let rhos = eve_marginals(&attack);
    let unit_trace = rhos.iter().map(|r| (r.trace().re - 1.0).abs()).fold(0.0, f64::max);
    checks.push(OracleCheck::residual("marginal_traces", unit_trace));
    let half_diff = (&rhos[0] - &rhos[1]) * cr(0.5);
    checks.push(OracleCheck::residual(
        "difference_operator",
        (half_diff - ket_difference_operator(&attack.kets)).camax(),
    ));

    let basis1 = to_basis1(metric, align);
    for (b, analytic_metric) in [(0, metric), (1, &basis1)] {
        let direct = helstrom_direct(&rhos[2 * b], &rhos[2 * b + 1], 0.0);
        match (weighted_error(analytic_metric, 0.0), extract_q_delta(analytic_metric, 0.0)) {
            (Ok((value, eig)), Ok(attack)) => {
                checks.push(OracleCheck::residual(&format!("helstrom_value_basis{b}"), direct.value - value));
                let spectrum = direct
                    .spectrum
                    .iter()
                    .zip(eig.lambdas.iter())
                    .map(|(x, l)| (0.5 * x - l).abs())
                    .fold(0.0, f64::max);
                checks.push(OracleCheck::residual(&format!("helstrom_spectrum_basis{b}"), spectrum));
                checks.push(OracleCheck::residual(&format!("q_ae_basis{b}"), direct.q_ae - attack.q_ae));
                checks.push(OracleCheck::residual(&format!("delta_basis{b}"), direct.delta - attack.delta));
            }
            (Err(e), _) | (_, Err(e)) => {
                checks.push(OracleCheck::residual(&format!("analytic_basis{b} ({e})"), f64::INFINITY));
            }
        }
        let povm = &direct.povm;
        let n = povm.f0.nrows();
        let completeness = (&povm.f0 + &povm.f1 - CMatrix::identity(n, n)).camax();
        let min_eig = jacobi_eigen(&povm.f0)
            .values
            .first()
            .copied()
            .unwrap_or(0.0)
            .min(jacobi_eigen(&povm.f1).values[0]);
        checks.push(OracleCheck::residual(&format!("povm_completeness_basis{b}"), completeness));
        checks.push(OracleCheck::bound(&format!("povm_positivity_basis{b}"), -min_eig));
    }
    VerificationReport { tol, checks }
}
