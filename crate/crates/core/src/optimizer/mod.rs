//! Search over feasible probe metrics for Eve's best attack.
//!
//! Eve's optimal individual attack minimizes her error `Q_AE` (equivalently
//! maximizes `I(A:E)`) over every metric compatible with the observed QBER.
//! The search runs Nelder-Mead on the affine chart of
//! [`Parameterization`], with a quadratic penalty on negative eigenvalues of
//! `gamma` that is tightened in stages. The best penalized point is then
//! pushed onto the feasible set by alternating projections and re-validated.

mod nelder_mead;
mod sweep;

pub use sweep::{sweep_eps, sweep_qber, sweep_theta, sweep_threshold, EpsPoint, QSpec, Sweep, SweepFailure};

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{inherent_qber_bounds, Alignment};
use crate::error::{check_probability, Error, Result};
use crate::helstrom::{attack_summary, combined_objective, weighted_error, AttackPoint, FastObjective};
use crate::infotheory::binary_entropy;
use crate::probe::{
    hermitian_part, primed_norms, project_onto_equalities, validate, ParamVector, Parameterization, Pivot,
    ProbeMetric, BOUNDARY_TOL,
};

/// Which of Eve's errors the search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Average over both bases; the keyrate uses both.
    #[default]
    TwoBasis,
    /// Basis 0 only; keyrate `1 - h(q) - I0(A:E)`.
    SingleBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub starts: usize,
    pub seed: u64,
    /// Simplex iterations per start and penalty stage.
    pub max_iters: usize,
    /// Penalty weight of the first stage.
    pub penalty_weight: f64,
    pub tol_obj: f64,
    /// Width at which threshold bisection stops.
    pub tol_q: f64,
    pub mode: Mode,
    /// `(eps0, eps1, eps)`.
    pub eps_weights: (f64, f64, f64),
    /// Restrict the search to real metrics.
    pub real_only: bool,
    /// Worker threads for sweeps; 0 picks the rayon default.
    pub jobs: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            starts: 32,
            seed: 1,
            max_iters: 2000,
            penalty_weight: 1e4,
            tol_obj: 1e-10,
            tol_q: 1e-4,
            mode: Mode::TwoBasis,
            eps_weights: (0.0, 0.0, 0.0),
            real_only: false,
            jobs: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.starts == 0 {
            return bad("starts must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !self.penalty_weight.is_finite() || self.penalty_weight <= 0.0 {
            return bad("penalty_weight must be positive");
        }
        if [self.tol_obj, self.tol_q].iter().any(|t| t.is_nan() || *t <= 0.0) {
            return bad("tolerances must be positive");
        }
        let (e0, e1, e) = self.eps_weights;
        if [e0, e1, e].iter().any(|x| !x.is_finite() || x.abs() > 1.0) {
            return bad("eps weights must lie in [-1, 1]");
        }
        Ok(())
    }
}

/// Penalty weights after the first stage are multiplied by these.
const STAGE_FACTORS: [f64; 5] = [1.0, 1e2, 1e4, 1e6, 1e8];
/// Starts carried through the later penalty stages.
const POLISHED: usize = 4;
const IMAGINARY: [usize; 5] = [2, 3, 4, 5, 7];
/// Eigenvalue floor for metrics accepted as feasible by the search.
const FEASIBLE_EIG: f64 = -1e-9;

struct Problem {
    param: Parameterization,
    align: Alignment,
    active: Vec<usize>,
    objective: FastObjective,
    mode: Mode,
}

impl Problem {
    fn new(q: f64, align: &Alignment, cfg: &OptConfig) -> Self {
        let param = Parameterization::new(q, *align);
        let active = param
            .free_indices()
            .into_iter()
            .filter(|k| !(cfg.real_only && IMAGINARY.contains(k)))
            .collect();
        let (e0, e1, e) = cfg.eps_weights;
        Self {
            param,
            align: *align,
            active,
            objective: FastObjective::new(align, e0, e1, e),
            mode: cfg.mode,
        }
    }

    fn q(&self) -> f64 {
        self.param.q()
    }

    fn params(&self, y: &[f64]) -> ParamVector {
        let mut full = [0.0; ParamVector::LEN];
        for (&k, v) in self.active.iter().zip(y) {
            full[k] = *v;
        }
        ParamVector::from_array(full)
    }

    fn metric(&self, y: &[f64]) -> ProbeMetric {
        self.param.metric_of(&self.params(y))
    }

    fn coords(&self, p: &ParamVector) -> Vec<f64> {
        let full = p.to_array();
        self.active.iter().map(|&k| full[k]).collect()
    }

    /// Coordinates of an arbitrary metric, clamped into the diagonal boxes.
    fn coords_of_metric(&self, m: &ProbeMetric) -> Vec<f64> {
        let q = self.q();
        let mut p = ParamVector::read(m);
        p.a_sq = p.a_sq.clamp(0.0, 1.0 - q);
        p.d_sq = p.d_sq.clamp(0.0, q);
        self.coords(&p)
    }

    fn steps(&self) -> Vec<f64> {
        let q = self.q();
        let s = (q * (1.0 - q)).sqrt();
        let scale = [1.0 - q, q, 1.0 - q, s, s, q, s, s, s];
        self.active.iter().map(|&k| (0.1 * scale[k]).max(1e-6)).collect()
    }

    /// Squared constraint violation: negative eigenvalues and primed boxes.
    fn violation(&self, m: &ProbeMetric, min_eig: f64) -> f64 {
        let q = self.q();
        let primed = primed_norms(m, &self.align);
        let caps = [1.0 - q, 1.0 - q, q, q];
        let boxes: f64 = primed
            .iter()
            .zip(caps)
            .map(|(p, cap)| (p - cap).max(0.0).powi(2) + (-p).max(0.0).powi(2))
            .sum();
        (-min_eig).max(0.0).powi(2) + boxes
    }

    fn objective_of(&self, combined: f64, q0: f64) -> f64 {
        match self.mode {
            Mode::TwoBasis => combined,
            Mode::SingleBasis => q0,
        }
    }

    fn penalized(&self, y: &[f64], weight: f64) -> f64 {
        let m = self.metric(y);
        let v = self.objective.eval(m.gamma());
        self.objective_of(v.combined, v.q0) + weight * self.violation(&m, v.min_eigenvalue)
    }

    fn min_eigenvalue(&self, y: &[f64]) -> f64 {
        self.metric(y).min_eigenvalue()
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let q = self.q();
        let a = rng.gen_range(0.0..=1.0 - q);
        let d = if q > 0.0 { rng.gen_range(0.0..=q) } else { 0.0 };
        let (b, c) = (1.0 - q - a, q - d);
        let mut off = |x: f64, y: f64| 0.7 * rng.gen_range(-1.0..=1.0) * (x * y).sqrt();
        let p = ParamVector {
            a_sq: a,
            d_sq: d,
            im_ab: off(a, b),
            im_ac: off(a, c),
            im_db: off(d, b),
            im_dc: off(d, c),
            re_ad: off(a, d),
            im_ad: off(a, d) * 0.5,
            re_bc: off(b, c),
        };
        self.coords(&p)
    }
}

fn clip_psd(g: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    let eig = hermitian_part(g).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|x| Complex64::new(x.max(0.0), 0.0));
    eig.eigenvectors * Matrix4::from_diagonal(&clipped) * eig.eigenvectors.adjoint()
}

/// Move a nearly feasible metric onto the feasible set by alternating
/// projections between the equality constraints and the PSD cone.
pub fn repair(metric: &ProbeMetric, align: &Alignment) -> ProbeMetric {
    let q = metric.q();
    let mut g = project_onto_equalities(metric.gamma(), q, align);
    for _ in 0..500 {
        if ProbeMetric::new(g, q).min_eigenvalue() >= -1e-14 {
            break;
        }
        g = project_onto_equalities(&clip_psd(&g), q, align);
    }
    ProbeMetric::new(g, q)
}

fn check_feasible_qber(q: f64, align: &Alignment) -> Result<f64> {
    let q = check_probability("q", q)?;
    let bounds = inherent_qber_bounds(align);
    let slack = 1e-12;
    let infeasible = Error::InfeasibleQber {
        q,
        q_min: bounds.min,
        q_max: bounds.max,
    };
    if q < bounds.min - slack || q > bounds.max + slack {
        return Err(infeasible);
    }
    let param = Parameterization::new(q, *align);
    if param.pivot() == Pivot::None && param.fixed_residual().abs() > 1e-9 {
        return Err(infeasible);
    }
    Ok(q)
}

struct Candidate {
    y: Vec<f64>,
    value: f64,
    start: usize,
}

/// Eve's best attack at QBER `q`.
///
/// Returns the argmax metric (feasible to `1e-8` when `converged`) together
/// with the per-basis errors and the keyrate. Deterministic for a fixed
/// `cfg.seed`.
pub fn optimal_attack(q: f64, align: &Alignment, cfg: &OptConfig) -> Result<AttackPoint> {
    optimal_attack_with_hint(q, align, cfg, None)
}

/// [`optimal_attack`] with an extra start taken from `hint`, typically the
/// argmax at a nearby QBER.
pub fn optimal_attack_with_hint(
    q: f64,
    align: &Alignment,
    cfg: &OptConfig,
    hint: Option<&ProbeMetric>,
) -> Result<AttackPoint> {
    cfg.validate()?;
    let q = check_feasible_qber(q, align)?;
    let problem = Problem::new(q, align, cfg);
    let settings = nelder_mead::Settings {
        max_iters: cfg.max_iters,
        f_tol: cfg.tol_obj,
        x_tol: 1e-9,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Deterministic seeds: the aligned-case optimum and the non-interfering
    // probe. Phase I pushes the better one deep into the interior.
    let ideal = problem.coords_of_metric(&ProbeMetric::ideal_optimum(q));
    let quiet = problem.coords_of_metric(&ProbeMetric::non_interfering(align));
    let phase_seed = if problem.min_eigenvalue(&ideal) >= problem.min_eigenvalue(&quiet) {
        ideal.clone()
    } else {
        quiet
    };
    let phase1 = nelder_mead::minimize(
        |y| -problem.min_eigenvalue(y) + 1e4 * problem.violation(&problem.metric(y), 0.0),
        &phase_seed,
        &problem.steps(),
        settings,
    );
    if problem.min_eigenvalue(&phase1.x) < FEASIBLE_EIG {
        let bounds = inherent_qber_bounds(align);
        return Err(Error::InfeasibleQber {
            q,
            q_min: bounds.min,
            q_max: bounds.max,
        });
    }

    let mut starts = vec![ideal, phase1.x];
    if let Some(h) = hint {
        starts.push(problem.coords_of_metric(h));
    }
    while starts.len() < cfg.starts.max(2) + usize::from(hint.is_some()) {
        starts.push(problem.random_start(&mut rng));
    }
    starts.truncate(cfg.starts.max(1) + usize::from(hint.is_some()));

    let steps = problem.steps();
    let mut candidates: Vec<Candidate> = starts
        .iter()
        .enumerate()
        .map(|(start, y0)| {
            let w = cfg.penalty_weight;
            let out = nelder_mead::minimize(|y| problem.penalized(y, w), y0, &steps, settings);
            Candidate {
                y: out.x,
                value: out.f,
                start,
            }
        })
        .collect();
    candidates.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.start.cmp(&b.start)));
    candidates.truncate(POLISHED);

    let fine_steps: Vec<f64> = steps.iter().map(|s| s * 1e-2).collect();
    for cand in &mut candidates {
        for factor in &STAGE_FACTORS[1..] {
            let w = cfg.penalty_weight * factor;
            let out = nelder_mead::minimize(|y| problem.penalized(y, w), &cand.y, &fine_steps, settings);
            cand.y = out.x;
            cand.value = out.f;
        }
    }

    // Repair, re-validate, and keep the best feasible candidate.
    let (e0, e1, e) = cfg.eps_weights;
    let mut best: Option<(f64, bool, ProbeMetric, usize)> = None;
    for cand in &candidates {
        let metric = repair(&problem.metric(&cand.y), align);
        let report = validate(&metric, align);
        let feasible = report.is_feasible(BOUNDARY_TOL, BOUNDARY_TOL);
        let value = match cfg.mode {
            Mode::TwoBasis => combined_objective(&metric, align, e0, e1, e)?,
            Mode::SingleBasis => weighted_error(&metric, e0)?.0,
        };
        let better = match &best {
            None => true,
            Some((v, f, _, _)) => (feasible && !f) || (feasible == *f && value < *v),
        };
        if better {
            best = Some((value, feasible, metric, cand.start));
        }
    }
    let (_, feasible, metric, start) = best.expect("at least one start");

    let mut point = attack_summary(&metric, align, q)?;
    if cfg.mode == Mode::SingleBasis {
        point.i_ab = 1.0 - binary_entropy(q)?;
        point.i_ae = point.basis0.i_ae;
        point.r = point.i_ab - point.i_ae;
    }
    point.converged = feasible;
    point.best_start = Some(start);
    Ok(point)
}

/// Optimized keyrate at `q` (see [`Mode`] for the two variants).
pub fn keyrate(q: f64, align: &Alignment, cfg: &OptConfig) -> Result<f64> {
    Ok(optimal_attack(q, align, cfg)?.r)
}

fn eve_error(point: &AttackPoint, mode: Mode) -> f64 {
    match mode {
        Mode::TwoBasis => point.q_ae(),
        Mode::SingleBasis => point.basis0.q_ae,
    }
}

/// Largest QBER at which Eve's optimized error still exceeds the QBER,
/// found by bisection on `Q_AE*(q) - q` over `[q_min + 1e-6, 0.25]`.
///
/// When Eve already matches the QBER at the lower end the lower end is
/// returned; when she never does by `0.25` the bracket failure is reported.
pub fn threshold_qber(align: &Alignment, cfg: &OptConfig) -> Result<f64> {
    cfg.validate()?;
    let bounds = inherent_qber_bounds(align);
    let (mut lo, mut hi) = (bounds.min + 1e-6, 0.25);
    if lo >= hi {
        return Err(Error::BracketFailure {
            lo,
            hi,
            f_lo: f64::NAN,
            f_hi: f64::NAN,
        });
    }
    let f_lo_point = optimal_attack(lo, align, cfg)?;
    let f_lo = eve_error(&f_lo_point, cfg.mode) - lo;
    if f_lo <= 0.0 {
        return Ok(lo);
    }
    let hi_point = optimal_attack(hi, align, cfg)?;
    let f_hi = eve_error(&hi_point, cfg.mode) - hi;
    if f_hi > 0.0 {
        return Err(Error::BracketFailure { lo, hi, f_lo, f_hi });
    }
    let mut hint = hi_point.gamma;
    while hi - lo > cfg.tol_q {
        let mid = 0.5 * (lo + hi);
        let point = optimal_attack_with_hint(mid, align, cfg, Some(&hint))?;
        if eve_error(&point, cfg.mode) - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        hint = point.gamma;
    }
    Ok(0.5 * (lo + hi))
}
