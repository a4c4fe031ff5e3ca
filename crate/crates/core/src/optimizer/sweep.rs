use rayon::prelude::*;

use super::{optimal_attack, threshold_qber, OptConfig};
use crate::alignment::Alignment;
use crate::error::{Error, Result};
use crate::infotheory::IDEAL_THRESHOLD_QBER;
use crate::table::Table;

/// QBER for an angle sweep, either absolute or relative to the aligned
/// threshold `Q0 = 1/2 - sqrt(2)/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QSpec {
    Absolute(f64),
    FractionOfQ0(f64),
}

impl QSpec {
    pub fn resolve(&self) -> f64 {
        match *self {
            QSpec::Absolute(q) => q,
            QSpec::FractionOfQ0(f) => f * IDEAL_THRESHOLD_QBER,
        }
    }
}

/// A grid point that produced no row.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub index: usize,
    pub x: f64,
    pub error: Error,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub table: Table,
    pub failures: Vec<SweepFailure>,
}

/// Per-point seed, independent of evaluation order.
fn point_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("grid has non-finite entries".into()));
    }
    let up = grid.windows(2).all(|w| w[1] > w[0]);
    let down = grid.windows(2).all(|w| w[1] < w[0]);
    if !up && !down {
        return Err(Error::Config("grid must be strictly monotone".into()));
    }
    Ok(())
}

pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run_grid<F>(grid: &[f64], cfg: &OptConfig, eval: F) -> Result<Sweep>
where
    F: Fn(f64, &OptConfig) -> Result<f64> + Sync,
{
    cfg.validate()?;
    check_grid(grid)?;
    let results: Vec<Result<f64>> = pool(cfg.jobs)?.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, &x)| {
                let local = OptConfig {
                    seed: point_seed(cfg.seed, i),
                    ..cfg.clone()
                };
                eval(x, &local)
            })
            .collect()
    });
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    let mut failures = Vec::new();
    for (index, (&x, res)) in grid.iter().zip(results).enumerate() {
        match res {
            Ok(y) if y.is_finite() => rows.push((index, x, y)),
            Ok(y) => failures.push(SweepFailure {
                index,
                x,
                error: Error::Config(format!("non-finite value {y}")),
            }),
            Err(error) => failures.push(SweepFailure { index, x, error }),
        }
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut table = Table::new();
    for (_, x, y) in rows {
        table.push(x, y)?;
    }
    Ok(Sweep { table, failures })
}

/// Keyrate (clamped at 0) against QBER at fixed alignment.
pub fn sweep_qber(align: &Alignment, q_grid: &[f64], cfg: &OptConfig) -> Result<Sweep> {
    run_grid(q_grid, cfg, |q, c| Ok(optimal_attack(q, align, c)?.r.max(0.0)))
}

/// Keyrate (clamped at 0) against the deviation `dtheta` in degrees, with
/// `alpha = beta = 90 - dtheta`.
pub fn sweep_theta(q: QSpec, dtheta_grid: &[f64], cfg: &OptConfig) -> Result<Sweep> {
    let q = q.resolve();
    run_grid(dtheta_grid, cfg, |dt, c| {
        let align = Alignment::from_deviation_degrees(dt)?;
        Ok(optimal_attack(q, &align, c)?.r.max(0.0))
    })
}

/// Threshold QBER against the deviation `dtheta` in degrees.
pub fn sweep_threshold(dtheta_grid: &[f64], cfg: &OptConfig) -> Result<Sweep> {
    run_grid(dtheta_grid, cfg, |dt, c| {
        let align = Alignment::from_deviation_degrees(dt)?;
        threshold_qber(&align, c)
    })
}

/// Result of optimizing one choice of `(eps0, eps1, eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsPoint {
    pub eps_weights: (f64, f64, f64),
    /// Symmetric keyrate of the argmax.
    pub r: f64,
    pub q_ae: f64,
}

/// Optimize with each set of weights and report the keyrate of the attack
/// found. The smallest `r` is Eve's best over the grid.
pub fn sweep_eps(q: f64, align: &Alignment, weights: &[(f64, f64, f64)], cfg: &OptConfig) -> Result<Vec<EpsPoint>> {
    cfg.validate()?;
    pool(cfg.jobs)?.install(|| {
        weights
            .par_iter()
            .map(|&w| {
                let local = OptConfig {
                    eps_weights: w,
                    ..cfg.clone()
                };
                let p = optimal_attack(q, align, &local)?;
                Ok(EpsPoint {
                    eps_weights: w,
                    r: p.r,
                    q_ae: p.q_ae(),
                })
            })
            .collect()
    })
}
