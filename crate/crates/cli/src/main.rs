//! Command-line driver: plot tables for keyrate and threshold curves, single
//! attack evaluation, and offline verification of dumped metrics.
//!
//! Exit codes: 0 success, 1 a verification check or a sweep point failed,
//! 2 invalid arguments, 3 QBER outside the range the alignment allows.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bb84_misalign::alignment::{inherent_qber_bounds, Alignment};
use bb84_misalign::error::Error;
use bb84_misalign::optimizer::{
    optimal_attack, sweep_eps, sweep_qber, sweep_theta, sweep_threshold, threshold_qber, Mode, OptConfig, QSpec,
    Sweep,
};
use bb84_misalign::oracle::verify_attack;
use bb84_misalign::probe::ProbeMetric;
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "bb84-misalign", version, about = "Optimal individual attacks on BB84 with misaligned bases")]
struct Cli {
    #[command(flatten)]
    search: SearchOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SearchOpts {
    /// Random seed for the multi-start search.
    #[arg(long, global = true, env = "BB84_SEED", default_value_t = 1)]
    seed: u64,
    /// Optimizer starts per point.
    #[arg(long, global = true, default_value_t = 32)]
    starts: usize,
    /// Simplex iterations per start and penalty stage.
    #[arg(long, global = true, default_value_t = 2000)]
    max_iters: usize,
    /// Which of Eve's errors is minimized.
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    /// Search real metrics only.
    #[arg(long, global = true)]
    real_only: bool,
    /// Worker threads (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Both,
    Single,
}

#[derive(Args, Debug)]
struct AngleOpts {
    /// alpha = beta = theta, in degrees.
    #[arg(long, conflicts_with_all = ["alpha_deg", "beta_deg"])]
    theta_deg: Option<f64>,
    #[arg(long, requires = "beta_deg")]
    alpha_deg: Option<f64>,
    #[arg(long, requires = "alpha_deg")]
    beta_deg: Option<f64>,
}

impl AngleOpts {
    fn alignment(&self) -> Result<Option<Alignment>, Error> {
        match (self.theta_deg, self.alpha_deg, self.beta_deg) {
            (Some(t), _, _) => Alignment::symmetric_degrees(t).map(Some),
            (None, Some(a), Some(b)) => Alignment::from_degrees(a, b).map(Some),
            _ => Ok(None),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Keyrate against QBER at fixed alignment.
    SweepQber {
        #[command(flatten)]
        angles: AngleOpts,
        #[arg(long, default_value_t = 0.0)]
        qmin: f64,
        #[arg(long, default_value_t = 0.15)]
        qmax: f64,
        #[arg(long, default_value_t = 30)]
        steps: usize,
        /// Output file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keyrate against the angle deviation 90 - theta, alpha = beta.
    SweepTheta {
        /// QBER as a fraction of the aligned threshold 1/2 - sqrt(2)/4.
        #[arg(long, conflicts_with = "q")]
        q_frac: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, default_value_t = -50.0, allow_hyphen_values = true)]
        dtheta_min: f64,
        #[arg(long, default_value_t = 50.0, allow_hyphen_values = true)]
        dtheta_max: f64,
        #[arg(long, default_value_t = 31)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold QBER against the angle deviation, or at one alignment.
    Threshold {
        /// Print the threshold at one alignment instead of a curve.
        #[arg(long)]
        single: bool,
        #[command(flatten)]
        angles: AngleOpts,
        #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
        dtheta_min: f64,
        #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
        dtheta_max: f64,
        #[arg(long, default_value_t = 31)]
        steps: usize,
        /// Bisection stops at this bracket width.
        #[arg(long, default_value_t = 1e-4)]
        tol_q: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize and report one attack.
    Attack {
        #[arg(long)]
        q: f64,
        #[command(flatten)]
        angles: AngleOpts,
        /// Write the optimal metric to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Replay the attack in the explicit Hilbert space and compare.
        #[arg(long)]
        verify: bool,
        /// Also optimize over an N x N x N grid of weights in [-0.5, 0.5].
        #[arg(long)]
        eps_grid: Option<usize>,
    },
    /// Replay a dumped metric and compare against the analytic evaluation.
    Verify {
        #[arg(long)]
        metric: PathBuf,
        /// Angles; read from the dump header when omitted.
        #[command(flatten)]
        angles: AngleOpts,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InfeasibleQber { .. } => EXIT_INFEASIBLE,
            Error::Domain { .. } | Error::Config(_) | Error::ParameterBounds { .. } | Error::Parse { .. } => EXIT_USAGE,
            _ => EXIT_CHECK_FAILED,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_CHECK_FAILED,
        message: format!("{}: {e}", path.display()),
    }
}

fn config(search: &SearchOpts, tol_q: Option<f64>) -> OptConfig {
    OptConfig {
        starts: search.starts,
        seed: search.seed,
        max_iters: search.max_iters,
        mode: match search.mode {
            ModeArg::Both => Mode::TwoBasis,
            ModeArg::Single => Mode::SingleBasis,
        },
        real_only: search.real_only,
        jobs: search.jobs,
        tol_q: tol_q.unwrap_or(1e-4),
        ..OptConfig::default()
    }
}

fn grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>, Failure> {
    if steps == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(usage("grid needs finite bounds and at least one step"));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    if hi <= lo {
        return Err(usage(format!("grid upper bound {hi} must exceed lower bound {lo}")));
    }
    Ok((0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect())
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn finish_sweep(sweep: Sweep, out: Option<&Path>) -> Result<(), Failure> {
    emit(&sweep.table.to_text(), out)?;
    for f in &sweep.failures {
        eprintln!("point {} (x = {}) failed: {}", f.index, f.x, f.error);
    }
    match sweep.failures.first() {
        None => Ok(()),
        Some(f) if sweep.failures.iter().all(|f| matches!(f.error, Error::InfeasibleQber { .. })) => Err(Failure {
            code: EXIT_INFEASIBLE,
            message: f.error.to_string(),
        }),
        Some(_) => Err(Failure {
            code: EXIT_CHECK_FAILED,
            message: format!("{} grid point(s) failed", sweep.failures.len()),
        }),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SweepQber {
            angles,
            qmin,
            qmax,
            steps,
            out,
        } => {
            let align = angles
                .alignment()?
                .ok_or_else(|| usage("give --theta-deg or --alpha-deg with --beta-deg"))?;
            let qs = grid(qmin, qmax, steps)?;
            let bounds = inherent_qber_bounds(&align);
            if qs.iter().any(|&q| !bounds.contains(q)) {
                return Err(Error::InfeasibleQber {
                    q: if qmin < bounds.min { qmin } else { qmax },
                    q_min: bounds.min,
                    q_max: bounds.max,
                }
                .into());
            }
            finish_sweep(sweep_qber(&align, &qs, &config(&cli.search, None))?, out.as_deref())
        }
        Command::SweepTheta {
            q_frac,
            q,
            dtheta_min,
            dtheta_max,
            steps,
            out,
        } => {
            let q_spec = match (q_frac, q) {
                (Some(f), None) => QSpec::FractionOfQ0(f),
                (None, Some(q)) => QSpec::Absolute(q),
                _ => return Err(usage("give exactly one of --q-frac and --q")),
            };
            let dts = grid(dtheta_min, dtheta_max, steps)?;
            finish_sweep(sweep_theta(q_spec, &dts, &config(&cli.search, None))?, out.as_deref())
        }
        Command::Threshold {
            single,
            angles,
            dtheta_min,
            dtheta_max,
            steps,
            tol_q,
            out,
        } => {
            let cfg = config(&cli.search, Some(tol_q));
            if single {
                let align = angles
                    .alignment()?
                    .ok_or_else(|| usage("--single needs --theta-deg or --alpha-deg with --beta-deg"))?;
                let t = threshold_qber(&align, &cfg)?;
                emit(&format!("{t:.6}\n"), out.as_deref())
            } else {
                let dts = grid(dtheta_min, dtheta_max, steps)?;
                finish_sweep(sweep_threshold(&dts, &cfg)?, out.as_deref())
            }
        }
        Command::Attack {
            q,
            angles,
            dump,
            verify,
            eps_grid,
        } => {
            let align = angles
                .alignment()?
                .ok_or_else(|| usage("give --theta-deg or --alpha-deg with --beta-deg"))?;
            let cfg = config(&cli.search, None);
            let point = optimal_attack(q, &align, &cfg)?;
            let mut text = String::new();
            let deg = |x: f64| x.to_degrees();
            text += &format!("q {:.6}\n", point.q);
            text += &format!("alpha_deg {:.6}\nbeta_deg {:.6}\n", deg(align.alpha()), deg(align.beta()));
            text += &format!("q_ae_basis0 {:.6}\ndelta_basis0 {:.6}\n", point.basis0.q_ae, point.basis0.delta);
            text += &format!("q_ae_basis1 {:.6}\ndelta_basis1 {:.6}\n", point.basis1.q_ae, point.basis1.delta);
            text += &format!("i_ab {:.6}\ni_ae {:.6}\nr {:.6}\n", point.i_ab, point.i_ae, point.r);
            text += &format!("converged {}\n", point.converged);
            if let Some(path) = &dump {
                let header = format!(
                    "# alpha_deg {:.17e}\n# beta_deg {:.17e}\n# q {:.17e}\n",
                    deg(align.alpha()),
                    deg(align.beta()),
                    q
                );
                fs::write(path, header + &point.gamma.to_text()).map_err(|e| io_failure(path, e))?;
            }
            if let Some(n) = eps_grid {
                let axis = grid(-0.5, 0.5, n.max(1))?;
                let mut weights = Vec::with_capacity(axis.len().pow(3));
                for &a in &axis {
                    for &b in &axis {
                        for &c in &axis {
                            weights.push((a, b, c));
                        }
                    }
                }
                for p in sweep_eps(q, &align, &weights, &cfg)? {
                    let (a, b, c) = p.eps_weights;
                    text += &format!("eps {a:.6} {b:.6} {c:.6} q_ae {:.6} r {:.6}\n", p.q_ae, p.r);
                }
            }
            let mut failed = false;
            if verify {
                let report = verify_attack(&point.gamma, &align, 1e-8);
                text += &report.to_text();
                failed = !report.all_passed();
            }
            emit(&text, None)?;
            if failed {
                return Err(Failure {
                    code: EXIT_CHECK_FAILED,
                    message: "oracle verification failed".into(),
                });
            }
            Ok(())
        }
        Command::Verify { metric, angles, tol } => {
            let text = fs::read_to_string(&metric).map_err(|e| io_failure(&metric, e))?;
            let gamma = ProbeMetric::from_text(&text)?;
            let align = match angles.alignment()? {
                Some(a) => a,
                None => header_alignment(&text)?,
            };
            let report = verify_attack(&gamma, &align, tol);
            emit(&report.to_text(), None)?;
            if report.all_passed() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_CHECK_FAILED,
                    message: format!("{} check(s) failed", report.failures().len()),
                })
            }
        }
    }
}

/// Angles from `# alpha_deg` / `# beta_deg` comment lines of a dump.
fn header_alignment(text: &str) -> Result<Alignment, Failure> {
    let find = |key: &str| {
        text.lines()
            .filter_map(|l| l.strip_prefix('#'))
            .filter_map(|l| {
                let mut it = l.split_whitespace();
                (it.next() == Some(key)).then(|| it.next().and_then(|v| v.parse::<f64>().ok()))?
            })
            .next()
    };
    match (find("alpha_deg"), find("beta_deg")) {
        (Some(a), Some(b)) => Ok(Alignment::from_degrees(a, b)?),
        _ => Err(usage("metric file has no angle header; give --alpha-deg and --beta-deg")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
