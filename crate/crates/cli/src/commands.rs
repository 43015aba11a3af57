//! Experiment drivers behind the subcommands.

use std::fs;
use std::io::Write;
use std::path::Path;

use nutaxis_core::diagnostics::{
    check_first_energy, check_log_hessian, check_sobolev_product, check_struc2_balance,
    random_neumann_field, residual_upvq_identity, residual_v_energy, residual_vq_identity,
    struc2_sample, MonitorRow, Struc2Report, Struc2Sample, UpvqForm,
};
use nutaxis_core::exponents::{
    moderate_seq, moderate_seq_hat, strong_seq, ExponentTriple, Regime, VerifyReport,
};
use nutaxis_core::grid::lp_norm;
use nutaxis_core::stepper::Observer;
use nutaxis_core::{run, GridSpec, State, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::snapshot::save_snapshot;

/// Relative residuals of the energy identities over one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualRow {
    pub t0: f64,
    pub t1: f64,
    pub v_energy: f64,
    pub vq_identity: f64,
    pub upvq_identity: f64,
    pub first_energy_identity: f64,
    /// Right side minus rate of the first-energy inequality.
    pub first_energy_slack: f64,
}

impl ResidualRow {
    pub const HEADER: [&'static str; 7] = [
        "t0",
        "t1",
        "v_energy",
        "vq_identity",
        "upvq_identity",
        "first_energy_identity",
        "first_energy_slack",
    ];

    pub fn compute(prev: &State, next: &State, cfg: &RunConfig) -> Result<Self> {
        let p = &cfg.params;
        let first = check_first_energy(prev, next, p)?;
        Ok(Self {
            t0: prev.t,
            t1: next.t,
            v_energy: residual_v_energy(prev, next, p)?.relative(),
            vq_identity: residual_vq_identity(prev, next, cfg.vq_q, p)?.relative(),
            upvq_identity: residual_upvq_identity(prev, next, cfg.upvq_p, cfg.upvq_q, p, UpvqForm::Derived)?
                .relative(),
            first_energy_identity: first.identity.relative(),
            first_energy_slack: first.slack,
        })
    }

    fn record(&self) -> [String; 7] {
        [
            self.t0,
            self.t1,
            self.v_energy,
            self.vq_identity,
            self.upvq_identity,
            self.first_energy_identity,
            self.first_energy_slack,
        ]
        .map(|x| format!("{x:e}"))
    }
}

/// Records residuals for the step that starts at each monitor tick, and
/// optionally the gradient balance on every step.
struct RunObserver<'a> {
    cfg: &'a RunConfig,
    next_tick: f64,
    residuals: Vec<ResidualRow>,
    struc2: Vec<Struc2Sample>,
}

impl Observer for RunObserver<'_> {
    fn accepted(&mut self, prev: &State, next: &State, _dt: f64) -> nutaxis_core::Result<()> {
        let tol = 1e-12 * self.next_tick.max(1.0);
        if prev.t >= self.next_tick - tol {
            let row = ResidualRow::compute(prev, next, self.cfg).map_err(|e| match e {
                CliError::Core(c) => c,
                other => nutaxis_core::Error::InvalidArgument(other.to_string()),
            })?;
            self.residuals.push(row);
            self.next_tick = match self.cfg.control.monitor_every {
                Some(every) => {
                    let mut t = self.next_tick;
                    while t <= prev.t + tol {
                        t += every;
                    }
                    t
                }
                None => f64::INFINITY,
            };
        }
        if self.cfg.track_struc2 {
            self.struc2.push(struc2_sample(prev, next, &self.cfg.params)?);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub residuals: Vec<ResidualRow>,
    pub struc2: Option<Struc2Report>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    steps: usize,
    rejections: usize,
    t_final: f64,
    final_row: &'a MonitorRow,
    struc2: Option<&'a Struc2Report>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_monitors(path: &Path, lp: &[f64], rows: &[MonitorRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MonitorRow::csv_header(lp))?;
    for row in rows {
        w.write_record(row.csv_record())?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_residuals(path: &Path, rows: &[ResidualRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ResidualRow::HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Integrates one configuration without touching the filesystem.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let state = cfg.initial_state()?;
    let mut obs = RunObserver {
        cfg,
        next_tick: state.t,
        residuals: Vec::new(),
        struc2: Vec::new(),
    };
    let trajectory = run(state, &cfg.params, &cfg.control, &mut obs)?;
    let struc2 = cfg.track_struc2.then(|| check_struc2_balance(&obs.struc2));
    Ok(RunOutput {
        trajectory,
        residuals: obs.residuals,
        struc2,
    })
}

/// Runs one configuration and writes `monitors.csv`, `residuals.csv`,
/// `summary.json` and `snapshots/` under the output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput> {
    let out = simulate(cfg)?;
    write_run_outputs(cfg, &out)?;
    Ok(out)
}

fn write_run_outputs(cfg: &RunConfig, out: &RunOutput) -> Result<()> {
    let dir = &cfg.output;
    create_dir(dir)?;
    let traj = &out.trajectory;
    write_monitors(&dir.join("monitors.csv"), &cfg.control.lp_exponents, &traj.rows)?;
    write_residuals(&dir.join("residuals.csv"), &out.residuals)?;
    if !traj.snapshots.is_empty() {
        let snaps = dir.join("snapshots");
        create_dir(&snaps)?;
        for (k, s) in traj.snapshots.iter().enumerate() {
            save_snapshot(s, &cfg.params, &snaps.join(format!("snap_{k:04}.bin")))?;
        }
    }
    let summary = RunSummary {
        steps: traj.steps,
        rejections: traj.rejections,
        t_final: traj.final_state.t,
        final_row: traj.rows.last().expect("run records the initial row"),
        struc2: out.struc2.as_ref(),
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| CliError::io(&path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub regime: Regime,
    pub outcome: std::result::Result<MonitorRow, String>,
}

/// Runs `cfg` once per α in parallel. Each run writes into its own
/// `alpha_<index>` directory; `sweep.csv` aggregates the final monitors.
pub fn cmd_sweep(cfg: &RunConfig, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    let regimes = alphas
        .iter()
        .map(|&a| {
            Regime::of(a).ok_or_else(|| CliError::InvalidArgument(format!("alpha must lie in [0, 2), got {a}")))
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&cfg.output)?;
    let rows: Vec<SweepRow> = alphas
        .par_iter()
        .zip(regimes)
        .enumerate()
        .map(|(i, (&alpha, regime))| {
            let mut member = cfg.clone();
            member.params.alpha = alpha;
            member.output = cfg.output.join(format!("alpha_{i:03}"));
            let outcome = cmd_run(&member)
                .map(|o| o.trajectory.rows.last().cloned().expect("initial row"))
                .map_err(|e| e.to_string());
            SweepRow { alpha, regime, outcome }
        })
        .collect();

    let path = cfg.output.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let header = MonitorRow::csv_header(&cfg.control.lp_exponents);
    let width = header.len();
    w.write_record(["alpha", "regime", "status"].into_iter().map(String::from).chain(header))?;
    for row in &rows {
        let mut rec = vec![format!("{:e}", row.alpha), row.regime.label().to_string()];
        match &row.outcome {
            Ok(m) => {
                rec.push("ok".into());
                rec.extend(m.csv_record());
            }
            Err(msg) => {
                rec.push(format!("failed: {msg}"));
                rec.extend(std::iter::repeat(String::new()).take(width));
            }
        }
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

/// L² distance between consecutive ε members at the final time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsDiff {
    pub eps_from: f64,
    pub eps_to: f64,
    pub l2_u: Option<f64>,
    pub l2_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsStudy {
    pub eps: Vec<f64>,
    /// `None` for members that completed, the error otherwise.
    pub failures: Vec<Option<String>>,
    pub diffs: Vec<EpsDiff>,
}

fn l2_distance(a: &nutaxis_core::Field, b: &nutaxis_core::Field) -> nutaxis_core::Result<f64> {
    lp_norm(&a.zip_map(b, |x, y| x - y), 2.0)
}

/// Integrates the same configuration for each ε (nonincreasing, in (0, 1))
/// and compares successive final states.
pub fn eps_study(cfg: &RunConfig, eps: &[f64]) -> Result<EpsStudy> {
    if let Some(bad) = eps.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(CliError::InvalidArgument(format!("epsilon must lie in (0, 1), got {bad}")));
    }
    if eps.windows(2).any(|w| w[1] > w[0]) {
        return Err(CliError::InvalidArgument("epsilon list must be nonincreasing".into()));
    }
    let finals: Vec<std::result::Result<State, String>> = eps
        .par_iter()
        .map(|&e| {
            let mut member = cfg.clone();
            member.params.epsilon = e;
            member.control.monitor_every = None;
            member.control.snapshot_every = None;
            member.track_struc2 = false;
            let state = member.initial_state().map_err(|e| e.to_string())?;
            run(state, &member.params, &member.control, &mut ())
                .map(|t| t.final_state)
                .map_err(|e| e.to_string())
        })
        .collect();
    let diffs = eps
        .windows(2)
        .zip(finals.windows(2))
        .map(|(e, f)| {
            let (l2_u, l2_v) = match (&f[0], &f[1]) {
                (Ok(a), Ok(b)) => (l2_distance(&b.u, &a.u).ok(), l2_distance(&b.v, &a.v).ok()),
                _ => (None, None),
            };
            EpsDiff {
                eps_from: e[0],
                eps_to: e[1],
                l2_u,
                l2_v,
            }
        })
        .collect();
    Ok(EpsStudy {
        eps: eps.to_vec(),
        failures: finals.into_iter().map(|r| r.err()).collect(),
        diffs,
    })
}

/// Runs [`eps_study`] and writes `eps_study.csv`.
pub fn cmd_eps_study(cfg: &RunConfig, eps: &[f64]) -> Result<EpsStudy> {
    let study = eps_study(cfg, eps)?;
    create_dir(&cfg.output)?;
    let path = cfg.output.join("eps_study.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["eps_from", "eps_to", "l2_u", "l2_v", "status"])?;
    let fmt = |x: Option<f64>| x.map_or(String::new(), |x| format!("{x:e}"));
    for (i, d) in study.diffs.iter().enumerate() {
        let status = match (&study.failures[i], &study.failures[i + 1]) {
            (None, None) => "ok".to_string(),
            (Some(e), _) => format!("eps {} failed: {e}", d.eps_from),
            (_, Some(e)) => format!("eps {} failed: {e}", d.eps_to),
        };
        w.write_record([format!("{:e}", d.eps_from), format!("{:e}", d.eps_to), fmt(d.l2_u), fmt(d.l2_v), status])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(study)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogHessianBatch {
    pub check: &'static str,
    pub dim: usize,
    pub cells: Vec<usize>,
    pub q: f64,
    pub samples: usize,
    pub failures: usize,
    pub max_ratio1: f64,
    pub max_ratio2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolevBatch {
    pub check: &'static str,
    pub p: f64,
    pub mu: f64,
    pub ambient_dim: usize,
    pub samples: usize,
    pub coarse_cells: usize,
    pub fine_cells: usize,
    pub coarse_max_ratio: f64,
    pub fine_max_ratio: f64,
    /// |fine − coarse| / coarse.
    pub relative_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub log_hessian: Vec<LogHessianBatch>,
    pub sobolev: SobolevBatch,
}

/// Modes and log-amplitude of the random test fields.
const FIELD_MODES: u32 = 4;
const FIELD_AMPLITUDE: f64 = 2.0;

fn sobolev_batch_max(grid: &GridSpec, samples: usize, seed: u64, p: f64, mu: f64, ambient: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let phi = random_neumann_field(grid, &mut rng, FIELD_MODES, 1.0);
        let psi = random_neumann_field(grid, &mut rng, FIELD_MODES, 1.0);
        worst = worst.max(check_sobolev_product(&phi, &psi, p, mu, ambient)?.ratio);
    }
    Ok(worst)
}

/// Log-Hessian inequalities on random fields in 1D (256 cells) and 2D
/// (64×64) for q ∈ {2, 3, 4}, plus the amended Sobolev product batch in 1D
/// at 128 and 256 cells.
pub fn inequality_suite(seed: u64, samples: usize) -> Result<InequalityReport> {
    let grids = [GridSpec::uniform(1, 256, 1.0)?, GridSpec::uniform(2, 64, 1.0)?];
    let jobs: Vec<(usize, GridSpec, f64)> = grids
        .iter()
        .flat_map(|g| [2.0, 3.0, 4.0].map(|q| (g.dim(), *g, q)))
        .collect();
    let log_hessian = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(dim, grid, q))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut batch = LogHessianBatch {
                check: "log_hessian",
                dim,
                cells: grid.cells().to_vec(),
                q,
                samples,
                failures: 0,
                max_ratio1: 0.0,
                max_ratio2: 0.0,
            };
            for _ in 0..samples {
                let phi = random_neumann_field(&grid, &mut rng, FIELD_MODES, FIELD_AMPLITUDE);
                let r = check_log_hessian(&phi, q)?;
                batch.failures += usize::from(!r.passes());
                batch.max_ratio1 = batch.max_ratio1.max(r.ratio1());
                batch.max_ratio2 = batch.max_ratio2.max(r.ratio2());
            }
            Ok(batch)
        })
        .collect::<Result<Vec<_>>>()?;

    let (p, mu, ambient) = (1.0, 3.0, 3);
    let (coarse, fine) = (128, 256);
    let sob_seed = seed.wrapping_add(jobs.len() as u64);
    let c = sobolev_batch_max(&GridSpec::uniform(1, coarse, 1.0)?, samples, sob_seed, p, mu, ambient)?;
    let f = sobolev_batch_max(&GridSpec::uniform(1, fine, 1.0)?, samples, sob_seed, p, mu, ambient)?;
    Ok(InequalityReport {
        log_hessian,
        sobolev: SobolevBatch {
            check: "sobolev_product",
            p,
            mu,
            ambient_dim: ambient,
            samples,
            coarse_cells: coarse,
            fine_cells: fine,
            coarse_max_ratio: c,
            fine_max_ratio: f,
            relative_change: (f - c).abs() / c,
        },
    })
}

/// Writes one JSON object per batch.
pub fn write_inequality_report(report: &InequalityReport, out: &mut dyn Write) -> Result<()> {
    for b in &report.log_hessian {
        writeln!(out, "{}", serde_json::to_string(b)?)?;
    }
    writeln!(out, "{}", serde_json::to_string(&report.sobolev)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Recursion {
    Moderate,
    ModerateHat,
    Strong,
}

pub fn exponent_table(kind: Recursion, start: f64, alpha: f64, steps: usize) -> Vec<ExponentTriple> {
    match kind {
        Recursion::Moderate => moderate_seq(start, alpha, steps),
        Recursion::ModerateHat => moderate_seq_hat(start, alpha, steps),
        Recursion::Strong => strong_seq(start, alpha, steps),
    }
}

pub fn write_exponent_table(rows: &[ExponentTriple], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "first", "p", "r"])?;
    for t in rows {
        w.write_record([t.k.to_string(), format!("{:e}", t.first), format!("{:e}", t.p), format!("{:e}", t.r)])?;
    }
    Ok(w.flush()?)
}

pub fn write_verify_report(report: &VerifyReport, out: &mut dyn Write) -> Result<()> {
    for s in &report.sequences {
        let line = serde_json::json!({
            "seed": report.seed,
            "iterations": report.iterations,
            "sequence": s.sequence,
            "samples": s.samples,
            "checks_run": s.checks_run,
            "violations": s.violations.len(),
            "boundary_cases": s.boundary_cases,
        });
        writeln!(out, "{line}")?;
        for v in &s.violations {
            writeln!(out, "{}", serde_json::to_string(v)?)?;
        }
    }
    Ok(())
}
