//! Experiment orchestration: the eta-scaling study for the perturbed linear
//! model, the ambient-dimension scaling of random Jacobians, the
//! near-isometric end-to-end study, randomized bound sweeps, quantile
//! aggregation, and log-log slope fitting.
//!
//! Every task derives its generator from (seed, grid index, run index), so
//! reports are bit-identical for any worker count.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ica::{
    alpha_population, reference_wbar, reference_wtilde_exact, run_ica, sign_aligned_distance,
    ContrastFunction, SolveOptions, SolverKind,
};
use crate::metrics::{self, BoundCertificate};
use crate::model::{
    self, estimate_theta, jacobian_of_mixing, make_cubic_perturbation, make_smooth_bump, mix,
    random_gaussian_jacobians, random_mixing_matrix, random_rotation, sample_sources, MixingModel,
    Perturbation, SourceFamily, SourceSpec,
};
use crate::rng;
use crate::whiten::{apply_whitener, fit_whitener};

const TAG_GRID_TASK: u64 = 101;
const TAG_FLOOR_TASK: u64 = 102;
const TAG_SPEC: u64 = 103;
const TAG_MIXING: u64 = 104;
const TAG_INSTANCE: u64 = 105;

pub const METRIC_W_BAR: &str = "w_dist_wbar";
pub const METRIC_W_TILDE: &str = "w_dist_wtilde";
pub const METRIC_ONE_MINUS_MCC: &str = "one_minus_mcc";
pub const METRIC_CONVERGED: &str = "converged";
pub const METRIC_THETA2: &str = "theta2";
pub const METRIC_GRAM_DEV: &str = "gram_dev";
pub const METRIC_MCC_VS_THETA: &str = "one_minus_mcc_vs_theta2";

/// Which quantity a report sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Eta,
    AmbientDim,
}

impl SweepVar {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::Eta => "eta",
            SweepVar::AmbientDim => "ambient_dim",
        }
    }
}

/// One raw measurement: `(sweep value, run, row, metric, value)`.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub sweep_value: f64,
    pub run: usize,
    pub row: usize,
    pub metric: &'static str,
    pub value: f64,
}

/// Aggregated statistics of one metric at one sweep value.
#[derive(Debug, Clone)]
pub struct SummaryRecord {
    pub sweep_value: f64,
    pub metric: &'static str,
    pub median: f64,
    pub q32: f64,
    pub q68: f64,
    pub mean: f64,
}

/// Fitted log-log regression line for one metric.
#[derive(Debug, Clone)]
pub struct SlopeRecord {
    pub metric: String,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub fit_lo: f64,
    pub fit_hi: f64,
}

/// Full result of one sweep experiment.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub sweep: SweepVar,
    pub grid: Vec<f64>,
    pub raw: Vec<RawRecord>,
    pub summary: Vec<SummaryRecord>,
    pub slopes: Vec<SlopeRecord>,
    /// (metric, sweep value) pairs whose median sits on the sampling floor.
    pub floored: Vec<(&'static str, f64)>,
    /// Noise floor per metric, measured by eta = 0 calibration runs.
    pub floor_levels: Vec<(&'static str, f64)>,
    pub config_echo: String,
    pub seeds: Vec<u64>,
    pub converged_fraction: f64,
}

impl ScalingReport {
    pub fn summary_for(&self, metric: &str, sweep_value: f64) -> Option<&SummaryRecord> {
        self.summary
            .iter()
            .find(|s| s.metric == metric && s.sweep_value == sweep_value)
    }

    pub fn slope_for(&self, metric: &str) -> Option<&SlopeRecord> {
        self.slopes.iter().find(|s| s.metric == metric)
    }

    pub fn is_floored(&self, metric: &str, sweep_value: f64) -> bool {
        self.floored
            .iter()
            .any(|(m, v)| *m == metric && *v == sweep_value)
    }
}

/// Log-spaced grid with `count` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (llo + (lhi - llo) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Default eta grid: quarter-decade steps below the fit window, a dense
/// ladder inside [0.01, 0.09] (the extremum detaches from its reference
/// around eta ~ 0.1 at d = 5, so the window interior carries the signal and
/// the top of the ladder stays attached), and sparse saturation points
/// above.
pub fn default_eta_grid() -> Vec<f64> {
    let mut g = vec![1e-3, 1.778e-3, 3.162e-3, 5.623e-3];
    g.extend([0.01, 0.0147, 0.0215, 0.0316, 0.0464, 0.055, 0.064, 0.0743, 0.0862]);
    g.extend([0.178, 0.42, 1.0]);
    g
}

/// Iso-ICA default grid; same structure, stopping at 0.3 so the perturbed
/// Jacobian stays uniformly full rank.
pub fn default_iso_eta_grid() -> Vec<f64> {
    let mut g = vec![1e-3, 1.778e-3, 3.162e-3, 5.623e-3];
    g.extend([0.01, 0.0147, 0.0215, 0.0316, 0.0464, 0.055, 0.064, 0.0743, 0.0862]);
    g.extend([0.15, 0.3]);
    g
}

/// Ordinary least squares of `ln y` on `ln x` over points with `x` in
/// `[range.0, range.1]`. Intercepts are natural-log based.
#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_loglog_slope(points: &[(f64, f64)], range: (f64, f64)) -> Result<SlopeFit> {
    let selected: Vec<(f64, f64)> = points
        .iter()
        .cloned()
        .filter(|(x, _)| *x >= range.0 && *x <= range.1)
        .collect();
    if selected.len() < 3 {
        return Err(Error::TooFewFitPoints {
            count: selected.len(),
        });
    }
    for &(x, y) in &selected {
        if !(x > 0.0) || !(y > 0.0) {
            return Err(Error::NonPositiveFitPoint { x, y });
        }
    }
    let n = selected.len() as f64;
    let lx: Vec<f64> = selected.iter().map(|(x, _)| x.ln()).collect();
    let ly: Vec<f64> = selected.iter().map(|(_, y)| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidParameter {
            context: "log-log fit needs distinct x values".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let p = intercept + slope * x;
            (y - p) * (y - p)
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(SlopeFit { slope, intercept, r2 })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn summarize(sweep_value: f64, metric: &'static str, values: &[f64]) -> SummaryRecord {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = if sorted.is_empty() {
        f64::NAN
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    };
    SummaryRecord {
        sweep_value,
        metric,
        median: quantile(&sorted, 0.5),
        q32: quantile(&sorted, 0.32),
        q68: quantile(&sorted, 0.68),
        mean,
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

fn validate_eta_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter {
            context: "eta grid must not be empty".into(),
        });
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter {
                context: "eta grid must be strictly increasing".into(),
            });
        }
    }
    if grid[0] <= 0.0 || *grid.last().unwrap() > 1.0 {
        return Err(Error::InvalidParameter {
            context: "eta grid must lie in (0, 1]".into(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eta scaling (perturbed linear ICA)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EtaScalingConfig {
    pub d: usize,
    pub n: usize,
    pub eta_grid: Vec<f64>,
    pub runs: usize,
    pub contrast: ContrastFunction,
    pub family: SourceFamily,
    pub solver: SolverKind,
    pub seed: u64,
    /// Monte Carlo draws behind the w_tilde correction terms.
    pub ref_mc: usize,
    pub fit_range: (f64, f64),
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
    /// Grid medians below `floor_factor x (eta = 0 level)` are marked
    /// floor-dominated and excluded from slope fits.
    pub floor_factor: f64,
    /// Per-mille of failed row solves tolerated before the run errors.
    pub max_failure_permille: usize,
    pub jobs: usize,
}

impl Default for EtaScalingConfig {
    fn default() -> Self {
        EtaScalingConfig {
            d: 5,
            n: 200_000,
            eta_grid: default_eta_grid(),
            runs: 5,
            contrast: ContrastFunction::Quartic,
            family: SourceFamily::Laplace,
            solver: SolverKind::FastIca,
            seed: 7,
            ref_mc: 1_000_000,
            fit_range: (0.01, 0.1),
            tol: 1e-10,
            max_iter: 500,
            step: 0.05,
            floor_factor: 3.0,
            max_failure_permille: 50,
            jobs: 0,
        }
    }
}

struct EtaRowOut {
    converged: bool,
    dist_wbar: f64,
    dist_wtilde: f64,
}

struct EtaTaskOut {
    task_seed: u64,
    rows: Vec<EtaRowOut>,
    one_minus_mcc: f64,
}

fn eta_pipeline_task(
    cfg: &EtaScalingConfig,
    eta: f64,
    task_seed: u64,
    cubic: &model::CubicCoeffs,
    ascent_signs: &Option<Vec<f64>>,
) -> Result<EtaTaskOut> {
    let spec = SourceSpec::iid(
        cfg.d,
        cfg.family.clone(),
        rng::mix(task_seed, &[TAG_SPEC]),
    );
    let a = random_mixing_matrix(cfg.d, rng::mix(task_seed, &[TAG_MIXING]))?;
    let model = MixingModel::new(a.clone(), eta, Perturbation::Cubic(cubic.clone()))?;
    let s = sample_sources(&spec, cfg.n);
    let x = mix(&model, &s)?;
    let whitener = fit_whitener(&x)?;
    let z = apply_whitener(&whitener, &x)?;

    let w_bar = reference_wbar(&a)?;
    let (w_tilde, _, _) = reference_wtilde(&a, cfg.contrast, &model, &spec, cfg.ref_mc)?;

    let options = SolveOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        step: cfg.step,
        ascent_signs: ascent_signs.clone(),
    };
    let est = run_ica(cfg.contrast, &z, &w_bar, cfg.solver, &options)?;

    let s_hat = est.unmix(&z);
    let mcc = metrics::mcc(&s, &s_hat)?;

    let rows = (0..cfg.d)
        .map(|i| {
            let w = est.w_rows.row(i).to_owned();
            EtaRowOut {
                converged: est.converged[i],
                dist_wbar: sign_aligned_distance(&w, &w_bar.row(i).to_owned()),
                dist_wtilde: sign_aligned_distance(&w, &w_tilde.row(i).to_owned()),
            }
        })
        .collect();
    Ok(EtaTaskOut {
        task_seed,
        rows,
        one_minus_mcc: 1.0 - mcc.mcc,
    })
}

/// Figure-style eta sweep: sample, mix, whiten, solve from the oracle
/// initialization, and record `|w - w_bar|`, `|w - w_tilde|`, `1 - MCC`.
pub fn run_eta_scaling(cfg: &EtaScalingConfig) -> Result<ScalingReport> {
    validate_eta_grid(&cfg.eta_grid)?;
    if cfg.runs == 0 {
        return Err(Error::InvalidParameter {
            context: "runs must be >= 1".into(),
        });
    }
    let cubic = make_cubic_perturbation(&SourceSpec::iid(cfg.d, cfg.family.clone(), 0))?;
    let ascent_signs = match cfg.solver {
        SolverKind::FastIca => None,
        SolverKind::Gradient => {
            let probe = SourceSpec::iid(cfg.d, cfg.family.clone(), 0);
            Some(
                (0..cfg.d)
                    .map(|i| alpha_population(cfg.contrast, &probe, i).signum())
                    .collect(),
            )
        }
    };

    // grid tasks plus one eta = 0 calibration task per run
    let mut tasks: Vec<(Option<usize>, usize)> = Vec::new();
    for gi in 0..cfg.eta_grid.len() {
        for run in 0..cfg.runs {
            tasks.push((Some(gi), run));
        }
    }
    for run in 0..cfg.runs {
        tasks.push((None, run));
    }

    let outcomes: Result<Vec<EtaTaskOut>> = with_pool(cfg.jobs, || {
        tasks
            .par_iter()
            .map(|&(gi, run)| {
                let (eta, tag, idx) = match gi {
                    Some(g) => (cfg.eta_grid[g], TAG_GRID_TASK, g as u64),
                    None => (0.0, TAG_FLOOR_TASK, 0),
                };
                let task_seed = rng::mix(cfg.seed, &[tag, idx, run as u64]);
                eta_pipeline_task(cfg, eta, task_seed, &cubic, &ascent_signs)
            })
            .collect()
    });
    let outcomes = outcomes?;
    let n_grid_tasks = cfg.eta_grid.len() * cfg.runs;
    let (grid_out, floor_out) = outcomes.split_at(n_grid_tasks);

    // convergence accounting over grid tasks only
    let total_rows = n_grid_tasks * cfg.d;
    let failed = grid_out
        .iter()
        .flat_map(|t| t.rows.iter())
        .filter(|r| !r.converged)
        .count();
    let converged_fraction = 1.0 - failed as f64 / total_rows as f64;
    if failed * 1000 > total_rows * cfg.max_failure_permille {
        return Err(Error::TooManySolverFailures {
            failed,
            total: total_rows,
            permille_limit: cfg.max_failure_permille,
        });
    }

    // floors from the eta = 0 runs (w_tilde = w_bar there, shared floor)
    let mut floor_wdist = Vec::new();
    let mut floor_mcc = Vec::new();
    for t in floor_out {
        for r in &t.rows {
            if r.converged {
                floor_wdist.push(r.dist_wbar);
            }
        }
        floor_mcc.push(t.one_minus_mcc);
    }
    floor_wdist.sort_by(f64::total_cmp);
    floor_mcc.sort_by(f64::total_cmp);
    let floor_levels = vec![
        (METRIC_W_BAR, quantile(&floor_wdist, 0.5)),
        (METRIC_W_TILDE, quantile(&floor_wdist, 0.5)),
        (METRIC_ONE_MINUS_MCC, quantile(&floor_mcc, 0.5)),
    ];

    // raw records in fixed order
    let mut raw = Vec::new();
    let mut seeds = Vec::new();
    for gi in 0..cfg.eta_grid.len() {
        let eta = cfg.eta_grid[gi];
        for run in 0..cfg.runs {
            let t = &grid_out[gi * cfg.runs + run];
            seeds.push(t.task_seed);
            for (row, r) in t.rows.iter().enumerate() {
                raw.push(RawRecord {
                    sweep_value: eta,
                    run,
                    row,
                    metric: METRIC_CONVERGED,
                    value: if r.converged { 1.0 } else { 0.0 },
                });
            }
            for (row, r) in t.rows.iter().enumerate() {
                if r.converged {
                    raw.push(RawRecord {
                        sweep_value: eta,
                        run,
                        row,
                        metric: METRIC_W_BAR,
                        value: r.dist_wbar,
                    });
                    raw.push(RawRecord {
                        sweep_value: eta,
                        run,
                        row,
                        metric: METRIC_W_TILDE,
                        value: r.dist_wtilde,
                    });
                }
            }
            raw.push(RawRecord {
                sweep_value: eta,
                run,
                row: 0,
                metric: METRIC_ONE_MINUS_MCC,
                value: t.one_minus_mcc,
            });
        }
    }

    // summaries and floor marking
    let mut summary = Vec::new();
    let mut floored = Vec::new();
    for (gi, &eta) in cfg.eta_grid.iter().enumerate() {
        let tasks = &grid_out[gi * cfg.runs..(gi + 1) * cfg.runs];
        let wbar_vals: Vec<f64> = tasks
            .iter()
            .flat_map(|t| t.rows.iter().filter(|r| r.converged).map(|r| r.dist_wbar))
            .collect();
        let wtilde_vals: Vec<f64> = tasks
            .iter()
            .flat_map(|t| t.rows.iter().filter(|r| r.converged).map(|r| r.dist_wtilde))
            .collect();
        let mcc_vals: Vec<f64> = tasks.iter().map(|t| t.one_minus_mcc).collect();
        for (metric, vals) in [
            (METRIC_W_BAR, wbar_vals),
            (METRIC_W_TILDE, wtilde_vals),
            (METRIC_ONE_MINUS_MCC, mcc_vals),
        ] {
            let rec = summarize(eta, metric, &vals);
            let floor = floor_levels
                .iter()
                .find(|(m, _)| *m == metric)
                .map(|(_, v)| *v)
                .unwrap_or(0.0);
            if rec.median <= cfg.floor_factor * floor {
                floored.push((metric, eta));
            }
            summary.push(rec);
        }
    }

    // slope fits on non-floored medians
    let mut slopes = Vec::new();
    for metric in [METRIC_W_BAR, METRIC_W_TILDE, METRIC_ONE_MINUS_MCC] {
        let pts: Vec<(f64, f64)> = cfg
            .eta_grid
            .iter()
            .filter(|&&eta| !floored.iter().any(|(m, v)| *m == metric && *v == eta))
            .map(|&eta| {
                let rec = summary
                    .iter()
                    .find(|s| s.metric == metric && s.sweep_value == eta)
                    .unwrap();
                (eta, rec.median)
            })
            .collect();
        match fit_loglog_slope(&pts, cfg.fit_range) {
            Ok(fit) => slopes.push(SlopeRecord {
                metric: metric.to_string(),
                slope: fit.slope,
                intercept: fit.intercept,
                r2: fit.r2,
                fit_lo: cfg.fit_range.0,
                fit_hi: cfg.fit_range.1,
            }),
            Err(e) => log::warn!("slope fit for {metric} skipped: {e}"),
        }
    }

    let config_echo = eta_config_echo(cfg, &floor_levels, &floored, converged_fraction, &seeds);
    Ok(ScalingReport {
        sweep: SweepVar::Eta,
        grid: cfg.eta_grid.clone(),
        raw,
        summary,
        slopes,
        floored,
        floor_levels,
        config_echo,
        seeds,
        converged_fraction,
    })
}

fn eta_config_echo(
    cfg: &EtaScalingConfig,
    floors: &[(&'static str, f64)],
    floored: &[(&'static str, f64)],
    converged_fraction: f64,
    seeds: &[u64],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "subcommand=scaling");
    let _ = writeln!(s, "d={}", cfg.d);
    let _ = writeln!(s, "samples={}", cfg.n);
    let _ = writeln!(s, "runs={}", cfg.runs);
    let _ = writeln!(s, "eta_grid={}", join_f64(&cfg.eta_grid));
    let _ = writeln!(s, "contrast={}", cfg.contrast.name());
    let _ = writeln!(s, "family={}", cfg.family.name());
    let _ = writeln!(
        s,
        "solver={}",
        match cfg.solver {
            SolverKind::FastIca => "fastica",
            SolverKind::Gradient => "gradient",
        }
    );
    let _ = writeln!(s, "seed={}", cfg.seed);
    let _ = writeln!(s, "ref_mc={}", cfg.ref_mc);
    let _ = writeln!(s, "fit_lo={}", cfg.fit_range.0);
    let _ = writeln!(s, "fit_hi={}", cfg.fit_range.1);
    let _ = writeln!(s, "tol={}", cfg.tol);
    let _ = writeln!(s, "max_iter={}", cfg.max_iter);
    let _ = writeln!(s, "step={}", cfg.step);
    let _ = writeln!(s, "floor_factor={}", cfg.floor_factor);
    append_audit(&mut s, floors, floored, converged_fraction, seeds);
    s
}

fn append_audit(
    s: &mut String,
    floors: &[(&'static str, f64)],
    floored: &[(&'static str, f64)],
    converged_fraction: f64,
    seeds: &[u64],
) {
    let _ = writeln!(s, "# audit");
    for (m, v) in floors {
        let _ = writeln!(s, "# floor {m}={v}");
    }
    for (m, v) in floored {
        let _ = writeln!(s, "# floor-dominated {m}@{v}");
    }
    let _ = writeln!(s, "# converged_fraction={converged_fraction}");
    let _ = writeln!(
        s,
        "# task_seeds={}",
        seeds
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

// ---------------------------------------------------------------------------
// ambient-dimension scaling (random Gaussian Jacobians)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DimScalingConfig {
    pub d: usize,
    pub big_d_grid: Vec<usize>,
    pub mc_points: usize,
    pub runs: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for DimScalingConfig {
    fn default() -> Self {
        DimScalingConfig {
            d: 5,
            big_d_grid: vec![16, 32, 64, 128, 256],
            mc_points: 10_000,
            runs: 3,
            seed: 7,
            jobs: 0,
        }
    }
}

struct DimTaskOut {
    task_seed: u64,
    theta2: f64,
    gram_dev: f64,
}

/// Theta_2 of `1/sqrt(D)`-scaled Gaussian Jacobians as the ambient dimension
/// grows, plus the Gram deviation `E |(1/D) Df^T Df - Id|_F^2`.
pub fn run_dim_scaling(cfg: &DimScalingConfig) -> Result<ScalingReport> {
    if cfg.big_d_grid.is_empty() || cfg.runs == 0 || cfg.mc_points == 0 {
        return Err(Error::InvalidParameter {
            context: "dim scaling needs a grid, runs >= 1 and mc_points >= 1".into(),
        });
    }
    for w in cfg.big_d_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter {
                context: "ambient dimension grid must be strictly increasing".into(),
            });
        }
    }
    if cfg.big_d_grid[0] < cfg.d {
        return Err(Error::InvalidParameter {
            context: format!("ambient dimensions must be >= d = {}", cfg.d),
        });
    }

    let mut tasks = Vec::new();
    for gi in 0..cfg.big_d_grid.len() {
        for run in 0..cfg.runs {
            tasks.push((gi, run));
        }
    }
    let outcomes: Result<Vec<DimTaskOut>> = with_pool(cfg.jobs, || {
        tasks
            .par_iter()
            .map(|&(gi, run)| {
                let big_d = cfg.big_d_grid[gi];
                let task_seed = rng::mix(cfg.seed, &[TAG_GRID_TASK, gi as u64, run as u64]);
                let mut n = 0usize;
                let mut theta_mean = 0.0f64;
                let mut gram_acc = 0.0f64;
                for j in random_gaussian_jacobians(cfg.d, big_d, cfg.mc_points, task_seed)? {
                    let f = crate::linalg::svd(&j);
                    let smin = f.sigma[f.sigma.len() - 1];
                    if smin < model::JACOBIAN_SIGMA_MIN {
                        return Err(Error::RankDeficient { sigma_min: smin });
                    }
                    let fwd = crate::linalg::so_defect(&f.sigma);
                    let inv = crate::linalg::so_defect(&f.sigma.mapv(|s| 1.0 / s));
                    let integrand = fwd * fwd + inv * inv;
                    n += 1;
                    theta_mean += (integrand - theta_mean) / n as f64;
                    // |J^T J - Id|_F^2 through the spectrum
                    gram_acc += f.sigma.iter().map(|s| (s * s - 1.0) * (s * s - 1.0)).sum::<f64>();
                }
                Ok(DimTaskOut {
                    task_seed,
                    theta2: theta_mean.max(0.0).sqrt(),
                    gram_dev: gram_acc / n as f64,
                })
            })
            .collect()
    });
    let outcomes = outcomes?;

    let mut raw = Vec::new();
    let mut seeds = Vec::new();
    let mut summary = Vec::new();
    for (gi, &big_d) in cfg.big_d_grid.iter().enumerate() {
        let dv = big_d as f64;
        let tasks = &outcomes[gi * cfg.runs..(gi + 1) * cfg.runs];
        for (run, t) in tasks.iter().enumerate() {
            seeds.push(t.task_seed);
            raw.push(RawRecord {
                sweep_value: dv,
                run,
                row: 0,
                metric: METRIC_THETA2,
                value: t.theta2,
            });
            raw.push(RawRecord {
                sweep_value: dv,
                run,
                row: 0,
                metric: METRIC_GRAM_DEV,
                value: t.gram_dev,
            });
        }
        let theta_vals: Vec<f64> = tasks.iter().map(|t| t.theta2).collect();
        let gram_vals: Vec<f64> = tasks.iter().map(|t| t.gram_dev).collect();
        summary.push(summarize(dv, METRIC_THETA2, &theta_vals));
        summary.push(summarize(dv, METRIC_GRAM_DEV, &gram_vals));
    }

    let full_range = (
        cfg.big_d_grid[0] as f64,
        *cfg.big_d_grid.last().unwrap() as f64,
    );
    let mut slopes = Vec::new();
    for metric in [METRIC_THETA2, METRIC_GRAM_DEV] {
        let pts: Vec<(f64, f64)> = cfg
            .big_d_grid
            .iter()
            .map(|&big_d| {
                let rec = summary
                    .iter()
                    .find(|s| s.metric == metric && s.sweep_value == big_d as f64)
                    .unwrap();
                (big_d as f64, rec.median)
            })
            .collect();
        match fit_loglog_slope(&pts, full_range) {
            Ok(fit) => slopes.push(SlopeRecord {
                metric: metric.to_string(),
                slope: fit.slope,
                intercept: fit.intercept,
                r2: fit.r2,
                fit_lo: full_range.0,
                fit_hi: full_range.1,
            }),
            Err(e) => log::warn!("slope fit for {metric} skipped: {e}"),
        }
    }

    let mut config_echo = String::new();
    let _ = writeln!(config_echo, "subcommand=dim-scaling");
    let _ = writeln!(config_echo, "d={}", cfg.d);
    let _ = writeln!(
        config_echo,
        "big_d_grid={}",
        cfg.big_d_grid
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(config_echo, "mc_points={}", cfg.mc_points);
    let _ = writeln!(config_echo, "runs={}", cfg.runs);
    let _ = writeln!(config_echo, "seed={}", cfg.seed);
    append_audit(&mut config_echo, &[], &[], 1.0, &seeds);

    Ok(ScalingReport {
        sweep: SweepVar::AmbientDim,
        grid: cfg.big_d_grid.iter().map(|&v| v as f64).collect(),
        raw,
        summary,
        slopes,
        floored: Vec::new(),
        floor_levels: Vec::new(),
        config_echo,
        seeds,
        converged_fraction: 1.0,
    })
}

// ---------------------------------------------------------------------------
// near-isometric end-to-end study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IsoIcaConfig {
    pub d: usize,
    pub n: usize,
    pub eta_grid: Vec<f64>,
    pub runs: usize,
    pub contrast: ContrastFunction,
    pub family: SourceFamily,
    pub seed: u64,
    pub theta_mc: usize,
    pub fit_range: (f64, f64),
    pub tol: f64,
    pub max_iter: usize,
    pub floor_factor: f64,
    pub max_failure_permille: usize,
    pub jobs: usize,
}

impl Default for IsoIcaConfig {
    fn default() -> Self {
        IsoIcaConfig {
            d: 5,
            n: 200_000,
            eta_grid: default_iso_eta_grid(),
            runs: 5,
            contrast: ContrastFunction::Quartic,
            family: SourceFamily::Laplace,
            seed: 7,
            theta_mc: 5_000,
            fit_range: (0.01, 0.1),
            tol: 1e-10,
            max_iter: 500,
            floor_factor: 3.0,
            max_failure_permille: 50,
            jobs: 0,
        }
    }
}

struct IsoTaskOut {
    task_seed: u64,
    converged: Vec<bool>,
    dist_wbar: Vec<f64>,
    one_minus_mcc: f64,
    theta2: f64,
}

fn iso_task(
    cfg: &IsoIcaConfig,
    eta: f64,
    task_seed: u64,
    bump: &model::BumpCoeffs,
) -> Result<IsoTaskOut> {
    let spec = SourceSpec::iid(
        cfg.d,
        cfg.family.clone(),
        rng::mix(task_seed, &[TAG_SPEC]),
    );
    let q = random_rotation(cfg.d, rng::mix(task_seed, &[TAG_MIXING]))?;
    let model = MixingModel::new(q.clone(), eta, Perturbation::SmoothBump(bump.clone()))?;
    let s = sample_sources(&spec, cfg.n);
    let x = mix(&model, &s)?;
    let whitener = fit_whitener(&x)?;
    let z = apply_whitener(&whitener, &x)?;

    let w_bar = reference_wbar(&q)?;
    let options = SolveOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..SolveOptions::default()
    };
    let est = run_ica(cfg.contrast, &z, &w_bar, SolverKind::FastIca, &options)?;
    let s_hat = est.unmix(&z);
    let mcc = metrics::mcc(&s, &s_hat)?;

    let theta = if eta == 0.0 {
        0.0
    } else {
        let pts_spec = spec.with_seed(rng::mix(task_seed, &[rng::tag::THETA_POINTS]));
        let pts = sample_sources(&pts_spec, cfg.theta_mc);
        estimate_theta(&jacobian_of_mixing(&model), &pts, 2.0)?.value
    };

    let dist_wbar = (0..cfg.d)
        .map(|i| sign_aligned_distance(&est.w_rows.row(i).to_owned(), &w_bar.row(i).to_owned()))
        .collect();
    Ok(IsoTaskOut {
        task_seed,
        converged: est.converged.clone(),
        dist_wbar,
        one_minus_mcc: 1.0 - mcc.mcc,
        theta2: theta,
    })
}

/// Near-isometric end-to-end study at D = d: mixing `f(s) = Q s + eta psi(s)`
/// with a rotation Q and a bounded smooth decorrelated field psi; records
/// Theta_2 and `1 - MCC` and fits `log(1 - MCC)` against `log Theta_2`.
pub fn run_iso_ica(cfg: &IsoIcaConfig) -> Result<ScalingReport> {
    validate_eta_grid(&cfg.eta_grid)?;
    if cfg.runs == 0 {
        return Err(Error::InvalidParameter {
            context: "runs must be >= 1".into(),
        });
    }
    // mild slope variety across coordinates; deterministic
    let slopes_vec: Vec<f64> = (0..cfg.d)
        .map(|j| 1.0 + 0.4 * j as f64 / (cfg.d.max(2) - 1) as f64)
        .collect();
    let shifts = vec![0.0; cfg.d];
    let probe = SourceSpec::iid(cfg.d, cfg.family.clone(), 0);
    let bump = make_smooth_bump(&probe, &slopes_vec, &shifts)?;

    let mut tasks: Vec<(Option<usize>, usize)> = Vec::new();
    for gi in 0..cfg.eta_grid.len() {
        for run in 0..cfg.runs {
            tasks.push((Some(gi), run));
        }
    }
    for run in 0..cfg.runs {
        tasks.push((None, run));
    }
    let outcomes: Result<Vec<IsoTaskOut>> = with_pool(cfg.jobs, || {
        tasks
            .par_iter()
            .map(|&(gi, run)| {
                let (eta, tag, idx) = match gi {
                    Some(g) => (cfg.eta_grid[g], TAG_GRID_TASK, g as u64),
                    None => (0.0, TAG_FLOOR_TASK, 0),
                };
                let task_seed = rng::mix(cfg.seed, &[tag, idx, run as u64]);
                iso_task(cfg, eta, task_seed, &bump)
            })
            .collect()
    });
    let outcomes = outcomes?;
    let n_grid_tasks = cfg.eta_grid.len() * cfg.runs;
    let (grid_out, floor_out) = outcomes.split_at(n_grid_tasks);

    let total_rows = n_grid_tasks * cfg.d;
    let failed = grid_out
        .iter()
        .flat_map(|t| t.converged.iter())
        .filter(|c| !**c)
        .count();
    let converged_fraction = 1.0 - failed as f64 / total_rows as f64;
    if failed * 1000 > total_rows * cfg.max_failure_permille {
        return Err(Error::TooManySolverFailures {
            failed,
            total: total_rows,
            permille_limit: cfg.max_failure_permille,
        });
    }

    let mut floor_mcc: Vec<f64> = floor_out.iter().map(|t| t.one_minus_mcc).collect();
    floor_mcc.sort_by(f64::total_cmp);
    let mut floor_wdist: Vec<f64> = floor_out
        .iter()
        .flat_map(|t| {
            t.converged
                .iter()
                .zip(&t.dist_wbar)
                .filter(|(c, _)| **c)
                .map(|(_, d)| *d)
        })
        .collect();
    floor_wdist.sort_by(f64::total_cmp);
    let floor_levels = vec![
        (METRIC_W_BAR, quantile(&floor_wdist, 0.5)),
        (METRIC_ONE_MINUS_MCC, quantile(&floor_mcc, 0.5)),
    ];

    let mut raw = Vec::new();
    let mut seeds = Vec::new();
    for (gi, &eta) in cfg.eta_grid.iter().enumerate() {
        for run in 0..cfg.runs {
            let t = &grid_out[gi * cfg.runs + run];
            seeds.push(t.task_seed);
            for row in 0..cfg.d {
                raw.push(RawRecord {
                    sweep_value: eta,
                    run,
                    row,
                    metric: METRIC_CONVERGED,
                    value: if t.converged[row] { 1.0 } else { 0.0 },
                });
            }
            for row in 0..cfg.d {
                if t.converged[row] {
                    raw.push(RawRecord {
                        sweep_value: eta,
                        run,
                        row,
                        metric: METRIC_W_BAR,
                        value: t.dist_wbar[row],
                    });
                }
            }
            raw.push(RawRecord {
                sweep_value: eta,
                run,
                row: 0,
                metric: METRIC_ONE_MINUS_MCC,
                value: t.one_minus_mcc,
            });
            raw.push(RawRecord {
                sweep_value: eta,
                run,
                row: 0,
                metric: METRIC_THETA2,
                value: t.theta2,
            });
        }
    }

    let mut summary = Vec::new();
    let mut floored = Vec::new();
    for (gi, &eta) in cfg.eta_grid.iter().enumerate() {
        let tasks = &grid_out[gi * cfg.runs..(gi + 1) * cfg.runs];
        let wbar_vals: Vec<f64> = tasks
            .iter()
            .flat_map(|t| {
                t.converged
                    .iter()
                    .zip(&t.dist_wbar)
                    .filter(|(c, _)| **c)
                    .map(|(_, d)| *d)
            })
            .collect();
        let mcc_vals: Vec<f64> = tasks.iter().map(|t| t.one_minus_mcc).collect();
        let theta_vals: Vec<f64> = tasks.iter().map(|t| t.theta2).collect();
        for (metric, vals) in [
            (METRIC_W_BAR, wbar_vals),
            (METRIC_ONE_MINUS_MCC, mcc_vals),
            (METRIC_THETA2, theta_vals),
        ] {
            let rec = summarize(eta, metric, &vals);
            let floor = floor_levels
                .iter()
                .find(|(m, _)| *m == metric)
                .map(|(_, v)| *v)
                .unwrap_or(0.0);
            if floor > 0.0 && rec.median <= cfg.floor_factor * floor {
                floored.push((metric, eta));
            }
            summary.push(rec);
        }
    }

    let mut slopes = Vec::new();
    // theta2 and 1 - MCC against eta
    for metric in [METRIC_THETA2, METRIC_ONE_MINUS_MCC] {
        let pts: Vec<(f64, f64)> = cfg
            .eta_grid
            .iter()
            .filter(|&&eta| !floored.iter().any(|(m, v)| *m == metric && *v == eta))
            .map(|&eta| {
                let rec = summary
                    .iter()
                    .find(|s| s.metric == metric && s.sweep_value == eta)
                    .unwrap();
                (eta, rec.median)
            })
            .collect();
        match fit_loglog_slope(&pts, cfg.fit_range) {
            Ok(fit) => slopes.push(SlopeRecord {
                metric: metric.to_string(),
                slope: fit.slope,
                intercept: fit.intercept,
                r2: fit.r2,
                fit_lo: cfg.fit_range.0,
                fit_hi: cfg.fit_range.1,
            }),
            Err(e) => log::warn!("slope fit for {metric} skipped: {e}"),
        }
    }
    // 1 - MCC against Theta_2 over non-floored points inside the eta range
    let cross_pts: Vec<(f64, f64)> = cfg
        .eta_grid
        .iter()
        .filter(|&&eta| {
            eta >= cfg.fit_range.0
                && eta <= cfg.fit_range.1
                && !floored
                    .iter()
                    .any(|(m, v)| *m == METRIC_ONE_MINUS_MCC && *v == eta)
        })
        .map(|&eta| {
            let th = summary
                .iter()
                .find(|s| s.metric == METRIC_THETA2 && s.sweep_value == eta)
                .unwrap()
                .median;
            let mc = summary
                .iter()
                .find(|s| s.metric == METRIC_ONE_MINUS_MCC && s.sweep_value == eta)
                .unwrap()
                .median;
            (th, mc)
        })
        .collect();
    if !cross_pts.is_empty() {
        let lo = cross_pts.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
        let hi = cross_pts.iter().map(|(x, _)| *x).fold(0.0f64, f64::max);
        match fit_loglog_slope(&cross_pts, (lo, hi)) {
            Ok(fit) => slopes.push(SlopeRecord {
                metric: METRIC_MCC_VS_THETA.to_string(),
                slope: fit.slope,
                intercept: fit.intercept,
                r2: fit.r2,
                fit_lo: lo,
                fit_hi: hi,
            }),
            Err(e) => log::warn!("slope fit for {METRIC_MCC_VS_THETA} skipped: {e}"),
        }
    }

    let mut config_echo = String::new();
    let _ = writeln!(config_echo, "subcommand=iso-ica");
    let _ = writeln!(config_echo, "d={}", cfg.d);
    let _ = writeln!(config_echo, "samples={}", cfg.n);
    let _ = writeln!(config_echo, "runs={}", cfg.runs);
    let _ = writeln!(config_echo, "eta_grid={}", join_f64(&cfg.eta_grid));
    let _ = writeln!(config_echo, "contrast={}", cfg.contrast.name());
    let _ = writeln!(config_echo, "family={}", cfg.family.name());
    let _ = writeln!(config_echo, "seed={}", cfg.seed);
    let _ = writeln!(config_echo, "theta_mc={}", cfg.theta_mc);
    let _ = writeln!(config_echo, "fit_lo={}", cfg.fit_range.0);
    let _ = writeln!(config_echo, "fit_hi={}", cfg.fit_range.1);
    let _ = writeln!(config_echo, "tol={}", cfg.tol);
    let _ = writeln!(config_echo, "max_iter={}", cfg.max_iter);
    let _ = writeln!(config_echo, "floor_factor={}", cfg.floor_factor);
    append_audit(&mut config_echo, &floor_levels, &floored, converged_fraction, &seeds);

    Ok(ScalingReport {
        sweep: SweepVar::Eta,
        grid: cfg.eta_grid.clone(),
        raw,
        summary,
        slopes,
        floored,
        floor_levels,
        config_echo,
        seeds,
        converged_fraction,
    })
}

// ---------------------------------------------------------------------------
// randomized bound sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BoundSweepConfig {
    pub instances: usize,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// true: decorrelated residuals, squared-constant bound; false:
    /// correlated residuals, linear-constant bound.
    pub decorrelated: bool,
    pub jobs: usize,
}

impl Default for BoundSweepConfig {
    fn default() -> Self {
        BoundSweepConfig {
            instances: 1000,
            n: 100_000,
            d: 5,
            seed: 7,
            decorrelated: true,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundSweepReport {
    pub instances: usize,
    /// Certificates violated beyond the 4/sqrt(n) sampling slack.
    pub violations: usize,
    /// min over instances of observed - (bound - slack).
    pub min_margin: f64,
    pub mean_observed: f64,
    pub mean_bound: f64,
    pub config_echo: String,
}

/// One randomized instance satisfying the bound hypotheses.
fn bound_instance(cfg: &BoundSweepConfig, k: usize) -> Result<BoundCertificate> {
    use rand::Rng;
    let seed = rng::mix(cfg.seed, &[rng::tag::BOUND_SWEEP, TAG_INSTANCE, k as u64]);
    let mut r = rng::stream_for(seed, &[0]);
    let spec = SourceSpec::iid(cfg.d, SourceFamily::Laplace, rng::mix(seed, &[1]));
    let z = sample_sources(&spec, cfg.n);

    // diagonally dominant A = Id + delta G
    let delta = 0.25 * r.gen::<f64>() / (cfg.d as f64).sqrt();
    let mut a = Array2::<f64>::eye(cfg.d);
    for i in 0..cfg.d {
        for j in 0..cfg.d {
            let g: f64 = r.sample(rand_distr::StandardNormal);
            a[[i, j]] += delta * g;
        }
    }
    let eta = 0.3 * r.gen::<f64>();
    let h = if cfg.decorrelated {
        let cubic = make_cubic_perturbation(&spec)?;
        let model = MixingModel::new(Array2::eye(cfg.d), 1.0, Perturbation::Cubic(cubic))?;
        model.apply_h(&z) * eta
    } else {
        // raw cubes, normalized to unit power but correlated with z
        let scale = 1.0 / SourceFamily::Laplace.moment(6).sqrt();
        z.mapv(|v| eta * scale * v * v * v)
    };
    if cfg.decorrelated {
        metrics::verify_mcc_bound_independent(&z, &a, &h)
    } else {
        metrics::verify_mcc_bound_general(&z, &a, &h)
    }
}

/// Randomized sweep of the MCC lower-bound certificates.
pub fn run_bound_sweep(cfg: &BoundSweepConfig) -> Result<BoundSweepReport> {
    if cfg.instances == 0 {
        return Err(Error::InvalidParameter {
            context: "bound sweep needs instances >= 1".into(),
        });
    }
    let certs: Result<Vec<BoundCertificate>> = with_pool(cfg.jobs, || {
        (0..cfg.instances)
            .into_par_iter()
            .map(|k| bound_instance(cfg, k))
            .collect()
    });
    let certs = certs?;
    let mut violations = 0usize;
    let mut min_margin = f64::INFINITY;
    let mut sum_obs = 0.0;
    let mut sum_bound = 0.0;
    for c in &certs {
        let margin = c.observed_mcc - (c.bound_value - c.sampling_slack);
        if margin < 0.0 {
            violations += 1;
        }
        min_margin = min_margin.min(margin);
        sum_obs += c.observed_mcc;
        sum_bound += c.bound_value;
    }
    let mut config_echo = String::new();
    let _ = writeln!(config_echo, "subcommand=verify-bounds");
    let _ = writeln!(config_echo, "instances={}", cfg.instances);
    let _ = writeln!(config_echo, "samples={}", cfg.n);
    let _ = writeln!(config_echo, "d={}", cfg.d);
    let _ = writeln!(config_echo, "seed={}", cfg.seed);
    let _ = writeln!(config_echo, "decorrelated={}", cfg.decorrelated);
    let _ = writeln!(config_echo, "# violations={violations}");
    let _ = writeln!(config_echo, "# min_margin={min_margin}");
    Ok(BoundSweepReport {
        instances: cfg.instances,
        violations,
        min_margin,
        mean_observed: sum_obs / cfg.instances as f64,
        mean_bound: sum_bound / cfg.instances as f64,
        config_echo,
    })
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

/// Write `raw.csv`, `summary.csv`, `slopes.csv` and `config.txt` under `dir`.
/// Output is byte-deterministic for a given report.
pub fn write_report_csvs(report: &ScalingReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let sweep = report.sweep.name();

    let mut raw = String::from("sweep_var,value,run,row,metric,metric_value\n");
    for r in &report.raw {
        let _ = writeln!(
            raw,
            "{sweep},{},{},{},{},{}",
            r.sweep_value, r.run, r.row, r.metric, r.value
        );
    }
    std::fs::write(dir.join("raw.csv"), raw)?;

    let mut summary = String::from("sweep_var,value,metric,median,q32,q68\n");
    for s in &report.summary {
        let _ = writeln!(
            summary,
            "{sweep},{},{},{},{},{}",
            s.sweep_value, s.metric, s.median, s.q32, s.q68
        );
    }
    std::fs::write(dir.join("summary.csv"), summary)?;

    let mut slopes = String::from("metric,slope,intercept,r2,fit_lo,fit_hi\n");
    for s in &report.slopes {
        let _ = writeln!(
            slopes,
            "{},{},{},{},{},{}",
            s.metric, s.slope, s.intercept, s.r2, s.fit_lo, s.fit_hi
        );
    }
    std::fs::write(dir.join("slopes.csv"), slopes)?;

    std::fs::write(dir.join("config.txt"), &report.config_echo)?;
    Ok(())
}
