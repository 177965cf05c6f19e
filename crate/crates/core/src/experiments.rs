//! Experiment drivers behind the CLI: empirical matching rates, fixed-width
//! convergence in the sample count, width sweeps, and the local-minimiser
//! study. Each driver expands into independent (cell, repetition) jobs run on
//! the rayon pool and folded back in (cell, rep) order, so results depend
//! only on the master seed, never on scheduling.

use crate::bounds::{certify, BoundCertificate, BoundsError, MeanSe};
use crate::measures::{sample_points, EmpiricalMeasure, MeasureError, SamplingDistribution};
use crate::network::{Activation, MlpSpec, NetworkError};
use crate::seed::Seed;
use crate::training::{
    population_risk_estimate, train_with, OptimizerMode, TargetFunction, TrainSettings,
    TrainingError,
};
use crate::transport::{check_order, wasserstein_1d, wasserstein_exact, TransportError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentsError {
    #[error("{axis} grid must be non-empty and strictly increasing")]
    GridNotIncreasing { axis: &'static str },
    #[error("need at least {need} grid points, got {got}")]
    TooFewGridPoints { got: usize, need: usize },
    #[error("sample count {n} must be even for the paired-sample estimator")]
    OddSampleCount { n: usize },
    #[error("need at least {need} repetitions, got {got}")]
    TooFewReps { got: usize, need: usize },
    #[error("log-log fit refused: {reason}")]
    DegenerateFit { reason: String },
    #[error("floor budget {floor_n} must exceed the largest grid value {max_n}")]
    FloorBudgetTooSmall { floor_n: usize, max_n: usize },
    #[error("sample schedule has {ns} entries for {widths} widths")]
    ScheduleLengthMismatch { widths: usize, ns: usize },
    #[error("local minimiser study requires single-run-local optimizer mode")]
    NotLocalMode,
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// One (grid cell, repetition) outcome. `loss` is `None` when every restart
/// of that cell's training run diverged; the other optional columns are
/// filled only by drivers that compute them. `seed` is the job seed, from
/// which the cell's cloud (child 0) and training run (child 1) re-derive.
#[derive(Clone, Debug, Serialize)]
pub struct CellRecord {
    pub axis_value: usize,
    pub rep: usize,
    pub loss: Option<f64>,
    pub risk: Option<f64>,
    pub risk_se: Option<f64>,
    pub wp: Option<f64>,
    pub seed: Seed,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<BoundCertificate>,
}

pub const CELLS_CSV_HEADER: &str = "axis_value,rep,loss,risk,risk_se,wp,seed";

fn opt_column(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl CellRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}:{}",
            self.axis_value,
            self.rep,
            opt_column(self.loss),
            opt_column(self.risk),
            opt_column(self.risk_se),
            opt_column(self.wp),
            self.seed.value,
            self.seed.stream,
        )
    }
}

pub fn cells_csv(records: &[CellRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CELLS_CSV_HEADER);
    out.push('\n');
    for record in records {
        out.push_str(&record.csv_row());
        out.push('\n');
    }
    out
}

/// Least-squares line through (ln x, ln y) with the slope's standard error
/// propagated from the per-point SEs by the delta method.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
}

pub fn fit_log_log(ns: &[usize], means: &[f64], ses: &[f64]) -> Result<LineFit, ExperimentsError> {
    if ns.len() < 4 {
        return Err(ExperimentsError::TooFewGridPoints { got: ns.len(), need: 4 });
    }
    debug_assert!(ns.len() == means.len() && ns.len() == ses.len());
    for (&n, &m) in ns.iter().zip(means) {
        if !(m.is_finite() && m > 0.0) {
            return Err(ExperimentsError::DegenerateFit {
                reason: format!("mean at N = {n} is {m}; logs need positive finite means"),
            });
        }
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|&m| m.ln()).collect();
    let k = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / k;
    let y_bar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    if sxx == 0.0 {
        return Err(ExperimentsError::DegenerateFit {
            reason: "all grid values coincide".to_string(),
        });
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    // Var(ln mean_i) ~ (se_i / mean_i)^2; the slope is a linear combination
    // with coefficients (x_i - x_bar)/sxx.
    let var: f64 = xs
        .iter()
        .zip(means.iter().zip(ses))
        .map(|(x, (&m, &se))| {
            let a = (x - x_bar) / sxx;
            let rel = se / m;
            a * a * rel * rel
        })
        .sum();
    Ok(LineFit { slope, slope_se: var.sqrt(), intercept: y_bar - slope * x_bar })
}

/// Measured decay of the expected matching distance with the sample count.
#[derive(Clone, Debug, Serialize)]
pub struct RateFitResult {
    pub ns: Vec<usize>,
    pub mean_wp: Vec<f64>,
    pub se_wp: Vec<f64>,
    pub fit: LineFit,
    /// exp(intercept): the measured constant in mean ~ prefactor * N^slope.
    pub prefactor: f64,
    pub records: Vec<CellRecord>,
}

/// W_p between two independent size-n empirical draws, by the exact solver
/// (order statistics in one dimension, assignment otherwise).
pub fn two_sample_distance(
    dist: &SamplingDistribution,
    n: usize,
    p: f64,
    seed_a: Seed,
    seed_b: Seed,
) -> Result<f64, ExperimentsError> {
    let a = EmpiricalMeasure::new(sample_points(dist, n, seed_a)?);
    let b = EmpiricalMeasure::new(sample_points(dist, n, seed_b)?);
    let w = if dist.dim() == 1 { wasserstein_1d(&a, &b, p)? } else { wasserstein_exact(&a, &b, p)? };
    Ok(w.distance)
}

fn job_seed(master: Seed, cell: usize, rep: usize) -> Seed {
    master.child(((cell as u64) << 32) | rep as u64)
}

fn check_strictly_increasing(grid: &[usize], axis: &'static str) -> Result<(), ExperimentsError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentsError::GridNotIncreasing { axis });
    }
    Ok(())
}

/// Estimate E[W_p(mu, mu_N)] on a grid of N by the two-sample surrogate and
/// fit its log-log decay.
pub fn rate_fit(
    dist: &SamplingDistribution,
    p: f64,
    ns: &[usize],
    reps: usize,
    seed: Seed,
) -> Result<RateFitResult, ExperimentsError> {
    check_strictly_increasing(ns, "sample-count")?;
    if ns.len() < 4 {
        return Err(ExperimentsError::TooFewGridPoints { got: ns.len(), need: 4 });
    }
    if let Some(&n) = ns.iter().find(|&&n| n % 2 != 0) {
        return Err(ExperimentsError::OddSampleCount { n });
    }
    if reps < 20 {
        return Err(ExperimentsError::TooFewReps { got: reps, need: 20 });
    }
    check_order(p)?;
    dist.validate()?;

    let jobs: Vec<(usize, usize)> =
        (0..ns.len()).flat_map(|ci| (0..reps).map(move |rep| (ci, rep))).collect();
    let outcomes: Vec<Result<CellRecord, ExperimentsError>> = jobs
        .par_iter()
        .map(|&(ci, rep)| {
            let js = job_seed(seed, ci, rep);
            let w = two_sample_distance(dist, ns[ci], p, js.child(0), js.child(1))?;
            Ok(CellRecord {
                axis_value: ns[ci],
                rep,
                loss: None,
                risk: None,
                risk_se: None,
                wp: Some(w),
                seed: js,
                certificate: None,
            })
        })
        .collect();
    let mut records = Vec::with_capacity(jobs.len());
    for outcome in outcomes {
        records.push(outcome?);
    }

    let mut mean_wp = Vec::with_capacity(ns.len());
    let mut se_wp = Vec::with_capacity(ns.len());
    for chunk in records.chunks_exact(reps) {
        let values: Vec<f64> = chunk.iter().map(|r| r.wp.expect("rate cells carry wp")).collect();
        let stat = MeanSe::from_samples(&values);
        mean_wp.push(stat.mean);
        se_wp.push(stat.se);
    }
    let fit = fit_log_log(ns, &mean_wp, &se_wp)?;
    Ok(RateFitResult {
        ns: ns.to_vec(),
        mean_wp,
        se_wp,
        fit,
        prefactor: fit.intercept.exp(),
        records,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    SampleCount,
    Width,
}

/// Per-axis-value aggregate over the valid repetitions. Aggregates are `None`
/// when every repetition of that value failed.
#[derive(Clone, Debug, Serialize)]
pub struct AxisSummary {
    pub axis_value: usize,
    pub valid_reps: usize,
    pub failed_reps: usize,
    pub loss: Option<MeanSe>,
    pub risk: Option<MeanSe>,
    pub wp: Option<MeanSe>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceSweep {
    pub axis: SweepAxis,
    pub grid: Vec<usize>,
    pub records: Vec<CellRecord>,
    pub summary: Vec<AxisSummary>,
    /// Best-approximation proxy: final loss of the high-budget floor run,
    /// when the driver computes one.
    pub floor: Option<f64>,
}

impl ConvergenceSweep {
    pub fn cells_csv(&self) -> String {
        cells_csv(&self.records)
    }

    /// Largest loss over all valid cells: the empirical uniform bound the
    /// local-minimiser study reports.
    pub fn max_observed_loss(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.loss).fold(None, |acc, l| {
            Some(match acc {
                Some(a) if a >= l => a,
                _ => l,
            })
        })
    }
}

fn summarize(grid: &[usize], records: &[CellRecord], reps: usize) -> Vec<AxisSummary> {
    let column = |chunk: &[CellRecord], get: fn(&CellRecord) -> Option<f64>| {
        let values: Vec<f64> = chunk.iter().filter_map(get).collect();
        (!values.is_empty()).then(|| MeanSe::from_samples(&values))
    };
    grid.iter()
        .zip(records.chunks_exact(reps))
        .map(|(&axis_value, chunk)| {
            let valid = chunk.iter().filter(|r| r.loss.is_some()).count();
            AxisSummary {
                axis_value,
                valid_reps: valid,
                failed_reps: reps - valid,
                loss: column(chunk, |r| r.loss),
                risk: column(chunk, |r| r.risk),
                wp: column(chunk, |r| r.wp),
            }
        })
        .collect()
}

/// Train one cell: fresh cloud from child 0, training run from child 1,
/// optional risk estimate from child 2, optional exact certificate (reference
/// count = cell size) from child 3. A cell whose every restart diverges is
/// recorded as a failure, not an error.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    spec: &MlpSpec,
    f: &TargetFunction,
    dist: &SamplingDistribution,
    n: usize,
    axis_value: usize,
    rep: usize,
    settings: &TrainSettings,
    risk_samples: Option<usize>,
    with_certificate: bool,
    js: Seed,
) -> Result<CellRecord, ExperimentsError> {
    let failed = |js| CellRecord {
        axis_value,
        rep,
        loss: None,
        risk: None,
        risk_se: None,
        wp: None,
        seed: js,
        certificate: None,
    };
    let cloud = sample_points(dist, n, js.child(0))?;
    let model = match train_with(spec, &cloud, f, settings, js.child(1)) {
        Ok(model) => model,
        Err(TrainingError::AllRestartsDiverged { .. }) => return Ok(failed(js)),
        Err(e) => return Err(e.into()),
    };
    let (risk, risk_se) = match risk_samples {
        Some(m) => {
            let est =
                population_risk_estimate(|x| model.eval(x), f, dist, m, settings.p, js.child(2))?;
            (Some(est.lp_norm), Some(est.lp_se(settings.p)))
        }
        None => (None, None),
    };
    let certificate =
        if with_certificate { Some(certify(&model, f, dist, n, settings.p, js.child(3))?) } else { None };
    let loss = model.trace.final_loss;
    debug_assert!(loss >= 0.0);
    Ok(CellRecord {
        axis_value,
        rep,
        loss: Some(loss),
        risk,
        risk_se,
        wp: certificate.as_ref().map(|c| c.matching_term),
        seed: js,
        certificate,
    })
}

fn collect_cells<F>(grid_len: usize, reps: usize, job: F) -> Result<Vec<CellRecord>, ExperimentsError>
where
    F: Fn(usize, usize) -> Result<CellRecord, ExperimentsError> + Sync,
{
    let jobs: Vec<(usize, usize)> =
        (0..grid_len).flat_map(|ci| (0..reps).map(move |rep| (ci, rep))).collect();
    let outcomes: Vec<Result<CellRecord, ExperimentsError>> =
        jobs.par_iter().map(|&(ci, rep)| job(ci, rep)).collect();
    let mut records = Vec::with_capacity(jobs.len());
    for outcome in outcomes {
        records.push(outcome?);
    }
    Ok(records)
}

const FLOOR_TAG: u64 = u64::MAX;

/// Fixed architecture, growing sample count. The floor is the final loss of
/// a boosted-budget run at `floor_n`, standing in for the architecture's
/// best approximation error.
#[allow(clippy::too_many_arguments)]
pub fn converge_n(
    spec: &MlpSpec,
    f: &TargetFunction,
    dist: &SamplingDistribution,
    ns: &[usize],
    reps: usize,
    settings: &TrainSettings,
    floor_n: usize,
    seed: Seed,
) -> Result<ConvergenceSweep, ExperimentsError> {
    check_strictly_increasing(ns, "sample-count")?;
    if reps < 1 {
        return Err(ExperimentsError::TooFewReps { got: reps, need: 1 });
    }
    settings.validate()?;
    f.validate()?;
    dist.validate()?;
    let max_n = *ns.last().expect("grid checked non-empty");
    if floor_n <= max_n {
        return Err(ExperimentsError::FloorBudgetTooSmall { floor_n, max_n });
    }

    let records = collect_cells(ns.len(), reps, |ci, rep| {
        run_cell(spec, f, dist, ns[ci], ns[ci], rep, settings, None, false, job_seed(seed, ci, rep))
    })?;

    let floor_seed = seed.child(FLOOR_TAG);
    let floor_cloud = sample_points(dist, floor_n, floor_seed.child(0))?;
    let floor_model = train_with(spec, &floor_cloud, f, &settings.boosted(), floor_seed.child(1))?;

    let summary = summarize(ns, &records, reps);
    Ok(ConvergenceSweep {
        axis: SweepAxis::SampleCount,
        grid: ns.to_vec(),
        records,
        summary,
        floor: Some(floor_model.trace.final_loss),
    })
}

/// How the training-set size follows the width grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SampleSchedule {
    Fixed { n: usize },
    /// One sample count per width, in grid order. Drivers report population
    /// risks alongside losses for this variant, since the interesting claim
    /// is risk decay as width and data grow together.
    PerWidth { ns: Vec<usize> },
}

/// Single-hidden-layer family [d, w, 1] over a width grid.
#[allow(clippy::too_many_arguments)]
pub fn converge_width(
    widths: &[usize],
    activation: Activation,
    f: &TargetFunction,
    dist: &SamplingDistribution,
    schedule: &SampleSchedule,
    reps: usize,
    settings: &TrainSettings,
    risk_samples: usize,
    seed: Seed,
) -> Result<ConvergenceSweep, ExperimentsError> {
    check_strictly_increasing(widths, "width")?;
    if reps < 1 {
        return Err(ExperimentsError::TooFewReps { got: reps, need: 1 });
    }
    settings.validate()?;
    f.validate()?;
    dist.validate()?;
    let cell_n = |ci: usize| match schedule {
        SampleSchedule::Fixed { n } => *n,
        SampleSchedule::PerWidth { ns } => ns[ci],
    };
    if let SampleSchedule::PerWidth { ns } = schedule {
        if ns.len() != widths.len() {
            return Err(ExperimentsError::ScheduleLengthMismatch {
                widths: widths.len(),
                ns: ns.len(),
            });
        }
    }
    let with_risk = matches!(schedule, SampleSchedule::PerWidth { .. }).then_some(risk_samples);
    let specs: Vec<MlpSpec> = widths
        .iter()
        .map(|&w| MlpSpec::new(vec![dist.dim(), w, 1], activation))
        .collect::<Result<_, _>>()?;

    let records = collect_cells(widths.len(), reps, |ci, rep| {
        run_cell(
            &specs[ci],
            f,
            dist,
            cell_n(ci),
            widths[ci],
            rep,
            settings,
            with_risk,
            false,
            job_seed(seed, ci, rep),
        )
    })?;

    let summary = summarize(widths, &records, reps);
    Ok(ConvergenceSweep {
        axis: SweepAxis::Width,
        grid: widths.to_vec(),
        records,
        summary,
        floor: None,
    })
}

/// Single-run local training across a sample-count grid, with per-run risk
/// estimates and exact certificates so the loss/risk relationship of local
/// minimisers can be read off directly.
#[allow(clippy::too_many_arguments)]
pub fn local_minimiser_study(
    spec: &MlpSpec,
    f: &TargetFunction,
    dist: &SamplingDistribution,
    ns: &[usize],
    reps: usize,
    settings: &TrainSettings,
    risk_samples: usize,
    seed: Seed,
) -> Result<ConvergenceSweep, ExperimentsError> {
    if settings.mode != OptimizerMode::SingleRunLocal {
        return Err(ExperimentsError::NotLocalMode);
    }
    check_strictly_increasing(ns, "sample-count")?;
    if reps < 1 {
        return Err(ExperimentsError::TooFewReps { got: reps, need: 1 });
    }
    settings.validate()?;
    f.validate()?;
    dist.validate()?;

    let records = collect_cells(ns.len(), reps, |ci, rep| {
        run_cell(
            spec,
            f,
            dist,
            ns[ci],
            ns[ci],
            rep,
            settings,
            Some(risk_samples),
            true,
            job_seed(seed, ci, rep),
        )
    })?;

    let summary = summarize(ns, &records, reps);
    Ok(ConvergenceSweep {
        axis: SweepAxis::SampleCount,
        grid: ns.to_vec(),
        records,
        summary,
        floor: None,
    })
}
