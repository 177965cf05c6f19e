//! Subcommand handlers. The split between exit codes follows where the
//! failure happens: anything wrong before a driver starts (flags, config
//! files, input files, dimension mismatches) is a configuration error, and
//! anything after (solver failure, training failure, output write) is a
//! runtime error.

use serde::Serialize;
use serde_json::json;
use std::path::Path;

use wasscert::bounds::{certify, BoundCertificate};
use wasscert::experiments::{
    cells_csv, converge_n, converge_width, local_minimiser_study, rate_fit, AxisSummary,
    ConvergenceSweep, SweepAxis,
};
use wasscert::measures::{sample_points, EmpiricalMeasure, PointCloud, SamplingDistribution};
use wasscert::network::MlpParams;
use wasscert::training::{discrete_loss, train_with, LossTrace, OptimizerMode, TrainedModel};
use wasscert::transport::{
    sinkhorn_with, wasserstein_1d, wasserstein_exact, SinkhornSettings, WassersteinResult,
};

use crate::cli::{Cli, Command, RunArgs, SampleArgs, WassersteinArgs};
use crate::config::{
    load_config, master_seed, CertifyConfig, ConvergeNConfig, ConvergeWidthConfig, DataSource,
    LocalStudyConfig, RateFitConfig, TrainConfig,
};
use crate::error::{runtime_err, CliError};
use crate::persist::{append_line, timestamp_dir, write_json, write_text};

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Sample(args) => sample(&args),
        Command::Wasserstein(args) => wasserstein(&args),
        Command::Train(args) => train(&args),
        Command::Certify(args) => certify_cmd(&args),
        Command::RateFit(args) => rate_fit_cmd(&args),
        Command::ConvergeN(args) => converge_n_cmd(&args),
        Command::ConvergeWidth(args) => converge_width_cmd(&args),
        Command::LocalStudy(args) => local_study_cmd(&args),
    }
}

/// `WASSCERT_THREADS` caps the rayon worker count; unset means machine
/// parallelism.
fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("WASSCERT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::Config(format!(
            "environment variable WASSCERT_THREADS: expected a positive integer, got {raw:?}"
        ))
    })?;
    if n == 0 {
        return Err(CliError::Config(
            "environment variable WASSCERT_THREADS: must be at least 1".into(),
        ));
    }
    // Failure here means a global pool already exists (only possible when
    // run() is called twice in one process); the cap is already in force.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn print_line<T: Serialize>(value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(runtime_err)?;
    println!("{line}");
    Ok(())
}

fn read_points(path: &Path) -> Result<PointCloud, CliError> {
    PointCloud::read_csv(path)
        .map_err(|e| CliError::Config(format!("point file {}: {e}", path.display())))
}

fn sample(args: &SampleArgs) -> Result<(), CliError> {
    let dist: SamplingDistribution = load_config(&args.config)?;
    dist.validate()
        .map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
    if args.n == 0 {
        return Err(CliError::Config("flag --n: must be at least 1".into()));
    }
    let seed = master_seed(args.seed, args.seed_stream);
    let cloud = sample_points(&dist, args.n, seed).map_err(runtime_err)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime_err(format!("cannot create {}: {e}", parent.display())))?;
    }
    cloud.write_csv(&args.out).map_err(runtime_err)?;
    print_line(&json!({
        "points": cloud.len(),
        "dim": cloud.dim(),
        "path": args.out,
    }))
}

fn check_flag(name: &str, value: Option<f64>) -> Result<(), CliError> {
    if let Some(v) = value {
        if !(v.is_finite() && v > 0.0) {
            return Err(CliError::Config(format!(
                "flag {name}: must be positive and finite, got {v}"
            )));
        }
    }
    Ok(())
}

fn wasserstein(args: &WassersteinArgs) -> Result<(), CliError> {
    if !(args.p.is_finite() && args.p >= 1.0) {
        return Err(CliError::Config(format!("flag --p: must satisfy p >= 1, got {}", args.p)));
    }
    check_flag("--epsilon", args.epsilon)?;
    check_flag("--tol", args.tol)?;
    if args.max_iters == Some(0) {
        return Err(CliError::Config("flag --max-iters: must be at least 1".into()));
    }
    let a = read_points(&args.a)?;
    let b = read_points(&args.b)?;
    if a.dim() != b.dim() {
        return Err(CliError::Config(format!(
            "point files have different dimensions: {} is {}-dimensional, {} is {}-dimensional",
            args.a.display(),
            a.dim(),
            args.b.display(),
            b.dim()
        )));
    }
    let mu = EmpiricalMeasure::new(a);
    let nu = EmpiricalMeasure::new(b);
    let result: WassersteinResult = if mu.len() == nu.len() {
        if mu.dim() == 1 {
            wasserstein_1d(&mu, &nu, args.p).map_err(runtime_err)?
        } else {
            wasserstein_exact(&mu, &nu, args.p).map_err(runtime_err)?
        }
    } else {
        let defaults = SinkhornSettings::default();
        let settings = SinkhornSettings {
            epsilon: args.epsilon.or(defaults.epsilon),
            tol: args.tol.unwrap_or(defaults.tol),
            max_iters: args.max_iters.unwrap_or(defaults.max_iters),
        };
        sinkhorn_with(&mu, &nu, args.p, settings).map_err(runtime_err)?
    };
    print_line(&json!({
        "distance": result.distance,
        "method": result.method.to_string(),
        "residual": result.residual,
    }))
}

fn train(args: &RunArgs) -> Result<(), CliError> {
    let cfg: TrainConfig = load_config(&args.config)?;
    cfg.validate()?;
    let seed = master_seed(cfg.seed, cfg.seed_stream);
    let cloud = match &cfg.data {
        DataSource::PointsFile { path } => {
            let cloud = read_points(path)?;
            if cloud.dim() != cfg.network.input_dim() {
                return Err(CliError::Config(format!(
                    "point file {} is {}-dimensional but the network expects {} inputs",
                    path.display(),
                    cloud.dim(),
                    cfg.network.input_dim()
                )));
            }
            cloud
        }
        DataSource::Sampled { dist, n } => sample_points(dist, *n, seed.child(0)).map_err(runtime_err)?,
    };
    let model = train_with(&cfg.network, &cloud, &cfg.target, &cfg.train, seed.child(1))
        .map_err(runtime_err)?;
    let dir = timestamp_dir(&cfg.out_dir, "train")?;
    write_json(&dir.join("config.json"), &cfg)?;
    let model_path = dir.join("model.bin");
    model.params.save(&model_path).map_err(runtime_err)?;
    model.train_points.write_csv(&dir.join("train_points.csv")).map_err(runtime_err)?;
    let mut trace = String::from("iteration,loss,restart\n");
    for (i, loss) in model.trace.per_iteration.iter().enumerate() {
        trace.push_str(&format!("{i},{loss},{}\n", model.trace.restart_index));
    }
    write_text(&dir.join("trace.csv"), &trace)?;
    print_line(&json!({
        "out_dir": dir,
        "model": model_path,
        "final_loss": model.final_loss(),
        "restart": model.trace.restart_index,
        "diverged_restarts": model.diverged_restarts,
    }))
}

fn certificate_csv_row(cert: &BoundCertificate) -> String {
    format!(
        "{}:{},{},{},{},{},{},{},{},{},{}",
        cert.seed.value,
        cert.seed.stream,
        cert.n,
        cert.m_ref,
        cert.p,
        cert.empirical_term,
        cert.lipschitz,
        cert.matching_term,
        cert.bound,
        cert.measured_risk,
        cert.exact
    )
}

fn certify_cmd(args: &RunArgs) -> Result<(), CliError> {
    let cfg: CertifyConfig = load_config(&args.config)?;
    cfg.validate()?;
    let params = MlpParams::load(&cfg.model)
        .map_err(|e| CliError::Config(format!("model file {}: {e}", cfg.model.display())))?;
    let cloud = read_points(&cfg.train_points)?;
    if params.spec().input_dim() != cloud.dim() {
        return Err(CliError::Config(format!(
            "model expects {} inputs but {} is {}-dimensional",
            params.spec().input_dim(),
            cfg.train_points.display(),
            cloud.dim()
        )));
    }
    if cloud.dim() != cfg.dist.dim() {
        return Err(CliError::Config(format!(
            "point file {} is {}-dimensional but `dist` is {}-dimensional",
            cfg.train_points.display(),
            cloud.dim(),
            cfg.dist.dim()
        )));
    }
    let n = cloud.len();
    let m_ref = cfg.m_ref.unwrap_or(n);
    if m_ref == 0 || !m_ref.is_multiple_of(n) {
        return Err(CliError::Config(format!(
            "config key `m_ref`: must be a positive multiple of the training size {n}, got {m_ref}"
        )));
    }
    // The model file stores parameters only; rebuild the trained-model record
    // around them with the loss recomputed from the points it claims.
    let final_loss =
        discrete_loss(|x| params.forward(x).unwrap_or(f64::INFINITY), &cloud, |x| cfg.target.eval(x), cfg.p);
    let spec = params.spec().clone();
    let model = TrainedModel {
        spec,
        params,
        trace: LossTrace { per_iteration: Vec::new(), restart_index: 0, final_loss },
        train_points: cloud,
        order: cfg.p,
        mode: OptimizerMode::BestOfRestarts,
        diverged_restarts: 0,
        spectral_cap_binds: 0,
    };
    let seed = master_seed(cfg.seed, cfg.seed_stream);
    let cert = certify(&model, &cfg.target, &cfg.dist, m_ref, cfg.p, seed).map_err(runtime_err)?;
    let dir = timestamp_dir(&cfg.out_dir, "certify")?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    append_line(
        &cfg.out_dir.join("certify").join("certificates.csv"),
        "seed,N,M_ref,p,empirical_term,lipschitz,matching_term,bound,measured_risk,exact",
        &certificate_csv_row(&cert),
    )?;
    print_line(&cert)
}

fn rate_fit_cmd(args: &RunArgs) -> Result<(), CliError> {
    let cfg: RateFitConfig = load_config(&args.config)?;
    cfg.validate()?;
    let seed = master_seed(cfg.seed, cfg.seed_stream);
    let result = rate_fit(&cfg.dist, cfg.p, &cfg.ns, cfg.reps, seed).map_err(runtime_err)?;
    let dir = timestamp_dir(&cfg.out_dir, "rate-fit")?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_text(&dir.join("cells.csv"), &cells_csv(&result.records))?;
    let summary = json!({
        "ns": result.ns,
        "mean_wp": result.mean_wp,
        "se_wp": result.se_wp,
        "slope": result.fit.slope,
        "slope_se": result.fit.slope_se,
        "intercept": result.fit.intercept,
        "prefactor": result.prefactor,
        // Reference exponent -p/d recorded next to the measured slope; the
        // two agree only in the high-dimension regime, and the report never
        // forces agreement.
        "nominal_exponent": -(cfg.p / cfg.dist.dim() as f64),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    print_line(&summary)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    axis: &'a SweepAxis,
    grid: &'a [usize],
    floor: Option<f64>,
    max_observed_loss: Option<f64>,
    cells: &'a [AxisSummary],
}

fn write_sweep(dir_name: &str, out_dir: &Path, cfg_json: &impl Serialize, sweep: &ConvergenceSweep) -> Result<(), CliError> {
    let dir = timestamp_dir(out_dir, dir_name)?;
    write_json(&dir.join("config.json"), cfg_json)?;
    write_text(&dir.join("cells.csv"), &sweep.cells_csv())?;
    let summary = SweepSummary {
        axis: &sweep.axis,
        grid: &sweep.grid,
        floor: sweep.floor,
        max_observed_loss: sweep.max_observed_loss(),
        cells: &sweep.summary,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    print_line(&summary)
}

fn converge_n_cmd(args: &RunArgs) -> Result<(), CliError> {
    let cfg: ConvergeNConfig = load_config(&args.config)?;
    cfg.validate()?;
    let seed = master_seed(cfg.seed, cfg.seed_stream);
    let sweep = converge_n(
        &cfg.network,
        &cfg.target,
        &cfg.dist,
        &cfg.ns,
        cfg.reps,
        &cfg.train,
        cfg.floor_n,
        seed,
    )
    .map_err(runtime_err)?;
    write_sweep("converge-n", &cfg.out_dir, &cfg, &sweep)
}

fn converge_width_cmd(args: &RunArgs) -> Result<(), CliError> {
    let cfg: ConvergeWidthConfig = load_config(&args.config)?;
    cfg.validate()?;
    let seed = master_seed(cfg.seed, cfg.seed_stream);
    let sweep = converge_width(
        &cfg.widths,
        cfg.activation,
        &cfg.target,
        &cfg.dist,
        &cfg.schedule,
        cfg.reps,
        &cfg.train,
        cfg.risk_samples,
        seed,
    )
    .map_err(runtime_err)?;
    write_sweep("converge-width", &cfg.out_dir, &cfg, &sweep)
}

fn local_study_cmd(args: &RunArgs) -> Result<(), CliError> {
    let cfg: LocalStudyConfig = load_config(&args.config)?;
    cfg.validate()?;
    let seed = master_seed(cfg.seed, cfg.seed_stream);
    let sweep = local_minimiser_study(
        &cfg.network,
        &cfg.target,
        &cfg.dist,
        &cfg.ns,
        cfg.reps,
        &cfg.train,
        cfg.risk_samples,
        seed,
    )
    .map_err(runtime_err)?;
    write_sweep("local-study", &cfg.out_dir, &cfg, &sweep)
}
