//! The acceptance gate: every release-blocking claim, one test per
//! criterion, each printing a single `criterion N: PASS/FAIL` line (visible
//! with `--nocapture`). Criteria 1-9 drive the library directly; criterion 10
//! exercises the compiled binary.

use rand::Rng;
use std::time::Instant;

use wasscert::bounds::certify;
use wasscert::experiments::{converge_n, converge_width, rate_fit, SampleSchedule};
use wasscert::measures::{sample_points, EmpiricalMeasure, PointCloud, SamplingDistribution};
use wasscert::network::{Activation, MlpParams, MlpSpec};
use wasscert::training::{
    discrete_loss, population_risk_estimate, train_with, OptimizerMode, TargetFunction,
    TrainSettings,
};
use wasscert::transport::{
    brute_force_wasserstein, wasserstein_1d, wasserstein_exact, wasserstein_to_dirac,
};
use wasscert::Seed;

fn report(id: u32, pass: bool, detail: String) {
    println!("criterion {id}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

fn uniform(dim: usize) -> SamplingDistribution {
    SamplingDistribution::UniformCube { dim, side: 1.0 }
}

fn random_cloud(rng: &mut impl Rng, n: usize, d: usize) -> EmpiricalMeasure {
    let data = (0..n * d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    EmpiricalMeasure::new(PointCloud::from_flat(d, data).unwrap())
}

#[test]
fn criterion_01_exact_solver_agreement() {
    let start = Instant::now();
    let mut worst_brute = 0.0f64;
    let mut rng = Seed::new(101).rng();
    for k in 0..100 {
        let n = 1 + k % 7;
        let d = 1 + k % 3;
        let p = if k % 2 == 0 { 1.0 } else { 2.0 };
        let mu = random_cloud(&mut rng, n, d);
        let nu = random_cloud(&mut rng, n, d);
        let fast = wasserstein_exact(&mu, &nu, p).unwrap().distance;
        let slow = brute_force_wasserstein(&mu, &nu, p).unwrap().distance;
        worst_brute = worst_brute.max((fast - slow).abs());
    }
    let mut worst_1d = 0.0f64;
    let mut rng = Seed::new(102).rng();
    for k in 0..100 {
        let n = 1 + k % 64;
        let p = if k % 2 == 0 { 1.0 } else { 2.0 };
        let mu = random_cloud(&mut rng, n, 1);
        let nu = random_cloud(&mut rng, n, 1);
        let sorted = wasserstein_1d(&mu, &nu, p).unwrap().distance;
        let assigned = wasserstein_exact(&mu, &nu, p).unwrap().distance;
        worst_1d = worst_1d.max((sorted - assigned).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst_brute <= 1e-12 && worst_1d <= 1e-10 && secs < 10.0,
        format!("brute diff {worst_brute:.2e}, 1-d diff {worst_1d:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_02_metric_axioms() {
    let mut rng = Seed::new(201).rng();
    let mut worst_sym = 0.0f64;
    let mut worst_tri = f64::NEG_INFINITY;
    let mut identity_exact = true;
    for k in 0..200 {
        let n = 1 + k % 16;
        let d = 1 + k % 3;
        let p = if k % 2 == 0 { 1.0 } else { 2.0 };
        let a = random_cloud(&mut rng, n, d);
        let b = random_cloud(&mut rng, n, d);
        let c = random_cloud(&mut rng, n, d);
        let w = |x, y| wasserstein_exact(x, y, p).unwrap().distance;
        identity_exact &= w(&a, &a) == 0.0;
        worst_sym = worst_sym.max((w(&a, &b) - w(&b, &a)).abs());
        worst_tri = worst_tri.max(w(&a, &b) - w(&a, &c) - w(&c, &b));
    }
    report(
        2,
        identity_exact && worst_sym <= 1e-12 && worst_tri <= 1e-9,
        format!(
            "identity exact: {identity_exact}, symmetry {worst_sym:.2e}, triangle excess {worst_tri:.2e}"
        ),
    );
}

#[test]
fn criterion_03_dirac_identity() {
    let mut rng = Seed::new(301).rng();
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = 1 + k % 32;
        let d = 1 + k % 3;
        let p = if k % 2 == 0 { 1.0 } else { 2.0 };
        let mu = random_cloud(&mut rng, n, d);
        let moment = mu
            .cloud()
            .points()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .sum::<f64>()
            / n as f64;
        let expected = moment.powf(1.0 / p);
        let got = wasserstein_to_dirac(&mu, p).unwrap().distance;
        worst = worst.max((got - expected).abs());
    }
    report(3, worst <= 1e-12, format!("max deviation {worst:.2e}"));
}

#[test]
fn criterion_04_certificate_soundness() {
    let start = Instant::now();
    let mut sound = 0usize;
    let mut local_runs = 0usize;
    let mut worst_gap = f64::NEG_INFINITY;
    for k in 0..50u64 {
        let d = 1 + (k % 2) as usize;
        let f = match ((k >> 1) % 2, d) {
            (0, 1) => TargetFunction::AbsOffset { center: vec![0.3] },
            (0, _) => TargetFunction::AbsOffset { center: vec![0.3, 0.6] },
            (_, 1) => TargetFunction::Sinusoid { amplitude: 0.5, frequency: vec![1.0] },
            (_, _) => TargetFunction::Sinusoid { amplitude: 0.5, frequency: vec![1.0, 0.5] },
        };
        let n = if (k >> 2) % 2 == 0 { 64 } else { 256 };
        let mode = if k % 3 == 2 {
            local_runs += 1;
            OptimizerMode::SingleRunLocal
        } else {
            OptimizerMode::BestOfRestarts
        };
        let settings = TrainSettings {
            steps: 600,
            restarts: 2,
            step_size: 0.02,
            mode,
            ..TrainSettings::default()
        };
        let dist = uniform(d);
        let spec = MlpSpec::new(vec![d, 8, 1], Activation::Relu).unwrap();
        let seed = Seed::new(4000 + k);
        let cloud = sample_points(&dist, n, seed.child(0)).unwrap();
        let model = train_with(&spec, &cloud, &f, &settings, seed.child(1)).unwrap();
        let cert = certify(&model, &f, &dist, n, 2.0, seed.child(2)).unwrap();
        assert!(cert.exact, "m_ref = n must take the exact matching path");
        let gap = cert.measured_risk - cert.bound;
        worst_gap = worst_gap.max(gap);
        if gap <= 1e-9 {
            sound += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        sound == 50 && secs < 300.0,
        format!("{sound}/50 sound ({local_runs} single-run-local), worst margin {worst_gap:.2e}, {secs:.0}s"),
    );
}

#[test]
fn criterion_05_expectation_identity() {
    let g_params = MlpParams::init(
        &MlpSpec::new(vec![2, 6, 1], Activation::Tanh).unwrap(),
        &mut Seed::new(501).rng(),
    );
    let g = |x: &[f64]| g_params.forward(x).unwrap();
    let f = TargetFunction::Sinusoid { amplitude: 0.4, frequency: vec![1.0, 0.7] };
    let dist = uniform(2);
    let seed = Seed::new(502);

    let losses: Vec<f64> = (0..200)
        .map(|k| {
            let cloud = sample_points(&dist, 128, seed.child(k)).unwrap();
            discrete_loss(g, &cloud, |x| f.eval(x), 2.0)
        })
        .collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
        / (losses.len() as f64 - 1.0);
    let se_clouds = (var / losses.len() as f64).sqrt();

    let pop = population_risk_estimate(g, &f, &dist, 200_000, 2.0, seed.child(1_000_000)).unwrap();
    let diff = (mean - pop.p_power_mean).abs();
    let band = 3.0 * (se_clouds * se_clouds + pop.p_power_se * pop.p_power_se).sqrt();
    report(
        5,
        diff <= band,
        format!("|{mean:.6} - {:.6}| = {diff:.2e} vs 3 SE = {band:.2e}", pop.p_power_mean),
    );
}

#[test]
fn criterion_06_matching_rates() {
    let start = Instant::now();
    let ns = [64, 128, 256, 512, 1024];
    let one_d = rate_fit(&uniform(1), 1.0, &ns, 200, Seed::new(601)).unwrap();
    let three_d = rate_fit(&uniform(3), 1.0, &ns, 100, Seed::new(603)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let s1 = one_d.fit.slope;
    let s3 = three_d.fit.slope;
    report(
        6,
        (-0.57..=-0.43).contains(&s1) && (-0.40..=-0.26).contains(&s3) && secs < 600.0,
        format!("d=1 slope {s1:.3} (want [-0.57,-0.43]), d=3 slope {s3:.3} (want [-0.40,-0.26]), {secs:.0}s"),
    );
}

#[test]
fn criterion_07_width_convergence() {
    let start = Instant::now();
    let settings = TrainSettings {
        steps: 4000,
        restarts: 5,
        step_size: 0.02,
        ..TrainSettings::default()
    };
    let sweep = converge_width(
        &[4, 16, 64],
        Activation::Relu,
        &TargetFunction::AbsOffset { center: vec![0.5] },
        &uniform(1),
        &SampleSchedule::Fixed { n: 32 },
        4,
        &settings,
        1000,
        Seed::new(701),
    )
    .unwrap();
    let means: Vec<f64> = sweep.summary.iter().map(|c| c.loss.unwrap().mean).collect();
    // 10% slack plus an absolute epsilon so interpolating widths, whose means
    // are denormal-scale optimizer noise, cannot flip the comparison.
    let nonincreasing = means.windows(2).all(|w| w[1] <= 1.1 * w[0] + 1e-12);
    let tiny_at_64 = means[2] <= 1e-3;
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        nonincreasing && tiny_at_64 && secs < 300.0,
        format!("means {:.2e}/{:.2e}/{:.2e}, {secs:.0}s", means[0], means[1], means[2]),
    );
}

#[test]
fn criterion_08_sample_convergence() {
    let start = Instant::now();
    let spec = MlpSpec::new(vec![1, 8, 1], Activation::Relu).unwrap();
    let f = TargetFunction::Sinusoid {
        amplitude: 1.0 / (2.0 * std::f64::consts::PI),
        frequency: vec![1.0],
    };
    // Plateau escape at this width is an init lottery (units whose kink
    // never migrates stay dead); long runs and many restarts make every
    // repetition converge, not just the floor.
    let settings = TrainSettings {
        steps: 20_000,
        restarts: 8,
        step_size: 0.05,
        ..TrainSettings::default()
    };
    let sweep = converge_n(
        &spec,
        &f,
        &uniform(1),
        &[64, 256, 1024],
        3,
        &settings,
        8192,
        Seed::new(801),
    )
    .unwrap();
    let floor = sweep.floor.unwrap();
    let at_largest = sweep.summary.last().unwrap().loss.unwrap().mean;
    let bound = 1.5 * floor + 1e-3;
    let secs = start.elapsed().as_secs_f64();
    report(
        8,
        at_largest <= bound,
        format!("mean loss at N=1024 {at_largest:.2e} vs 1.5*floor+1e-3 = {bound:.2e} (floor {floor:.2e}), {secs:.0}s"),
    );
}

#[test]
fn criterion_09_gradient_correctness() {
    let spec = MlpSpec::new(vec![2, 6, 4, 1], Activation::Tanh).unwrap();
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let seed = Seed::new(900 + k);
        let params = MlpParams::init(&spec, &mut seed.rng());
        let mut rng = seed.child(1).rng();
        let x = [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
        let bp = params.output_gradient(&x).unwrap().to_flat();
        let flat = params.to_flat();
        let h = 1e-5;
        let fd: Vec<f64> = (0..flat.len())
            .map(|i| {
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let up = MlpParams::from_flat(&spec, &plus).unwrap().forward(&x).unwrap();
                let down = MlpParams::from_flat(&spec, &minus).unwrap().forward(&x).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff = bp.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm = bp.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    report(9, worst <= 1e-6, format!("worst relative error {worst:.2e}"));
}

#[test]
fn criterion_10_binary_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_wasscert");

    let rate_cfg = dir.path().join("rate.json");
    std::fs::write(
        &rate_cfg,
        format!(
            r#"{{"dist": {{"kind": "uniform-cube", "dim": 1}}, "p": 1.0, "ns": [4, 6, 8, 10], "reps": 20, "seed": 10, "out_dir": {:?}}}"#,
            dir.path().join("results")
        ),
    )
    .unwrap();
    let train_cfg = dir.path().join("train.json");
    std::fs::write(
        &train_cfg,
        format!(
            r#"{{
  "data": {{"kind": "sampled", "dist": {{"kind": "uniform-cube", "dim": 1}}, "n": 16}},
  "target": {{"kind": "abs-offset", "center": [0.5]}},
  "network": {{"layer_dims": [1, 6, 1], "activation": "relu"}},
  "train": {{"steps": 400, "restarts": 2}},
  "seed": 10,
  "out_dir": {:?}
}}"#,
            dir.path().join("results")
        ),
    )
    .unwrap();
    for cfg in [&rate_cfg, &train_cfg, &rate_cfg, &train_cfg] {
        let sub = if cfg == &rate_cfg { "rate-fit" } else { "train" };
        let out = std::process::Command::new(bin)
            .arg(sub)
            .arg("--config")
            .arg(cfg)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read_pair = |name: &str, file: &str| -> (Vec<u8>, Vec<u8>) {
        let mut runs: Vec<_> = std::fs::read_dir(dir.path().join("results").join(name))
            .unwrap()
            .map(|e| e.unwrap().path().join(file))
            .collect();
        runs.sort();
        assert_eq!(runs.len(), 2);
        (std::fs::read(&runs[0]).unwrap(), std::fs::read(&runs[1]).unwrap())
    };
    let (cells_a, cells_b) = read_pair("rate-fit", "cells.csv");
    let (model_a, model_b) = read_pair("train", "model.bin");
    report(
        10,
        cells_a == cells_b && model_a == model_b && !cells_a.is_empty() && !model_a.is_empty(),
        format!(
            "cells.csv identical: {}, model.bin identical: {}",
            cells_a == cells_b,
            model_a == model_b
        ),
    );
}
