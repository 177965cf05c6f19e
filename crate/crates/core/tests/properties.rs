//! Randomised checks of the library's structural guarantees: metric axioms,
//! solver agreement across independent routes, exact scaling laws, and the
//! certificate inequality for arbitrary networks.

use proptest::prelude::*;
use wasscert::bounds::certify;
use wasscert::measures::{pushforward_residual, EmpiricalMeasure, PointCloud, SamplingDistribution};
use wasscert::network::{spectral_norm, Activation, MlpParams, MlpSpec};
use wasscert::training::{
    best_constant, discrete_loss, LossTrace, OptimizerMode, TargetFunction, TrainedModel,
};
use wasscert::transport::{
    brute_force_wasserstein, wasserstein_1d, wasserstein_exact, wasserstein_to_dirac,
};
use wasscert::Seed;

fn cloud(dim: usize, n: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(-1.0..1.0f64, dim * n)
        .prop_map(move |data| PointCloud::from_flat(dim, data).unwrap())
}

fn cloud_pair(max_dim: usize, max_n: usize) -> impl Strategy<Value = (PointCloud, PointCloud)> {
    (1..=max_dim, 1..=max_n).prop_flat_map(|(d, n)| (cloud(d, n), cloud(d, n)))
}

fn cloud_triple(
    max_dim: usize,
    max_n: usize,
) -> impl Strategy<Value = (PointCloud, PointCloud, PointCloud)> {
    (1..=max_dim, 1..=max_n).prop_flat_map(|(d, n)| (cloud(d, n), cloud(d, n), cloud(d, n)))
}

fn order() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0)]
}

fn measure(c: PointCloud) -> EmpiricalMeasure {
    EmpiricalMeasure::new(c)
}

proptest! {
    #[test]
    fn metric_axioms((a, b, c) in cloud_triple(3, 8), p in order()) {
        let (mu, nu, rho) = (measure(a), measure(b), measure(c));
        prop_assert_eq!(wasserstein_exact(&mu, &mu, p).unwrap().distance, 0.0);
        let ab = wasserstein_exact(&mu, &nu, p).unwrap().distance;
        let ba = wasserstein_exact(&nu, &mu, p).unwrap().distance;
        prop_assert!((ab - ba).abs() <= 1e-12);
        let ac = wasserstein_exact(&mu, &rho, p).unwrap().distance;
        let cb = wasserstein_exact(&rho, &nu, p).unwrap().distance;
        prop_assert!(ab <= ac + cb + 1e-9, "triangle broke: {} > {} + {}", ab, ac, cb);
    }

    #[test]
    fn sorted_pairing_matches_assignment((a, b) in cloud_pair(1, 32), p in order()) {
        let (mu, nu) = (measure(a), measure(b));
        let fast = wasserstein_1d(&mu, &nu, p).unwrap().distance;
        let exact = wasserstein_exact(&mu, &nu, p).unwrap().distance;
        prop_assert!((fast - exact).abs() <= 1e-10, "1d {} vs assignment {}", fast, exact);
    }

    #[test]
    fn exhaustive_search_matches_assignment((a, b) in cloud_pair(3, 6), p in order()) {
        let (mu, nu) = (measure(a), measure(b));
        let brute = brute_force_wasserstein(&mu, &nu, p).unwrap().distance;
        let exact = wasserstein_exact(&mu, &nu, p).unwrap().distance;
        prop_assert!((brute - exact).abs() <= 1e-12, "brute {} vs assignment {}", brute, exact);
    }

    #[test]
    fn dyadic_scaling_is_exact((a, b) in cloud_pair(3, 8), p in order()) {
        // Doubling every coordinate doubles distances without rounding, so
        // the same pairing wins and the value doubles bit-for-bit.
        let scale = |c: &PointCloud| {
            PointCloud::from_flat(c.dim(), c.as_flat().iter().map(|v| 2.0 * v).collect()).unwrap()
        };
        let (sa, sb) = (scale(&a), scale(&b));
        let w = wasserstein_exact(&measure(a), &measure(b), p).unwrap().distance;
        let sw = wasserstein_exact(&measure(sa), &measure(sb), p).unwrap().distance;
        prop_assert_eq!(2.0 * w, sw);
    }

    #[test]
    fn dirac_distance_agrees_with_replicated_assignment(a in cloud(2, 6).no_shrink(), p in order()) {
        // Independent route: transporting to n copies of the origin is the
        // same problem the closed-form Dirac case solves.
        let n = a.len();
        let origin = PointCloud::from_flat(2, vec![0.0; 2 * n]).unwrap();
        let direct = wasserstein_to_dirac(&measure(a.clone()), p).unwrap().distance;
        let assigned = wasserstein_exact(&measure(a), &measure(origin), p).unwrap().distance;
        prop_assert!((direct - assigned).abs() <= 1e-12, "dirac {} vs assigned {}", direct, assigned);
    }

    #[test]
    fn order_one_never_exceeds_order_two((a, b) in cloud_pair(3, 8)) {
        let (mu, nu) = (measure(a), measure(b));
        let w1 = wasserstein_exact(&mu, &nu, 1.0).unwrap().distance;
        let w2 = wasserstein_exact(&mu, &nu, 2.0).unwrap().distance;
        prop_assert!(w1 <= w2 + 1e-12, "W1 {} above W2 {}", w1, w2);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(c in cloud(3, 10)) {
        let back = PointCloud::from_csv_str(&c.to_csv_string()).unwrap();
        prop_assert_eq!(back.dim(), c.dim());
        prop_assert_eq!(back.as_flat(), c.as_flat());
    }

    #[test]
    fn residual_moment_equals_discrete_loss(
        c in cloud(2, 10),
        p in order(),
        coeffs in prop::array::uniform4(-2.0..2.0f64),
    ) {
        let [a, b, s, t] = coeffs;
        let g = |x: &[f64]| a * x[0] + b * x.iter().map(|v| v * v).sum::<f64>();
        let f = |x: &[f64]| s * x[0] + t;
        let loss = discrete_loss(g, &c, f, p);
        let moment = pushforward_residual(g, f, &measure(c)).unwrap().pth_absolute_moment(p);
        prop_assert!((moment - loss).abs() <= 1e-12 * loss.max(1.0), "moment {} vs loss {}", moment, loss);
    }

    #[test]
    fn constant_fit_beats_every_probe(
        values in prop::collection::vec(-10.0..10.0f64, 1..12),
        p in order(),
        probe in -10.0..10.0f64,
    ) {
        let c = PointCloud::from_flat(1, values.clone()).unwrap();
        let target = |x: &[f64]| x[0];
        let best = best_constant(&values, p);
        let at = |v: f64| discrete_loss(move |_| v, &c, target, p);
        prop_assert!(at(best) <= at(probe) + 1e-12, "constant {} lost to probe {}", best, probe);
    }

    #[test]
    fn parameter_flattening_round_trips(
        dims in prop::collection::vec(1..=5usize, 1..=2),
        x in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let mut layer_dims = vec![3];
        layer_dims.extend(dims);
        layer_dims.push(1);
        let spec = MlpSpec::new(layer_dims, Activation::Tanh).unwrap();
        // Deterministic but nontrivial parameter fill.
        let flat: Vec<f64> =
            (0..spec.param_count()).map(|i| ((i as f64) * 0.7).sin()).collect();
        let params = MlpParams::from_flat(&spec, &flat).unwrap();
        let back = params.to_flat();
        prop_assert_eq!(&back, &flat);
        let again = MlpParams::from_flat(&spec, &back).unwrap();
        prop_assert_eq!(params.forward(&x).unwrap().to_bits(), again.forward(&x).unwrap().to_bits());
    }

    #[test]
    fn operator_norm_sits_between_column_and_frobenius(
        rows in 1..=6usize,
        cols in 1..=6usize,
        fill in -2.0..2.0f64,
        phase in -3.0..3.0f64,
    ) {
        let a: Vec<f64> =
            (0..rows * cols).map(|i| fill * ((i as f64) + phase).cos()).collect();
        let sigma = spectral_norm(rows, cols, &a).unwrap();
        let frobenius = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let max_col = (0..cols)
            .map(|j| (0..rows).map(|i| a[i * cols + j].powi(2)).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        prop_assert!(sigma <= frobenius * (1.0 + 1e-9) + 1e-12);
        prop_assert!(sigma >= max_col * (1.0 - 1e-7) - 1e-12, "sigma {} under max column {}", sigma, max_col);
        // Dyadic scaling passes through the iteration without rounding.
        let doubled: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        prop_assert_eq!((2.0 * sigma).to_bits(), spectral_norm(rows, cols, &doubled).unwrap().to_bits());
    }

    #[test]
    fn certificate_inequality_holds_for_arbitrary_networks(
        width in 1..=4usize,
        weights_seed in any::<u64>(),
        train in cloud(1, 8),
        p in order(),
        ref_seed in any::<u64>(),
        relu in any::<bool>(),
    ) {
        // The bound is a theorem for any network, trained or not; certify
        // raises internally if the exact path ever sees a violation.
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let spec = MlpSpec::new(vec![1, width, 1], act).unwrap();
        let flat: Vec<f64> = (0..spec.param_count())
            .map(|i| 1.5 * (((weights_seed % 1024) as f64) + 0.61 * i as f64).sin())
            .collect();
        let params = MlpParams::from_flat(&spec, &flat).unwrap();
        let f = TargetFunction::AbsOffset { center: vec![0.3] };
        let n = train.len();
        let loss = discrete_loss(|x| params.forward(x).unwrap(), &train, |x| f.eval(x), p);
        let model = TrainedModel {
            spec,
            params,
            trace: LossTrace { per_iteration: vec![loss], restart_index: 0, final_loss: loss },
            train_points: train,
            order: p,
            mode: OptimizerMode::BestOfRestarts,
            diverged_restarts: 0,
            spectral_cap_binds: 0,
        };
        let dist = SamplingDistribution::UniformCube { dim: 1, side: 1.0 };
        let cert = certify(&model, &f, &dist, n, p, Seed::new(ref_seed)).unwrap();
        prop_assert!(cert.exact);
        prop_assert!(cert.measured_risk <= cert.bound + 1e-9);
    }
}
