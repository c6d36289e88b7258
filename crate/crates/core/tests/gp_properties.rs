use mobgp::constraints::{fit_constrained, penalized_objective, ConstraintConfig, ConstraintPointSet, ConstraintRule};
use mobgp::gp::{
    evaluate, fit_staged, FitConfig, Hyperparameters, KernelSpec, MultiTaskGP, NoiseModel, ParamSlot, PenaltySpec,
    SolverKind, TaskCovariance, TrainingSet, NOISE_FLOOR,
};
use mobgp::markov::TimeBinScheme;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn names(t: usize) -> Vec<String> {
    (0..t).map(|l| format!("task{l}")).collect()
}

#[test]
fn single_point_nll_is_half_log_two_pi() {
    let data = TrainingSet::complete(names(1), vec![0.0], vec![vec![0.0]]).unwrap();
    let h = Hyperparameters::new(
        KernelSpec::rbf(1.0, 1.0).non_periodic(),
        TaskCovariance::identity(1),
        NoiseModel::Shared(NOISE_FLOOR),
        vec![0.0],
    )
    .unwrap();
    let e = evaluate(&h, &data, SolverKind::Dense, None, false).unwrap();
    assert!((e.nll - 0.918_938_533).abs() < 1e-6, "{}", e.nll);
}

#[test]
fn identical_independent_tasks_double_the_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..9).map(|i| 1.7 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
    let kernel = KernelSpec::matern32(4.0, 0.3);
    let one = TrainingSet::complete(names(1), x.clone(), y.iter().map(|&v| vec![v]).collect()).unwrap();
    let two = TrainingSet::complete(names(2), x, y.iter().map(|&v| vec![v, v]).collect()).unwrap();
    let h1 = Hyperparameters::new(kernel, TaskCovariance::identity(1), NoiseModel::Shared(0.01), vec![0.4]).unwrap();
    let h2 = Hyperparameters::new(kernel, TaskCovariance::identity(2), NoiseModel::Shared(0.01), vec![0.4, 0.4]).unwrap();
    let a = evaluate(&h1, &one, SolverKind::Dense, None, false).unwrap().nll;
    let b = evaluate(&h2, &two, SolverKind::Dense, None, false).unwrap().nll;
    assert!((b - 2.0 * a).abs() < 1e-10 * a.abs().max(1.0));
}

#[test]
fn signal_variance_past_the_data_variance_raises_nll() {
    // white-noise targets: the kernel is effectively diagonal at this lengthscale
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let x: Vec<f64> = (0..60).map(|i| i as f64).collect();
    let y: Vec<Vec<f64>> = x.iter().map(|_| vec![noise.sample(&mut rng)]).collect();
    let data = TrainingSet::complete(names(1), x, y).unwrap();
    let hyper = |sf2: f64| {
        Hyperparameters::new(
            KernelSpec::rbf(0.05, sf2).non_periodic(),
            TaskCovariance::identity(1),
            NoiseModel::Shared(0.01),
            vec![0.0],
        )
        .unwrap()
    };
    let nll = |sf2: f64| evaluate(&hyper(sf2), &data, SolverKind::Dense, None, false).unwrap().nll;
    let slot = hyper(1.0).slots().iter().position(|s| *s == ParamSlot::LogSignalVariance).unwrap();
    let h = 1e-4;
    for (sf2, sign) in [(0.5, 1.0), (1e-3, -1.0)] {
        let fd = (nll(sf2 * f64::exp(h)) - nll(sf2 * f64::exp(-h))) / (2.0 * h);
        let g = evaluate(&hyper(sf2), &data, SolverKind::Dense, None, true).unwrap().gradient.unwrap()[slot];
        assert!(fd * sign > 0.0, "sf2={sf2} fd={fd}");
        assert!(g * sign > 0.0, "sf2={sf2} g={g}");
    }
}

#[test]
fn vanishing_penalty_recovers_unconstrained_fit() {
    let scheme = TimeBinScheme::hourly();
    let x = scheme.bin_centers();
    let targets: Vec<Vec<f64>> = x
        .iter()
        .map(|t| {
            let pm = 0.3 + 0.1 * (t * std::f64::consts::TAU / 24.0).sin();
            let mp = 0.5 + 0.1 * (t * std::f64::consts::TAU / 24.0).cos();
            vec![1.0 - pm, pm, 1.0 - mp, mp]
        })
        .collect();
    let data = TrainingSet::complete(names(4), x, targets).unwrap().with_scheme(scheme).unwrap();
    let cfg = FitConfig {
        iterations: 80,
        ..FitConfig::default()
    };
    let free = fit_staged(&data, &cfg, None).unwrap();
    let points = ConstraintPointSet {
        rule: ConstraintRule::TrainingBins,
        points: scheme.bin_centers(),
    };
    let ccfg = ConstraintConfig {
        penalty_weight: 1e-12,
        restarts: 0,
        ..ConstraintConfig::default()
    };
    let tied = fit_constrained(&data, &points, &ccfg, &cfg).unwrap();
    assert!((free.final_nll - tied.final_nll).abs() < 1e-6, "{} vs {}", free.final_nll, tied.final_nll);
}

fn random_factor(rng: &mut ChaCha8Rng, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |r, c| match r.cmp(&c) {
        std::cmp::Ordering::Equal => rng.gen_range(0.3..1.2),
        std::cmp::Ordering::Greater => rng.gen_range(-0.8..0.8),
        std::cmp::Ordering::Less => 0.0,
    })
}

/// Random masked instance with `n` free-form inputs and `t` tasks.
fn random_instance(seed: u64, n: usize, t: usize) -> (Hyperparameters, TrainingSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..168.0)).collect();
    x.sort_by(f64::total_cmp);
    let targets = (0..n).map(|_| (0..t).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let mut mask: Vec<Vec<bool>> = (0..n).map(|_| (0..t).map(|_| rng.gen_bool(0.7)).collect()).collect();
    mask[0][0] = true;
    let data = TrainingSet::new(names(t), x, targets, mask).unwrap();
    let kernel = if rng.gen_bool(0.5) {
        KernelSpec::rbf(rng.gen_range(2.0..40.0), rng.gen_range(0.1..2.0))
    } else {
        KernelSpec::matern32(rng.gen_range(2.0..40.0), rng.gen_range(0.1..2.0))
    };
    let noise = NoiseModel::PerTask((0..t).map(|_| rng.gen_range(1e-4..0.05)).collect());
    let mean = (0..t).map(|_| rng.gen_range(0.0..1.0)).collect();
    let h = Hyperparameters::new(kernel, TaskCovariance::from_factor(random_factor(&mut rng, t)).unwrap(), noise, mean).unwrap();
    (h, data)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn variance_never_exceeds_prior(seed in any::<u64>(), n in 1usize..12, t in 1usize..4, q in prop::collection::vec(0.0f64..168.0, 1..8)) {
        let (h, data) = random_instance(seed, n, t);
        let kf = h.task.matrix();
        let model = MultiTaskGP::new(h.clone(), data, SolverKind::Dense).unwrap();
        for p in model.predict(&q).unwrap() {
            for l in 0..t {
                let prior = h.kernel.signal_variance * kf[(l, l)];
                prop_assert!(p.variance[l] >= 0.0);
                prop_assert!(p.variance[l] <= prior + h.noise.variance(l) + 1e-9);
            }
        }
    }

    #[test]
    fn another_observation_never_raises_variance(seed in any::<u64>(), n in 2usize..12, t in 1usize..4, q in prop::collection::vec(0.0f64..168.0, 1..8)) {
        let (h, data) = random_instance(seed, n, t);
        let hidden: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..t).map(move |l| (i, l))).filter(|&(i, l)| !data.mask[i][l]).collect();
        prop_assume!(!hidden.is_empty());
        let (i, l) = hidden[(seed % hidden.len() as u64) as usize];
        let mut more = data.clone();
        more.mask[i][l] = true;
        let before = MultiTaskGP::new(h.clone(), data, SolverKind::Dense).unwrap().predict(&q).unwrap();
        let after = MultiTaskGP::new(h, more, SolverKind::Dense).unwrap().predict(&q).unwrap();
        for (b, a) in before.iter().zip(&after) {
            for task in 0..t {
                prop_assert!(a.variance[task] <= b.variance[task] + 1e-9);
            }
        }
    }

    #[test]
    fn penalty_is_nonnegative_and_monotone_in_weight(seed in any::<u64>(), w1 in 0.0f64..100.0, dw in 0.0f64..100.0, margin in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = TimeBinScheme::hourly();
        let x = scheme.bin_centers();
        let targets = x.iter().map(|_| (0..4).map(|_| rng.gen_range(-0.1..1.1)).collect()).collect();
        let data = TrainingSet::complete(names(4), x, targets).unwrap().with_scheme(scheme).unwrap();
        let h = Hyperparameters::new(
            KernelSpec::rbf(rng.gen_range(3.0..30.0), rng.gen_range(0.05..1.0)),
            TaskCovariance::from_factor(random_factor(&mut rng, 4)).unwrap(),
            NoiseModel::Shared(rng.gen_range(1e-3..0.05)),
            data.task_means(),
        ).unwrap();
        let points: Vec<f64> = (0..24).map(|u| u as f64 * 7.0).collect();
        let eval = |w: f64| {
            let spec = PenaltySpec { points: &points, weight: w, margin };
            evaluate(&h, &data, SolverKind::Structured, Some(&spec), false).unwrap()
        };
        let a = eval(w1);
        let b = eval(w1 + dw);
        prop_assert!(a.penalty >= 0.0);
        prop_assert!(a.objective >= a.nll);
        prop_assert!(b.objective >= a.objective - 1e-9 * a.objective.abs());
        prop_assert_eq!(eval(0.0).objective, a.nll);
        let cfg = ConstraintConfig { penalty_weight: 1.0, nonneg_margin: margin, ..ConstraintConfig::default() };
        let set = ConstraintPointSet { rule: ConstraintRule::Custom { points: points.clone() }, points: points.clone() };
        let pen = penalized_objective(&h, &data, &set, &cfg).unwrap();
        prop_assert!(pen >= a.nll);
    }
}
