use approx::assert_relative_eq;
use bmms::conjugate::{module_posterior, GaussianPrior, NoisePrior};
use bmms::multiscale::{CoarseningMode, CoarseningOperator, MultiscaleDesign};
use bmms::simgen::*;
use bmms::BmmsError;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn fixture(name: &str) -> Vec<f64> {
    let path = format!("{}/tests/fixtures/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{path}: {e}"))
        .lines()
        .map(|l| l.trim().parse().unwrap())
        .collect()
}

#[test]
fn test_functions_match_scripted_values() {
    for f in TestFunction::ALL {
        let expected = fixture(f.name());
        let got = gen_test_function(f.name(), 128).unwrap();
        assert_eq!(expected.len(), 128);
        for (i, (a, b)) in got.iter().zip(&expected).enumerate() {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{} at {i}: {a} vs {b}", f.name());
        }
    }
}

#[test]
fn blocks_has_eleven_jumps() {
    let beta = gen_test_function("blocks", 128).unwrap();
    let jumps = beta.as_slice().windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(jumps, 11);
}

#[test]
fn heavisine_quarter_point() {
    assert!(TestFunction::HeaviSine.eval(0.25).abs() < 1e-12);
}

#[test]
fn bumps_is_strictly_positive() {
    let beta = gen_test_function("bumps", 1024).unwrap();
    assert!(beta.iter().all(|&v| v > 0.0));
}

#[test]
fn unknown_function_is_config_error() {
    assert!(matches!(
        gen_test_function("sawtooth", 16),
        Err(BmmsError::InvalidConfig(_))
    ));
}

#[test]
fn correlation_entries() {
    let omega = correlation_matrix(6, 0.98);
    for h in 0..6 {
        assert_eq!(omega[(h, h)], 1.0);
    }
    assert_relative_eq!(omega[(2, 3)], 0.980_198_673_306_755_1, epsilon = 1e-12);
}

#[test]
fn generated_rows_have_target_covariance() {
    let p = 8;
    let omega = correlation_matrix(p, 0.7);
    let chol = omega.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = gaussian_rows(100_000, &chol, &mut rng);
    let cov = x.tr_mul(&x) / 100_000.0;
    assert!((cov - omega).amax() < 0.01);
}

#[test]
fn simulation_shapes_and_scaling() {
    let design = SimulationDesign {
        seed: 3,
        ..Default::default()
    };
    let data = gen_design(&design).unwrap();
    assert_eq!(data.x.shape(), (60, 128));
    assert_eq!(data.y.len(), 60);
    assert_eq!(data.beta.amax(), 1.0);
    assert_eq!(gen_design(&design).unwrap(), data);
    let holdout = gen_holdout(&design, 100).unwrap();
    assert_eq!(holdout.x.shape(), (100, 128));
    assert_ne!(holdout.x.rows(0, 60), data.x);
}

#[test]
fn invalid_rho_rejected() {
    let design = SimulationDesign {
        rho: 1.0,
        ..Default::default()
    };
    assert!(gen_design(&design).is_err());
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, sizes: &[usize]) -> (MultiscaleDesign, DVector<f64>) {
    let p = *sizes.last().unwrap();
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (MultiscaleDesign::with_block_sizes(x, sizes, CoarseningMode::Sum).unwrap(), y)
}

#[test]
fn sequential_ls_single_level_is_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (design, y) = random_design(&mut rng, 30, &[5]);
    let fit = sequential_ls_oracle(&design, &y).unwrap();
    let x = design.finest();
    let normal = (x.tr_mul(x)).lu().solve(&x.tr_mul(&y)).unwrap();
    assert!((&fit.theta[0] - normal).amax() < 1e-10);
}

#[test]
fn sequential_ls_matches_flat_prior_modules() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let (design, y) = random_design(&mut rng, 40, &[2, 4, 8]);
        let fit = sequential_ls_oracle(&design, &y).unwrap();
        let mut residual = y.clone();
        for level in 1..=3 {
            let x = design.x(level).unwrap();
            let post = module_posterior(x, &residual, &GaussianPrior::flat(), &NoisePrior::Jeffreys).unwrap();
            assert!((&post.mean - &fit.theta[level - 1]).amax() < 1e-8);
            residual -= x * &post.mean;
        }
    }
}

#[test]
fn two_scale_increment_is_difference_of_fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (design, y) = random_design(&mut rng, 50, &[1, 2]);
    let fit = sequential_ls_oracle(&design, &y).unwrap();
    let b1 = least_squares(design.x(1).unwrap(), &y).unwrap();
    let b2 = least_squares(design.x(2).unwrap(), &y).unwrap();
    let lifted = design.lift(&b1, 1, 2).unwrap();
    assert!((&fit.theta[1] - (b2 - lifted)).amax() < 1e-10);
}

#[test]
fn rank_deficient_design_is_singular() {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
    let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    assert!(matches!(
        least_squares(&x, &y),
        Err(BmmsError::NumericalSingularity(_))
    ));
}

#[test]
fn rss_ladder_is_non_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let x = DMatrix::from_fn(40, 16, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ops: Vec<_> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&k| CoarseningOperator::dyadic(16, k, CoarseningMode::Sum).unwrap())
            .collect();
        let ladder = rss_ladder(&x, &y, &ops).unwrap();
        assert!(ladder.windows(2).all(|w| w[1] <= w[0]), "{ladder:?}");
    }
}

fn toy_spec(r: f64, b: [f64; 2], sigma2: (f64, f64)) -> AsymptoticSpec {
    AsymptoticSpec {
        omega: DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]),
        b: DVector::from_row_slice(&b),
        coarse: CoarseningOperator::dyadic(2, 1, CoarseningMode::Sum).unwrap(),
        fine: CoarseningOperator::identity(2),
        sigma2,
    }
}

#[test]
fn toy_pseudo_true_values() {
    let d = asymptotic_distribution(&toy_spec(0.3, [1.0, 3.0], (1.0, 1.0))).unwrap();
    assert_relative_eq!(d.theta1[0], 2.0, epsilon = 1e-12);
    assert_relative_eq!(d.theta2[0], -1.0, epsilon = 1e-12);
    assert_relative_eq!(d.theta2[1], 1.0, epsilon = 1e-12);
}

#[test]
fn toy_fine_block_at_zero_correlation() {
    let d = asymptotic_distribution(&toy_spec(0.0, [1.0, 3.0], (1.0, 1.0))).unwrap();
    let fine = d.cov.view((1, 1), (2, 2)).clone_owned();
    let expected = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 1.5]);
    assert!((fine - expected).amax() < 1e-12);
}

#[test]
fn toy_fine_block_follows_derivation_sign() {
    // s2 / (2 (1 - r)(1 + r)) [[3 - r, 1 - 3r], [1 - 3r, 3 - r]]
    for r in [0.1, 0.5, 0.8] {
        let d = asymptotic_distribution(&toy_spec(r, [1.0, 3.0], (1.0, 1.0))).unwrap();
        let k = 1.0 / (2.0 * (1.0 - r) * (1.0 + r));
        assert_relative_eq!(d.cov[(1, 1)], k * (3.0 - r), epsilon = 1e-12);
        assert_relative_eq!(d.cov[(1, 2)], k * (1.0 - 3.0 * r), epsilon = 1e-12);
    }
}

#[test]
fn coarse_truth_has_no_fine_increment() {
    let p = 8;
    let coarse = CoarseningOperator::dyadic(p, 2, CoarseningMode::Sum).unwrap();
    let b = coarse.lift(&DVector::from_vec(vec![0.7, -1.2])).unwrap();
    let spec = AsymptoticSpec {
        omega: correlation_matrix(p, 0.6),
        b,
        coarse,
        fine: CoarseningOperator::identity(p),
        sigma2: (1.0, 1.0),
    };
    let d = asymptotic_distribution(&spec).unwrap();
    assert!(d.theta2.amax() < 1e-10);
}

#[test]
fn asymptotic_covariance_is_symmetric() {
    let p = 8;
    let spec = AsymptoticSpec {
        omega: correlation_matrix(p, 0.9),
        b: gen_test_function("doppler", p).unwrap(),
        coarse: CoarseningOperator::dyadic(p, 2, CoarseningMode::Sum).unwrap(),
        fine: CoarseningOperator::dyadic(p, 4, CoarseningMode::Sum).unwrap(),
        sigma2: (1.3, 0.8),
    };
    let d = asymptotic_distribution(&spec).unwrap();
    assert!((&d.cov - d.cov.transpose()).amax() < 1e-12);
    assert!(d.cov.clone().cholesky().is_some());
    // transfer equals L1 when the coarse operator factors through the fine one
    let l1 = CoarseningOperator::dyadic(4, 2, CoarseningMode::Sum).unwrap().to_dense();
    assert!((&d.transfer - l1).amax() < 1e-10);
}

#[test]
fn toy_mse_limits() {
    let big = 1e12;
    let mse1 = toy_shrunk_mse(1.0, 0.4, big, 1.0, 3.0, 1.0).unwrap();
    assert!(mse1 < 1e-10);
    let mse0 = toy_shrunk_mse(0.0, 0.4, big, 1.0, 3.0, 1.0).unwrap();
    assert_relative_eq!(mse0, 2.0, epsilon = 1e-9);
}

#[test]
fn toy_mse_equal_coefficients_at_c0() {
    let (n, r, b, s2) = (15.0, 0.3, 1.7, 2.0);
    let l: f64 = n / (n + 1.0);
    let expected = 2.0 * (1.0 - l).powi(2) * b * b + s2 / (n * (1.0 + r));
    assert_relative_eq!(toy_shrunk_mse(0.0, r, n, b, b, s2).unwrap(), expected, epsilon = 1e-12);
}

#[test]
fn toy_mse_rejects_unit_correlation() {
    assert!(matches!(
        toy_shrunk_mse(1.0, 1.0, 10.0, 1.0, 1.0, 1.0),
        Err(BmmsError::InvalidInput(_))
    ));
}

/// Two columns with `X'X = n [[1, r], [r, 1]]` exactly.
fn exact_toy_design(n: usize, r: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let target = DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]) * n as f64;
    let u = target.cholesky().unwrap().l().transpose();
    q * u
}

/// Monte Carlo mean and standard error of `|L mu_0 + c mu_1 - beta|^2` with
/// unit-information modules and known noise.
fn toy_mse_monte_carlo(c: f64, n: usize, r: f64, beta: [f64; 2], reps: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = exact_toy_design(n, r, &mut rng);
    let lop = CoarseningOperator::dyadic(2, 1, CoarseningMode::Sum).unwrap();
    let x0 = lop.downsample(&x1).unwrap();
    let b = DVector::from_row_slice(&beta);
    let signal = &x1 * &b;
    let prior = GaussianPrior::unit_information();
    let noise = NoisePrior::Known(1.0);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..reps {
        let y = &signal + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu0 = module_posterior(&x0, &y, &prior, &noise).unwrap().mean;
        let mu1 = module_posterior(&x1, &(&y - &x0 * &mu0), &prior, &noise).unwrap().mean;
        let est = lop.lift(&mu0).unwrap() + mu1 * c;
        let loss = (est - &b).norm_squared();
        sum += loss;
        sum2 += loss * loss;
    }
    let mean = sum / reps as f64;
    let var = sum2 / reps as f64 - mean * mean;
    (mean, (var / reps as f64).sqrt())
}

#[test]
fn toy_mse_formula_matches_simulation() {
    let (n, r) = (20, 0.5);
    let (mc, se) = toy_mse_monte_carlo(1.0, n, r, [1.0, 3.0], 100_000, 26);
    let formula = toy_shrunk_mse(1.0, r, n as f64, 1.0, 3.0, 1.0).unwrap();
    assert!((mc - formula).abs() < 3.0 * se, "mc {mc} formula {formula} se {se}");
}

#[test]
fn coarse_only_mse_carries_shrinkage_in_variance() {
    // The coarse estimate is l times the coarse least-squares fit, so its
    // variance term is l^2 s2 / (n (1 + r)).
    let (n, r) = (20, 0.5);
    let (mc, se) = toy_mse_monte_carlo(0.0, n, r, [1.0, 3.0], 100_000, 27);
    let nf = n as f64;
    let l = nf / (nf + 1.0);
    let printed = toy_shrunk_mse(0.0, r, nf, 1.0, 3.0, 1.0).unwrap();
    let corrected = printed - (1.0 - l * l) / (nf * (1.0 + r));
    assert!((mc - corrected).abs() < 3.0 * se, "mc {mc} corrected {corrected} se {se}");
}

#[test]
fn metrics_basics() {
    let truth = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let x_out = DMatrix::zeros(2, 3);
    let y_out = DVector::from_vec(vec![1.0, -1.0]);
    let exact = compute_metrics(&truth, &truth, &x_out, &y_out, &[], vec![]).unwrap();
    assert_eq!(exact.beta_mse, 0.0);
    assert_eq!(exact.mape, 1.0);
    let shifted = truth.add_scalar(1.0);
    let off = compute_metrics(&shifted, &truth, &x_out, &y_out, &[], vec![]).unwrap();
    assert_relative_eq!(off.beta_mse, 1.0, epsilon = 1e-15);
    assert!(compute_metrics(&truth, &DVector::zeros(2), &x_out, &y_out, &[], vec![]).is_err());
}
