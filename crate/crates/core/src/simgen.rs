//! Simulation designs, test functions and analytic oracles.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::conjugate::cholesky_jittered;
use crate::error::{dim_err, BmmsError, Result};
use crate::multiscale::{CoarseningOperator, MultiscaleDesign};

const JUMPS: [f64; 11] = [0.1, 0.13, 0.15, 0.23, 0.25, 0.40, 0.44, 0.65, 0.76, 0.78, 0.81];
const BLOCK_HEIGHTS: [f64; 11] = [4.0, -5.0, 3.0, -4.0, 5.0, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2];
const BUMP_HEIGHTS: [f64; 11] = [4.0, 5.0, 3.0, 4.0, 5.0, 4.2, 2.1, 4.3, 3.1, 5.1, 4.2];
const BUMP_WIDTHS: [f64; 11] = [
    0.005, 0.005, 0.006, 0.01, 0.01, 0.03, 0.01, 0.01, 0.005, 0.008, 0.005,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Doppler,
    Blocks,
    HeaviSine,
    Bumps,
    PiecewisePolynomial,
}

impl TestFunction {
    pub const ALL: [TestFunction; 5] = [
        TestFunction::Doppler,
        TestFunction::Blocks,
        TestFunction::HeaviSine,
        TestFunction::Bumps,
        TestFunction::PiecewisePolynomial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Doppler => "doppler",
            TestFunction::Blocks => "blocks",
            TestFunction::HeaviSine => "heavisine",
            TestFunction::Bumps => "bumps",
            TestFunction::PiecewisePolynomial => "ppoly",
        }
    }

    /// Value at `t` in `[0, 1]`.
    pub fn eval(self, t: f64) -> f64 {
        match self {
            TestFunction::Doppler => (t * (1.0 - t)).sqrt() * (2.0 * PI * 1.05 / (t + 0.05)).sin(),
            // right-continuous steps: the jump is already taken at t = t_j
            TestFunction::Blocks => JUMPS
                .iter()
                .zip(BLOCK_HEIGHTS)
                .map(|(&tj, h)| if t >= tj { h } else { 0.0 })
                .sum(),
            TestFunction::HeaviSine => {
                4.0 * (4.0 * PI * t).sin() - sign(t - 0.3) - sign(0.72 - t)
            }
            TestFunction::Bumps => JUMPS
                .iter()
                .zip(BUMP_HEIGHTS.iter().zip(BUMP_WIDTHS))
                .map(|(&tj, (&h, w))| h * (1.0 + ((t - tj) / w).abs()).powi(-4))
                .sum(),
            TestFunction::PiecewisePolynomial => {
                if t <= 0.5 {
                    -16.0 * t.powi(3) + 12.0 * t.powi(2)
                } else if t <= 0.75 {
                    (16.0 * t.powi(3) - 40.0 * t.powi(2) + 28.0 * t) / 3.0 - 1.5
                } else {
                    (16.0 * t.powi(3) - 32.0 * t.powi(2) + 16.0 * t) / 3.0
                }
            }
        }
    }

    /// Values on the grid `t_i = i / p`, `i = 1..=p`.
    pub fn discretize(self, p: usize) -> DVector<f64> {
        DVector::from_iterator(p, (1..=p).map(|i| self.eval(i as f64 / p as f64)))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl FromStr for TestFunction {
    type Err = BmmsError;

    fn from_str(s: &str) -> Result<Self> {
        TestFunction::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                BmmsError::InvalidConfig(format!(
                    "unknown test function {s:?} (expected doppler, blocks, heavisine, bumps or ppoly)"
                ))
            })
    }
}

/// Discretised test function by name.
pub fn gen_test_function(name: &str, p: usize) -> Result<DVector<f64>> {
    let f: TestFunction = name.parse()?;
    if p < 2 {
        return Err(BmmsError::InvalidConfig(format!("need p >= 2, got {p}")));
    }
    Ok(f.discretize(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDesign {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub sigma_eps: f64,
    pub function: TestFunction,
    pub seed: u64,
}

impl Default for SimulationDesign {
    fn default() -> Self {
        Self {
            n: 60,
            p: 128,
            rho: 0.98,
            sigma_eps: 1.0,
            function: TestFunction::Blocks,
            seed: 0,
        }
    }
}

impl SimulationDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(BmmsError::InvalidConfig("n and p must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(BmmsError::InvalidConfig(format!("rho {} outside [0, 1)", self.rho)));
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return Err(BmmsError::InvalidConfig(format!(
                "noise sd {} must be non-negative",
                self.sigma_eps
            )));
        }
        Ok(())
    }

    /// Coefficient vector scaled to unit maximum absolute value. A single
    /// column uses the function's value at `t = 1`.
    pub fn beta(&self) -> DVector<f64> {
        let mut beta = self.function.discretize(self.p);
        let scale = beta.amax();
        if scale > 0.0 {
            beta /= scale;
        }
        beta
    }
}

/// `omega[h][j] = exp(-(1 - rho) |h - j|)`.
pub fn correlation_matrix(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |h, j| (-(1.0 - rho) * h.abs_diff(j) as f64).exp())
}

/// `n` independent rows from `N(0, Omega)` given the lower Cholesky factor.
pub fn gaussian_rows<R: Rng + ?Sized>(n: usize, chol_lower: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let p = chol_lower.nrows();
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    z * chol_lower.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta: DVector<f64>,
}

fn simulate_with<R: Rng + ?Sized>(design: &SimulationDesign, n: usize, rng: &mut R) -> Result<SimulatedData> {
    design.validate()?;
    let chol = cholesky_jittered(correlation_matrix(design.p, design.rho))?;
    let x = gaussian_rows(n, &chol.l(), rng);
    let beta = design.beta();
    let noise = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let y = &x * &beta + noise * design.sigma_eps;
    Ok(SimulatedData { x, y, beta })
}

/// Training data `y = X beta + eps` with rows of `X` drawn from `N(0, Omega)`.
pub fn gen_design(design: &SimulationDesign) -> Result<SimulatedData> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    simulate_with(design, design.n, &mut rng)
}

/// Fresh draws from the same process, independent of the training set.
pub fn gen_holdout(design: &SimulationDesign, n_out: usize) -> Result<SimulatedData> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(1);
    simulate_with(design, n_out, &mut rng)
}

/// Minimum-norm least squares via SVD; fails if `x` is rank deficient.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return dim_err(format!("design has {} rows, response has {}", x.nrows(), y.len()));
    }
    let svd = x.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if x.ncols() > x.nrows() || min.is_nan() || min <= max * 1e-12 {
        return Err(BmmsError::NumericalSingularity(format!(
            "{}x{} design is rank deficient",
            x.nrows(),
            x.ncols()
        )));
    }
    svd.solve(y, 0.0)
        .map_err(|e| BmmsError::NumericalSingularity(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialFit {
    /// Per-level increments.
    pub theta: Vec<DVector<f64>>,
    /// `beta[j]` accumulates levels `1..=j+1` at that level's resolution.
    pub beta: Vec<DVector<f64>>,
    /// In-sample residual sum of squares after each level.
    pub rss: Vec<f64>,
}

/// Regress the running residual on each level's design in turn.
pub fn sequential_ls_oracle(design: &MultiscaleDesign, y: &DVector<f64>) -> Result<SequentialFit> {
    let mut residual = y.clone();
    let mut theta = Vec::with_capacity(design.levels());
    let mut beta = Vec::with_capacity(design.levels());
    let mut rss = Vec::with_capacity(design.levels());
    for level in 1..=design.levels() {
        let x = design.x(level)?;
        let t = least_squares(x, &residual)?;
        residual -= x * &t;
        rss.push(residual.norm_squared());
        let mut acc = t.clone();
        for (h, th) in theta.iter().enumerate() {
            acc += design.lift(th, h + 1, level)?;
        }
        theta.push(t);
        beta.push(acc);
    }
    Ok(SequentialFit { theta, beta, rss })
}

/// In-sample RSS after each sequential least-squares step on the designs
/// `x * op_j`.
pub fn rss_ladder(x: &DMatrix<f64>, y: &DVector<f64>, operators: &[CoarseningOperator]) -> Result<Vec<f64>> {
    let mut residual = y.clone();
    let mut out = Vec::with_capacity(operators.len());
    for op in operators {
        let z = op.downsample(x)?;
        let t = least_squares(&z, &residual)?;
        residual -= z * t;
        out.push(residual.norm_squared());
    }
    Ok(out)
}

/// Large-sample setting for a two-scale model. `coarse` and `fine` map the
/// true coefficient resolution to the two model resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticSpec {
    pub omega: DMatrix<f64>,
    pub b: DVector<f64>,
    pub coarse: CoarseningOperator,
    pub fine: CoarseningOperator,
    pub sigma2: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticDistribution {
    pub beta1: DVector<f64>,
    pub beta2: DVector<f64>,
    pub theta1: DVector<f64>,
    pub theta2: DVector<f64>,
    /// `(L2' Omega L2)^-1 L2' Omega L1`.
    pub transfer: DMatrix<f64>,
    /// Covariance of `(theta1, theta2)` for one observation; divide by `n`.
    pub cov: DMatrix<f64>,
}

impl AsymptoticDistribution {
    pub fn mean(&self) -> DVector<f64> {
        let p1 = self.theta1.len();
        let mut m = DVector::zeros(p1 + self.theta2.len());
        m.rows_mut(0, p1).copy_from(&self.theta1);
        m.rows_mut(p1, self.theta2.len()).copy_from(&self.theta2);
        m
    }
}

pub fn asymptotic_distribution(spec: &AsymptoticSpec) -> Result<AsymptoticDistribution> {
    let p = spec.omega.nrows();
    if spec.omega.ncols() != p || spec.b.len() != p {
        return dim_err(format!(
            "omega is {}x{}, b has {} entries",
            p,
            spec.omega.ncols(),
            spec.b.len()
        ));
    }
    if spec.coarse.fine_size() != p || spec.fine.fine_size() != p {
        return dim_err("operators must act on the true coefficient resolution");
    }
    let l1 = spec.coarse.to_dense();
    let l2 = spec.fine.to_dense();
    let omega_l1 = &spec.omega * &l1;
    let omega_l2 = &spec.omega * &l2;
    let chol1 = cholesky_jittered(l1.tr_mul(&omega_l1))?;
    let chol2 = cholesky_jittered(l2.tr_mul(&omega_l2))?;
    let beta1 = chol1.solve(&omega_l1.tr_mul(&spec.b));
    let beta2 = chol2.solve(&omega_l2.tr_mul(&spec.b));
    let transfer = chol2.solve(&omega_l2.tr_mul(&l1));
    let theta2 = &beta2 - &transfer * &beta1;

    let (s1, s2) = spec.sigma2;
    let inv1 = chol1.inverse();
    let inv2 = chol2.inverse();
    let (p1, p2) = (beta1.len(), beta2.len());
    let mut cov = DMatrix::zeros(p1 + p2, p1 + p2);
    let off = -(&transfer * &inv1) * s1;
    cov.view_mut((0, 0), (p1, p1)).copy_from(&(&inv1 * s1));
    cov.view_mut((p1, 0), (p2, p1)).copy_from(&off);
    cov.view_mut((0, p1), (p1, p2)).copy_from(&off.transpose());
    let fine = &inv2 * s2 + &transfer * &inv1 * transfer.transpose() * s1;
    cov.view_mut((p1, p1), (p2, p2)).copy_from(&fine);
    Ok(AsymptoticDistribution {
        theta1: beta1.clone(),
        beta1,
        beta2,
        theta2,
        transfer,
        cov,
    })
}

/// Frequentist MSE of the shrunk two-column estimator
/// `L mu_0 + c mu_1` with `l = n / (n + 1)`.
pub fn toy_shrunk_mse(c: f64, r: f64, n: f64, beta1: f64, beta2: f64, sigma2: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(BmmsError::InvalidInput(format!(
            "correlation {r} outside [0, 1); the variance diverges as r -> 1"
        )));
    }
    if n < 1.0 {
        return Err(BmmsError::InvalidInput(format!("n = {n} must be at least 1")));
    }
    let l = n / (n + 1.0);
    let shrink = 1.0 - c * l;
    let bias2 = shrink * shrink * ((l - 2.0).powi(2) + l * l) * (beta1 * beta1 + beta2 * beta2) / 4.0
        + shrink * shrink * l * (l - 2.0) * beta1 * beta2;
    let variance =
        sigma2 / (n * (1.0 + r)) * (shrink * (1.0 + c * l) + 2.0 * c * c * l * l / (1.0 - r));
    Ok(bias2 + variance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub beta_mse: f64,
    /// Mean absolute prediction error on held-out data.
    pub mape: f64,
    /// Euclidean norm of each scale's finest-resolution contribution.
    pub contribution_norms: Vec<f64>,
    /// In-sample RSS after accumulating each level.
    pub rss: Vec<f64>,
}

pub fn compute_metrics(
    beta_hat: &DVector<f64>,
    beta_true: &DVector<f64>,
    x_out: &DMatrix<f64>,
    y_out: &DVector<f64>,
    contributions: &[DVector<f64>],
    rss: Vec<f64>,
) -> Result<MetricsReport> {
    if beta_hat.len() != beta_true.len() {
        return dim_err(format!(
            "estimate has {} entries, truth has {}",
            beta_hat.len(),
            beta_true.len()
        ));
    }
    if x_out.ncols() != beta_hat.len() || x_out.nrows() != y_out.len() {
        return dim_err(format!(
            "held-out design is {}x{} for {} coefficients and {} responses",
            x_out.nrows(),
            x_out.ncols(),
            beta_hat.len(),
            y_out.len()
        ));
    }
    let beta_mse = (beta_hat - beta_true).norm_squared() / beta_hat.len().max(1) as f64;
    let pred = x_out * beta_hat;
    let mape = if y_out.is_empty() {
        0.0
    } else {
        (y_out - pred).abs().sum() / y_out.len() as f64
    };
    Ok(MetricsReport {
        beta_mse,
        mape,
        contribution_norms: contributions.iter().map(|c| c.norm()).collect(),
        rss,
    })
}
