//! Closed-form conditional posteriors for Gaussian linear modules.
//!
//! A module regresses a residual `r` on its design `X` with
//! `theta | s2 ~ N(m, s2 M)` and an inverse-gamma (or improper `1/s2`)
//! noise prior. The posterior is
//!
//! ```text
//! Sigma = (M^-1 + X'X)^-1
//! mu    = Sigma (M^-1 m + X'r)
//! s2    ~ InvGamma(a + n/2, b + (r'r + m'M^-1 m - mu' Sigma^-1 mu) / 2)
//! theta | s2 ~ N(mu, s2 Sigma)
//! ```
//!
//! A flat prior is stored as `M^-1 = 0`; the noise shape then loses the
//! `p/2` contributed by the proper prior and becomes `a + (n - p)/2`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{dim_err, BmmsError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior scale matrix `M` (prior covariance is `s2 * M`).
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PriorScale {
    /// `M^-1 = 0`.
    Flat,
    /// `M = n (X'X)^-1` computed from the module's own design.
    #[default]
    UnitInformation,
    /// `M = tau * I`.
    Ridge(f64),
    /// Explicit symmetric positive definite `M`.
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianPrior {
    /// `None` means a zero prior mean.
    pub mean: Option<DVector<f64>>,
    pub scale: PriorScale,
}

impl GaussianPrior {
    pub fn flat() -> Self {
        Self {
            mean: None,
            scale: PriorScale::Flat,
        }
    }

    pub fn unit_information() -> Self {
        Self {
            mean: None,
            scale: PriorScale::UnitInformation,
        }
    }

    pub fn ridge(tau: f64) -> Self {
        Self {
            mean: None,
            scale: PriorScale::Ridge(tau),
        }
    }

    pub fn with_scale_matrix(m: DMatrix<f64>) -> Self {
        Self {
            mean: None,
            scale: PriorScale::Matrix(m),
        }
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Self {
        self.mean = Some(mean);
        self
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.scale, PriorScale::Flat)
    }

    /// Prior precision `M^-1`, mean `m` and `log|M|` for the given design.
    /// `log|M|` is `None` for the flat prior.
    pub(crate) fn resolve(
        &self,
        xtx: &DMatrix<f64>,
        n: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>, Option<f64>)> {
        let p = xtx.nrows();
        let mean = match &self.mean {
            Some(m) if m.len() != p => {
                return dim_err(format!("prior mean has length {}, expected {p}", m.len()))
            }
            Some(m) => m.clone(),
            None => DVector::zeros(p),
        };
        match &self.scale {
            PriorScale::Flat => Ok((DMatrix::zeros(p, p), mean, None)),
            PriorScale::UnitInformation => {
                let nf = n as f64;
                let precision = xtx / nf;
                let chol = cholesky_jittered(precision.clone())?;
                let logdet = -log_det(&chol);
                Ok((precision, mean, Some(logdet)))
            }
            PriorScale::Ridge(tau) => {
                if tau.is_nan() || *tau <= 0.0 {
                    return Err(BmmsError::InvalidConfig(format!(
                        "ridge prior scale must be positive, got {tau}"
                    )));
                }
                let precision = DMatrix::identity(p, p) / *tau;
                Ok((precision, mean, Some(p as f64 * tau.ln())))
            }
            PriorScale::Matrix(m) => {
                if m.shape() != (p, p) {
                    return dim_err(format!(
                        "prior scale is {:?}, expected {p}x{p}",
                        m.shape()
                    ));
                }
                let chol = cholesky_jittered(m.clone())?;
                let logdet = log_det(&chol);
                Ok((chol.inverse(), mean, Some(logdet)))
            }
        }
    }
}

/// Prior on the module noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoisePrior {
    /// Improper `pi(s2) ∝ 1/s2`.
    Jeffreys,
    InvGamma { shape: f64, rate: f64 },
    /// Variance treated as known.
    Known(f64),
}

impl Default for NoisePrior {
    fn default() -> Self {
        NoisePrior::InvGamma {
            shape: 1.0,
            rate: 1.0,
        }
    }
}

impl NoisePrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoisePrior::Jeffreys => Ok(()),
            NoisePrior::InvGamma { shape, rate } if shape > 0.0 && rate > 0.0 => Ok(()),
            NoisePrior::Known(s2) if s2 > 0.0 => Ok(()),
            other => Err(BmmsError::InvalidConfig(format!(
                "noise prior parameters must be positive: {other:?}"
            ))),
        }
    }
}

/// Conditional law of the noise variance after seeing the module data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLaw {
    InvGamma { shape: f64, rate: f64 },
    Known(f64),
}

impl NoiseLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            NoiseLaw::Known(s2) => Ok(s2),
            NoiseLaw::InvGamma { shape, rate } => {
                if !(shape > 0.0 && rate > 0.0 && rate.is_finite()) {
                    return Err(BmmsError::NumericalSingularity(format!(
                        "degenerate noise posterior (shape {shape}, rate {rate})"
                    )));
                }
                let g = Gamma::new(shape, 1.0 / rate).map_err(|e| {
                    BmmsError::NumericalSingularity(format!("gamma sampler: {e}"))
                })?;
                Ok(1.0 / g.sample(rng))
            }
        }
    }

    /// Posterior mean of `s2`, when it exists.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            NoiseLaw::Known(s2) => Some(s2),
            NoiseLaw::InvGamma { shape, rate } if shape > 1.0 => Some(rate / (shape - 1.0)),
            NoiseLaw::InvGamma { .. } => None,
        }
    }
}

/// Output of one conjugate Gaussian module.
#[derive(Debug, Clone)]
pub struct GaussianModulePosterior {
    pub mean: DVector<f64>,
    /// `Sigma`; the conditional covariance of theta is `s2 * Sigma`.
    pub cov_factor: DMatrix<f64>,
    pub noise: NoiseLaw,
    /// Log marginal likelihood of the residual with theta and s2 integrated
    /// out. Up to a constant for improper priors.
    pub log_marginal: f64,
    precision_chol: Cholesky<f64, Dyn>,
}

impl GaussianModulePosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws `theta ~ N(mu, s2 Sigma)` for a fixed noise variance.
    pub fn sample_theta<R: Rng + ?Sized>(&self, s2: f64, rng: &mut R) -> DVector<f64> {
        let p = self.mean.len();
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // Sigma^-1 = R R' so R'^-1 z has covariance Sigma.
        let u = self
            .precision_chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        &self.mean + u * s2.sqrt()
    }

    /// Joint draw of `(theta, s2)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(DVector<f64>, f64)> {
        let s2 = self.noise.sample(rng)?;
        Ok((self.sample_theta(s2, rng), s2))
    }
}

/// Cholesky factorisation with diagonal jitter `1e-10 * trace / p`, escalated
/// tenfold up to three times.
pub fn cholesky_jittered(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(BmmsError::NumericalSingularity(
            "matrix has non-finite entries".into(),
        ));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let p = a.nrows().max(1);
    let mut jitter = 1e-10 * (a.trace().abs() / p as f64).max(f64::MIN_POSITIVE);
    for _ in 0..3 {
        let mut b = a.clone();
        for i in 0..a.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(BmmsError::NumericalSingularity(format!(
        "{}x{} matrix is not positive definite after jitter",
        a.nrows(),
        a.ncols()
    )))
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Conjugate posterior of one module given its design and residual response.
pub fn module_posterior(
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    prior: &GaussianPrior,
    noise: &NoisePrior,
) -> Result<GaussianModulePosterior> {
    if x.nrows() != residual.len() {
        return dim_err(format!(
            "design has {} rows, residual has {} entries",
            x.nrows(),
            residual.len()
        ));
    }
    noise.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    let xtx = x.tr_mul(x);
    let (prior_precision, prior_mean, prior_logdet) = prior.resolve(&xtx, n)?;
    let precision = &prior_precision + &xtx;
    let chol = cholesky_jittered(precision)?;
    let rhs = &prior_precision * &prior_mean + x.tr_mul(residual);
    let mean = chol.solve(&rhs);
    let cov_factor = chol.inverse();

    // r'r + m'M^-1 m - mu'Sigma^-1 mu, clamped at zero against round-off
    let quad = (residual.dot(residual) + prior_mean.dot(&(&prior_precision * &prior_mean))
        - mean.dot(&rhs))
    .max(0.0);

    let effective_n = match prior_logdet {
        Some(_) => n as f64,
        None => n as f64 - p as f64,
    };
    let half_logdet_sigma = -0.5 * log_det(&chol);
    let mut log_marginal = -0.5 * effective_n * LN_2PI + half_logdet_sigma;
    if let Some(ld) = prior_logdet {
        log_marginal -= 0.5 * ld;
    }

    let noise_law = match *noise {
        NoisePrior::Known(s2) => {
            log_marginal += -0.5 * effective_n * s2.ln() - quad / (2.0 * s2);
            NoiseLaw::Known(s2)
        }
        NoisePrior::Jeffreys => {
            let shape = 0.5 * effective_n;
            let rate = 0.5 * quad;
            if shape <= 0.0 {
                return Err(BmmsError::NumericalSingularity(format!(
                    "improper noise posterior: {n} rows for {p} flat-prior coefficients"
                )));
            }
            log_marginal += ln_gamma(shape) - shape * rate.ln();
            NoiseLaw::InvGamma { shape, rate }
        }
        NoisePrior::InvGamma { shape: a, rate: b } => {
            let shape = a + 0.5 * effective_n;
            let rate = b + 0.5 * quad;
            log_marginal += a * b.ln() - ln_gamma(a) + ln_gamma(shape) - shape * rate.ln();
            NoiseLaw::InvGamma { shape, rate }
        }
    };

    Ok(GaussianModulePosterior {
        mean,
        cov_factor,
        noise: noise_law,
        log_marginal,
        precision_chol: chol,
    })
}

/// Closed-form two-scale modular posterior of `(theta_1, theta_2)` given
/// both noise variances.
#[derive(Debug, Clone)]
pub struct TwoScaleJoint {
    /// Stacked `[mu_1; mu_2]`.
    pub mean: DVector<f64>,
    /// Full `(p_1 + p_2)` square covariance.
    pub cov: DMatrix<f64>,
    /// `Q_1 = Sigma_2 X_2' X_1`.
    pub cross: DMatrix<f64>,
    pub p1: usize,
}

impl TwoScaleJoint {
    pub fn mean_coarse(&self) -> DVector<f64> {
        self.mean.rows(0, self.p1).into_owned()
    }

    pub fn mean_fine(&self) -> DVector<f64> {
        self.mean.rows(self.p1, self.mean.len() - self.p1).into_owned()
    }
}

pub fn two_scale_joint(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    y: &DVector<f64>,
    priors: (&GaussianPrior, &GaussianPrior),
    sigma2: (f64, f64),
) -> Result<TwoScaleJoint> {
    let (s1, s2) = sigma2;
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(BmmsError::InvalidInput(
            "noise variances must be positive".into(),
        ));
    }
    let m1 = module_posterior(x1, y, priors.0, &NoisePrior::Known(s1))?;
    let m2 = module_posterior(x2, y, priors.1, &NoisePrior::Known(s2))?;
    let (p1, p2) = (x1.ncols(), x2.ncols());
    let q = &m2.cov_factor * x2.tr_mul(x1);

    let mut mean = DVector::zeros(p1 + p2);
    mean.rows_mut(0, p1).copy_from(&m1.mean);
    mean.rows_mut(p1, p2).copy_from(&(&m2.mean - &q * &m1.mean));

    let s1_sigma1 = &m1.cov_factor * s1;
    let off = -(&q * &s1_sigma1);
    let fine = &m2.cov_factor * s2 + &q * &s1_sigma1 * q.transpose();
    let mut cov = DMatrix::zeros(p1 + p2, p1 + p2);
    cov.view_mut((0, 0), (p1, p1)).copy_from(&s1_sigma1);
    cov.view_mut((p1, 0), (p2, p1)).copy_from(&off);
    cov.view_mut((0, p1), (p1, p2)).copy_from(&off.transpose());
    cov.view_mut((p1, p1), (p2, p2)).copy_from(&fine);

    Ok(TwoScaleJoint {
        mean,
        cov,
        cross: q,
        p1,
    })
}

/// Scalar two-scale problem with known variances, small enough to evaluate
/// every density in the modular factorisation identity on a grid.
#[derive(Debug, Clone)]
pub struct ScalarTwoScaleProblem {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub y: DVector<f64>,
    /// Prior means and scales: `theta_j ~ N(m_j, s2_j * scale_j)`.
    pub prior_mean: (f64, f64),
    pub prior_scale: (f64, f64),
    pub sigma2: (f64, f64),
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

fn ln_mvn(x: &DVector<f64>, mean: &DVector<f64>, cov: DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_jittered(cov)?;
    let d = x - mean;
    let sol = chol.l().solve_lower_triangular(&d).expect("positive diagonal");
    Ok(-0.5 * (x.len() as f64 * LN_2PI + log_det(&chol) + sol.dot(&sol)))
}

impl ScalarTwoScaleProblem {
    fn check(&self) -> Result<()> {
        let n = self.y.len();
        if self.x1.len() != n || self.x2.len() != n {
            return dim_err("x1, x2 and y must share their length");
        }
        if !(self.sigma2.0 > 0.0 && self.sigma2.1 > 0.0)
            || !(self.prior_scale.0 > 0.0 && self.prior_scale.1 > 0.0)
        {
            return Err(BmmsError::InvalidInput(
                "variances and prior scales must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Module 1 posterior of theta_1: mean and variance.
    fn module1(&self) -> (f64, f64) {
        let prec = 1.0 / self.prior_scale.0 + self.x1.dot(&self.x1);
        let mean = (self.prior_mean.0 / self.prior_scale.0 + self.x1.dot(&self.y)) / prec;
        (mean, self.sigma2.0 / prec)
    }

    /// Module 2 posterior of theta_2 given theta_1: mean and variance.
    fn module2(&self, theta1: f64) -> (f64, f64) {
        let prec = 1.0 / self.prior_scale.1 + self.x2.dot(&self.x2);
        let resid = &self.y - &self.x1 * theta1;
        let mean = (self.prior_mean.1 / self.prior_scale.1 + self.x2.dot(&resid)) / prec;
        (mean, self.sigma2.1 / prec)
    }

    /// `log p_M(theta) = log m(theta_1) + log m(theta_2 | theta_1)`.
    pub fn ln_modular_posterior(&self, theta1: f64, theta2: f64) -> f64 {
        let (m1, v1) = self.module1();
        let (m2, v2) = self.module2(theta1);
        ln_normal(theta1, m1, v1) + ln_normal(theta2, m2, v2)
    }

    /// Log of the data-dependent prior times the full-model likelihood over
    /// its evidence: `pi(t1) pi(t2) p_1(t1|y) / p_2(t1|y) * p_2(y|t) / p_2(y)`.
    /// Every factor is evaluated from its own definition.
    pub fn ln_data_dependent_form(&self, theta1: f64, theta2: f64) -> Result<f64> {
        self.check()?;
        let n = self.y.len();
        let (s1, s2) = self.sigma2;
        let (mm1, mm2) = self.prior_mean;
        let (sc1, sc2) = self.prior_scale;
        let v_prior1 = s1 * sc1;
        let v_prior2 = s2 * sc2;

        let ln_prior = ln_normal(theta1, mm1, v_prior1) + ln_normal(theta2, mm2, v_prior2);

        let (m1, v1) = self.module1();
        let ln_p1_marg = ln_normal(theta1, m1, v1);

        // full two-coefficient model: posterior precision and mean
        let mut x = DMatrix::zeros(n, 2);
        x.set_column(0, &self.x1);
        x.set_column(1, &self.x2);
        let prior_prec = DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0 / v_prior1,
            1.0 / v_prior2,
        ]));
        let post_prec = &prior_prec + x.tr_mul(&x) / s2;
        let post_cov = post_prec
            .clone()
            .try_inverse()
            .ok_or_else(|| BmmsError::NumericalSingularity("2x2 posterior precision".into()))?;
        let prior_m = DVector::from_vec(vec![mm1, mm2]);
        let post_mean = &post_cov * (&prior_prec * &prior_m + x.tr_mul(&self.y) / s2);
        let ln_p2_marg = ln_normal(theta1, post_mean[0], post_cov[(0, 0)]);

        let fitted = &self.x1 * theta1 + &self.x2 * theta2;
        let ln_lik = (0..n)
            .map(|i| ln_normal(self.y[i], fitted[i], s2))
            .sum::<f64>();

        let evidence_mean = &self.x1 * mm1 + &self.x2 * mm2;
        let evidence_cov = DMatrix::identity(n, n) * s2
            + (&self.x1 * self.x1.transpose()) * v_prior1
            + (&self.x2 * self.x2.transpose()) * v_prior2;
        let ln_evidence = ln_mvn(&self.y, &evidence_mean, evidence_cov)?;

        Ok(ln_prior + ln_p1_marg - ln_p2_marg + ln_lik - ln_evidence)
    }

    /// Largest relative gap between the modular posterior and its
    /// data-dependent-prior form over a `resolution x resolution` grid
    /// spanning four posterior standard deviations in each coordinate.
    pub fn density_identity_gap(&self, resolution: usize) -> Result<f64> {
        self.check()?;
        if resolution < 2 {
            return Err(BmmsError::InvalidInput("grid needs at least 2 points".into()));
        }
        let (m1, v1) = self.module1();
        let (m2, v2) = self.module2(m1);
        // spread of theta_2 widens with theta_1 uncertainty through the residual
        let slope = self.x2.dot(&self.x1) / (1.0 / self.prior_scale.1 + self.x2.dot(&self.x2));
        let sd1 = v1.sqrt();
        let sd2 = (v2 + slope * slope * v1).sqrt();
        let step = |k: usize| -4.0 + 8.0 * k as f64 / (resolution - 1) as f64;
        let mut worst: f64 = 0.0;
        for a in 0..resolution {
            let t1 = m1 + step(a) * sd1;
            for b in 0..resolution {
                let t2 = m2 + step(b) * sd2;
                let lhs = self.ln_modular_posterior(t1, t2);
                let rhs = self.ln_data_dependent_form(t1, t2)?;
                worst = worst.max((rhs - lhs).exp_m1().abs());
            }
        }
        Ok(worst)
    }
}
