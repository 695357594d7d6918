//! Sequential modular sampling.
//!
//! Each sweep walks the modules coarse to fine. Module `j` sees the residual
//! `e_{j-1} = y - X_1 theta_1 - ... - X_{j-1} theta_{j-1}` built from the
//! current sweep's draws and nothing finer. Every module owns an independent
//! random stream, so its draws depend on coarser modules only through the
//! residual.
//!
//! The probit sampler alternates latent utilities with one modular sweep on
//! those utilities, holding every noise variance at one.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::conjugate::{module_posterior, GaussianPrior, NoisePrior};
use crate::error::{BmmsError, Result};
use crate::multiscale::{MultiscaleDesign, ScaleContribution};
use crate::partition::{
    levels_posterior, mh_step_centers, mh_step_splits, ChangepointPartition, PartitionModuleConfig,
    PartitionState, VoronoiPartition,
};

#[derive(Debug, Clone, PartialEq)]
pub enum ModuleKind {
    /// Gaussian module on the design at its own resolution.
    Conjugate { prior: GaussianPrior, noise: NoisePrior },
    /// Step function with `pieces` contiguous blocks over the finest columns.
    Changepoint {
        pieces: usize,
        config: PartitionModuleConfig,
    },
    /// Nearest-center tessellation of a `height x width` image with `centers`
    /// cells. The finest design holds the flattened pixels.
    Voronoi {
        height: usize,
        width: usize,
        centers: usize,
        config: PartitionModuleConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleSpec {
    pub level: usize,
    pub kind: ModuleKind,
}

impl ModuleSpec {
    pub fn conjugate(level: usize, prior: GaussianPrior, noise: NoisePrior) -> Self {
        Self {
            level,
            kind: ModuleKind::Conjugate { prior, noise },
        }
    }

    pub fn changepoint(level: usize, pieces: usize) -> Self {
        Self {
            level,
            kind: ModuleKind::Changepoint {
                pieces,
                config: PartitionModuleConfig::default(),
            },
        }
    }

    pub fn voronoi(level: usize, height: usize, width: usize, centers: usize) -> Self {
        Self {
            level,
            kind: ModuleKind::Voronoi {
                height,
                width,
                centers,
                config: PartitionModuleConfig::voronoi_default(),
            },
        }
    }

    pub fn is_partition(&self) -> bool {
        !matches!(self.kind, ModuleKind::Conjugate { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Total sweeps, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Chain index; selects independent random streams for the same seed.
    pub chain: u64,
    /// Partition moves per module per sweep.
    pub n_inner: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            chain: 0,
            n_inner: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(BmmsError::InvalidConfig("thin must be at least 1".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(BmmsError::InvalidConfig(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        Ok(())
    }

    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// One stored sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// Coefficients in each module's own parameterisation: `theta_j` for a
    /// conjugate module, piece levels for a partition module.
    pub contributions: Vec<ScaleContribution>,
    /// Each module's contribution expressed on the finest columns.
    pub lifted: Vec<DVector<f64>>,
    /// Mean of each contribution given the upstream draws (and the current
    /// partition), on the finest columns.
    pub conditional_means: Vec<DVector<f64>>,
    pub sigma2: Vec<f64>,
    pub partitions: Vec<Option<PartitionState>>,
    /// Latent utilities (probit only).
    pub latent: Option<DVector<f64>>,
}

impl Draw {
    /// Finest-resolution coefficient accumulated over all modules.
    pub fn beta(&self) -> DVector<f64> {
        let mut total = DVector::zeros(self.lifted[0].len());
        for c in &self.lifted {
            total += c;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModularChain {
    pub draws: Vec<Draw>,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
    /// Fraction of accepted partition moves per module (`None` for conjugate
    /// modules).
    pub acceptance: Vec<Option<f64>>,
}

impl ModularChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn modules(&self) -> usize {
        self.draws.first().map_or(0, |d| d.lifted.len())
    }

    /// Concatenates chains in the given order.
    pub fn merge(chains: Vec<ModularChain>) -> Result<ModularChain> {
        let mut iter = chains.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| BmmsError::InvalidInput("no chains to merge".into()))?;
        let mut weights: Vec<usize> = vec![out.draws.len()];
        let mut rates = vec![out.acceptance.clone()];
        for chain in iter {
            if chain.modules() != out.modules() {
                return Err(BmmsError::InvalidInput(
                    "chains have different module counts".into(),
                ));
            }
            weights.push(chain.draws.len());
            rates.push(chain.acceptance.clone());
            out.draws.extend(chain.draws);
        }
        let total: usize = weights.iter().sum();
        out.acceptance = (0..out.acceptance.len())
            .map(|m| {
                let mut acc = 0.0;
                for (r, &w) in rates.iter().zip(&weights) {
                    acc += r[m]? * w as f64;
                }
                Some(acc / total.max(1) as f64)
            })
            .collect();
        Ok(out)
    }

    /// Posterior mean of the finest-resolution coefficient, averaging the
    /// conditional means (Rao-Blackwellised).
    pub fn mean_beta(&self) -> Result<DVector<f64>> {
        let first = self
            .draws
            .first()
            .ok_or_else(|| BmmsError::InvalidInput("empty chain".into()))?;
        let mut total = DVector::zeros(first.lifted[0].len());
        for d in &self.draws {
            for m in &d.conditional_means {
                total += m;
            }
        }
        Ok(total / self.draws.len() as f64)
    }

    /// Most frequent partition of `module` across the stored draws, with its
    /// frequency. Ties go to the state seen first.
    pub fn modal_partition(&self, module: usize) -> Option<(PartitionState, f64)> {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        for (t, d) in self.draws.iter().enumerate() {
            if let Some(Some(state)) = d.partitions.get(module) {
                counts.entry(state.key()).or_insert((0, t)).0 += 1;
            }
        }
        let (_, &(count, first)) = counts
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))?;
        let state = self.draws[first].partitions[module].clone()?;
        Some((state, count as f64 / self.draws.len() as f64))
    }
}

fn stream_rng(seed: u64, chain: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((chain << 16) | stream);
    rng
}

const LATENT_STREAM: u64 = 0xFFFF;

fn validate_specs(design: &MultiscaleDesign, specs: &[ModuleSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(BmmsError::InvalidConfig("no modules specified".into()));
    }
    for (i, spec) in specs.iter().enumerate() {
        if spec.level != i + 1 {
            return Err(BmmsError::InvalidConfig(format!(
                "module levels must be 1..K ascending; position {} has level {}",
                i + 1,
                spec.level
            )));
        }
        match &spec.kind {
            ModuleKind::Conjugate { noise, .. } => {
                design.x(spec.level)?;
                noise.validate()?;
            }
            ModuleKind::Changepoint { pieces, config } => {
                config.validate()?;
                let p = design.finest_size();
                if *pieces == 0 || pieces * config.min_segment > p {
                    return Err(BmmsError::InvalidConfig(format!(
                        "cannot cut {p} columns into {pieces} pieces of length >= {}",
                        config.min_segment
                    )));
                }
            }
            ModuleKind::Voronoi {
                height,
                width,
                centers,
                config,
            } => {
                config.validate()?;
                if height * width != design.finest_size() {
                    return Err(BmmsError::InvalidConfig(format!(
                        "{height}x{width} image does not match {} design columns",
                        design.finest_size()
                    )));
                }
                if *centers == 0 || *centers > height * width {
                    return Err(BmmsError::InvalidConfig(format!(
                        "{centers} centers on a {height}x{width} grid"
                    )));
                }
            }
        }
    }
    let mut prev = 0;
    for spec in specs {
        let size = match &spec.kind {
            ModuleKind::Changepoint { pieces, .. } => *pieces,
            ModuleKind::Voronoi { centers, .. } => *centers,
            ModuleKind::Conjugate { .. } => continue,
        };
        if size < prev {
            return Err(BmmsError::InvalidConfig(
                "partition sizes must be non-decreasing from coarse to fine".into(),
            ));
        }
        prev = size;
    }
    Ok(())
}

struct ModuleRunner<'a> {
    spec: &'a ModuleSpec,
    rng: ChaCha8Rng,
    state: Option<PartitionState>,
    proposals: usize,
    accepted: usize,
}

struct ModuleDraw {
    theta: DVector<f64>,
    lifted: DVector<f64>,
    mean_lifted: DVector<f64>,
    fitted: DVector<f64>,
    sigma2: f64,
}

impl<'a> ModuleRunner<'a> {
    fn new(spec: &'a ModuleSpec, design: &MultiscaleDesign, config: &SamplerConfig, index: usize) -> Result<Self> {
        let mut rng = stream_rng(config.seed, config.chain, index as u64);
        let state = match &spec.kind {
            ModuleKind::Conjugate { .. } => None,
            ModuleKind::Changepoint { pieces, .. } => Some(PartitionState::Changepoint(
                ChangepointPartition::even(design.finest_size(), *pieces)?,
            )),
            ModuleKind::Voronoi {
                height,
                width,
                centers,
                ..
            } => Some(PartitionState::Voronoi(VoronoiPartition::random(
                *height, *width, *centers, &mut rng,
            )?)),
        };
        Ok(Self {
            spec,
            rng,
            state,
            proposals: 0,
            accepted: 0,
        })
    }

    fn step(
        &mut self,
        design: &MultiscaleDesign,
        residual: &DVector<f64>,
        n_inner: usize,
        fixed_noise: Option<f64>,
    ) -> Result<ModuleDraw> {
        let finest = design.finest();
        match &self.spec.kind {
            ModuleKind::Conjugate { prior, noise } => {
                let noise = fixed_noise.map_or(*noise, NoisePrior::Known);
                let x = design.x(self.spec.level)?;
                let post = module_posterior(x, residual, prior, &noise)?;
                let (theta, sigma2) = post.sample(&mut self.rng)?;
                let fitted = x * &theta;
                let lifted = design.lift(&theta, self.spec.level, design.levels())?;
                let mean_lifted = design.lift(&post.mean, self.spec.level, design.levels())?;
                Ok(ModuleDraw {
                    theta,
                    lifted,
                    mean_lifted,
                    fitted,
                    sigma2,
                })
            }
            ModuleKind::Changepoint { config, .. } | ModuleKind::Voronoi { config, .. } => {
                let config = match fixed_noise {
                    Some(s2) => PartitionModuleConfig {
                        noise: NoisePrior::Known(s2),
                        ..config.clone()
                    },
                    None => config.clone(),
                };
                let mut state = self.state.take().expect("partition module has a state");
                let mut lm = None;
                for _ in 0..n_inner {
                    let accepted;
                    (state, accepted, lm) = match state {
                        PartitionState::Changepoint(s) => {
                            let step = mh_step_splits(&s, finest, residual, &config, lm, &mut self.rng)?;
                            (PartitionState::Changepoint(step.state), step.accepted, Some(step.log_marginal))
                        }
                        PartitionState::Voronoi(s) => {
                            let step = mh_step_centers(&s, finest, residual, &config, lm, &mut self.rng)?;
                            (PartitionState::Voronoi(step.state), step.accepted, Some(step.log_marginal))
                        }
                    };
                    self.proposals += 1;
                    self.accepted += usize::from(accepted);
                }
                let op = state.to_operator()?;
                let z = op.downsample(finest)?;
                let post = levels_posterior(finest, residual, &op, &config.level_prior, &config.noise)?;
                let (levels, sigma2) = post.sample(&mut self.rng)?;
                let fitted = &z * &levels;
                let lifted = op.lift(&levels)?;
                let mean_lifted = op.lift(&post.mean)?;
                state.set_levels(levels.clone());
                self.state = Some(state);
                Ok(ModuleDraw {
                    theta: levels,
                    lifted,
                    mean_lifted,
                    fitted,
                    sigma2,
                })
            }
        }
    }

    fn acceptance(&self) -> Option<f64> {
        self.state
            .as_ref()
            .map(|_| self.accepted as f64 / self.proposals.max(1) as f64)
    }
}

fn sweep(
    runners: &mut [ModuleRunner<'_>],
    design: &MultiscaleDesign,
    response: &DVector<f64>,
    n_inner: usize,
    fixed_noise: Option<f64>,
) -> Result<(Vec<ModuleDraw>, DVector<f64>)> {
    let mut residual = response.clone();
    let mut out = Vec::with_capacity(runners.len());
    for runner in runners.iter_mut() {
        let draw = runner.step(design, &residual, n_inner, fixed_noise)?;
        residual -= &draw.fitted;
        out.push(draw);
    }
    Ok((out, residual))
}

fn to_draw(runners: &[ModuleRunner<'_>], draws: Vec<ModuleDraw>, latent: Option<DVector<f64>>) -> Draw {
    let mut contributions = Vec::with_capacity(draws.len());
    let mut lifted = Vec::with_capacity(draws.len());
    let mut conditional_means = Vec::with_capacity(draws.len());
    let mut sigma2 = Vec::with_capacity(draws.len());
    for (runner, d) in runners.iter().zip(draws) {
        contributions.push(ScaleContribution::new(runner.spec.level, d.theta));
        lifted.push(d.lifted);
        conditional_means.push(d.mean_lifted);
        sigma2.push(d.sigma2);
    }
    Draw {
        contributions,
        lifted,
        conditional_means,
        sigma2,
        partitions: runners.iter().map(|r| r.state.clone()).collect(),
        latent,
    }
}

fn check_response(design: &MultiscaleDesign, y: &DVector<f64>) -> Result<()> {
    if y.len() != design.n() {
        return Err(BmmsError::InvalidDimension(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            design.n()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(BmmsError::InvalidInput("response has non-finite entries".into()));
    }
    Ok(())
}

/// Runs one chain of the sequential modular sampler.
pub fn run_modular_sampler(
    design: &MultiscaleDesign,
    y: &DVector<f64>,
    specs: &[ModuleSpec],
    config: &SamplerConfig,
) -> Result<ModularChain> {
    config.validate()?;
    validate_specs(design, specs)?;
    check_response(design, y)?;
    let mut runners = specs
        .iter()
        .enumerate()
        .map(|(i, s)| ModuleRunner::new(s, design, config, i))
        .collect::<Result<Vec<_>>>()?;
    let mut draws = Vec::with_capacity(config.stored_draws());
    for t in 0..config.iterations {
        let (sweep_draws, _) = sweep(&mut runners, design, y, config.n_inner, None)?;
        if t >= config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            draws.push(to_draw(&runners, sweep_draws, None));
        }
    }
    Ok(ModularChain {
        draws,
        seed: config.seed,
        burn_in: config.burn_in,
        thin: config.thin,
        acceptance: runners.iter().map(ModuleRunner::acceptance).collect(),
    })
}

/// Standard normal truncated to `(lower, inf)`.
///
/// Plain rejection below zero; exponential proposal with the optimal rate
/// above it.
pub fn standard_normal_above<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower <= 0.0 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > lower {
                return z;
            }
        }
    }
    let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = lower + e / rate;
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - rate).powi(2) {
            return z;
        }
    }
}

/// Latent utility `Z ~ N(mean, 1)` truncated to `Z > 0` when `positive`,
/// `Z < 0` otherwise.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, positive: bool, rng: &mut R) -> f64 {
    if positive {
        mean + standard_normal_above(-mean, rng)
    } else {
        mean - standard_normal_above(mean, rng)
    }
}

/// Probit regression by data augmentation. `y` must be 0/1.
pub fn run_probit_sampler(
    design: &MultiscaleDesign,
    y: &DVector<f64>,
    specs: &[ModuleSpec],
    config: &SamplerConfig,
) -> Result<ModularChain> {
    config.validate()?;
    validate_specs(design, specs)?;
    check_response(design, y)?;
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(BmmsError::InvalidInput(format!(
            "probit response must be 0 or 1, found {bad}"
        )));
    }
    let mut runners = specs
        .iter()
        .enumerate()
        .map(|(i, s)| ModuleRunner::new(s, design, config, i))
        .collect::<Result<Vec<_>>>()?;
    let mut latent_rng = stream_rng(config.seed, config.chain, LATENT_STREAM);
    let mut eta = DVector::zeros(design.n());
    let mut draws = Vec::with_capacity(config.stored_draws());
    for t in 0..config.iterations {
        let z = DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(eta.iter())
                .map(|(&yi, &m)| sample_truncated_normal(m, yi == 1.0, &mut latent_rng)),
        );
        let (sweep_draws, residual) = sweep(&mut runners, design, &z, config.n_inner, Some(1.0))?;
        eta = &z - residual;
        if t >= config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            draws.push(to_draw(&runners, sweep_draws, Some(z)));
        }
    }
    Ok(ModularChain {
        draws,
        seed: config.seed,
        burn_in: config.burn_in,
        thin: config.thin,
        acceptance: runners.iter().map(ModuleRunner::acceptance).collect(),
    })
}

/// Pointwise mean and equal-tailed interval of a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSummary {
    pub mean: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub alpha: f64,
    /// Per module, contributions on the finest columns.
    pub scales: Vec<BandSummary>,
    /// `accumulated[j]` sums modules `0..=j`.
    pub accumulated: Vec<BandSummary>,
    pub sigma2_mean: Vec<f64>,
}

/// Empirical quantile `x_(ceil(N q))` of sorted data (inverse ECDF).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 * q).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Mean from `means`, interval from `vectors`.
fn band(vectors: &[DVector<f64>], means: &[DVector<f64>], alpha: f64) -> BandSummary {
    let p = vectors[0].len();
    let n = means.len() as f64;
    let mut mean = DVector::zeros(p);
    let mut lower = DVector::zeros(p);
    let mut upper = DVector::zeros(p);
    let mut column = Vec::with_capacity(vectors.len());
    for i in 0..p {
        mean[i] = means.iter().map(|v| v[i]).sum::<f64>() / n;
        column.clear();
        column.extend(vectors.iter().map(|v| v[i]));
        column.sort_by(f64::total_cmp);
        lower[i] = quantile_sorted(&column, alpha / 2.0);
        upper[i] = quantile_sorted(&column, 1.0 - alpha / 2.0);
    }
    BandSummary { mean, lower, upper }
}

/// Per-scale and accumulated posterior means (averaged conditional means)
/// with `1 - alpha` equal-tailed intervals from the draws.
pub fn posterior_summaries(chain: &ModularChain, alpha: f64) -> Result<PosteriorSummary> {
    if chain.is_empty() {
        return Err(BmmsError::InvalidInput("empty chain".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(BmmsError::InvalidInput(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = chain.modules();
    let mut scales = Vec::with_capacity(k);
    let mut accumulated = Vec::with_capacity(k);
    let zeros = || -> Vec<DVector<f64>> {
        chain
            .draws
            .iter()
            .map(|d| DVector::zeros(d.lifted[0].len()))
            .collect()
    };
    let mut running = zeros();
    let mut running_means = zeros();
    for j in 0..k {
        let contributions: Vec<DVector<f64>> = chain.draws.iter().map(|d| d.lifted[j].clone()).collect();
        let means: Vec<DVector<f64>> = chain.draws.iter().map(|d| d.conditional_means[j].clone()).collect();
        for (acc, c) in running.iter_mut().zip(&contributions) {
            *acc += c;
        }
        for (acc, m) in running_means.iter_mut().zip(&means) {
            *acc += m;
        }
        scales.push(band(&contributions, &means, alpha));
        accumulated.push(band(&running, &running_means, alpha));
    }
    let sigma2_mean = (0..k)
        .map(|j| chain.draws.iter().map(|d| d.sigma2[j]).sum::<f64>() / chain.len() as f64)
        .collect();
    Ok(PosteriorSummary {
        alpha,
        scales,
        accumulated,
        sigma2_mean,
    })
}

fn autocovariances(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    (0..n)
        .map(|lag| {
            (0..n - lag)
                .map(|i| (x[i] - mean) * (x[i + lag] - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Effective sample size with Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let acov = autocovariances(x);
    if acov[0] <= 0.0 {
        return n as f64;
    }
    let rho: Vec<f64> = acov.iter().map(|c| c / acov[0]).collect();
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho[k] + rho[k + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Split potential scale reduction over chains of equal length.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let half = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 2 {
        return Err(BmmsError::InvalidInput("chains too short for split R-hat".into()));
    }
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half..2 * half]])
        .collect();
    let m = pieces.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = pieces.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = pieces
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Linear predictor of the finest design at the posterior mean.
pub fn posterior_mean_predictor(chain: &ModularChain, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let beta = chain.mean_beta()?;
    if x.ncols() != beta.len() {
        return Err(BmmsError::InvalidDimension(format!(
            "design has {} columns, coefficients have {}",
            x.ncols(),
            beta.len()
        )));
    }
    Ok(x * beta)
}
