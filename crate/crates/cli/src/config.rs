//! Flat key-value run configuration (TOML syntax) plus command-line
//! overrides.

use std::path::{Path, PathBuf};

use bmms::conjugate::{GaussianPrior, NoisePrior};
use bmms::multiscale::CoarseningMode;
use bmms::partition::PartitionModuleConfig;
use bmms::sampler::{ModuleKind, ModuleSpec, SamplerConfig};
use bmms::simgen::{SimulationDesign, TestFunction};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub rho: Option<f64>,
    pub sigma_eps: Option<f64>,
    pub function: Option<String>,
    pub n_out: Option<usize>,

    pub x_path: Option<PathBuf>,
    pub y_path: Option<PathBuf>,
    pub beta_true_path: Option<PathBuf>,
    pub modules: Option<String>,
    pub prior: Option<String>,
    pub noise: Option<String>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub n_inner: Option<usize>,
    pub width: Option<usize>,
    pub min_segment: Option<usize>,
    pub alpha: Option<f64>,
    pub mode: Option<String>,
    pub image_height: Option<usize>,
    pub image_width: Option<usize>,
    pub probit: Option<bool>,

    pub fit_dir: Option<PathBuf>,
    pub x_out_path: Option<PathBuf>,
    pub y_out_path: Option<PathBuf>,

    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub out: Option<PathBuf>,
    pub figures: Option<bool>,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub out: Option<PathBuf>,
    pub no_figures: bool,
    pub probit: bool,
}

impl RawConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut raw = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str::<RawConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => RawConfig::default(),
        };
        if overrides.seed.is_some() {
            raw.seed = overrides.seed;
        }
        if overrides.chains.is_some() {
            raw.chains = overrides.chains;
        }
        if overrides.out.is_some() {
            raw.out = overrides.out.clone();
        }
        if overrides.no_figures {
            raw.figures = Some(false);
        }
        if overrides.probit {
            raw.probit = Some(true);
        }
        Ok(raw)
    }

    fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (config key `seed` or --seed)".into()))
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("bmms_out"))
    }

    fn required_path(&self, value: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        value
            .clone()
            .ok_or_else(|| CliError::Config(format!("missing config key `{key}`")))
    }
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub design: SimulationDesign,
    pub n_out: usize,
    pub out: PathBuf,
}

impl SimulateConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let defaults = SimulationDesign::default();
        let function: TestFunction = match &raw.function {
            Some(name) => name.parse()?,
            None => defaults.function,
        };
        let design = SimulationDesign {
            n: raw.n.unwrap_or(defaults.n),
            p: raw.p.unwrap_or(defaults.p),
            rho: raw.rho.unwrap_or(defaults.rho),
            sigma_eps: raw.sigma_eps.unwrap_or(defaults.sigma_eps),
            function,
            seed: raw.seed()?,
        };
        design.validate()?;
        Ok(Self {
            design,
            n_out: raw.n_out.unwrap_or(100),
            out: raw.out(),
        })
    }
}

/// One entry of the `modules` list, before the design is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleEntry {
    Conjugate(usize),
    Changepoint(usize),
    Voronoi(usize),
}

impl std::fmt::Display for ModuleEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModuleEntry::Conjugate(s) => write!(f, "conjugate:{s}"),
            ModuleEntry::Changepoint(s) => write!(f, "changepoint:{s}"),
            ModuleEntry::Voronoi(s) => write!(f, "voronoi:{s}"),
        }
    }
}

pub fn parse_modules(text: &str) -> CliResult<Vec<ModuleEntry>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (kind, size) = item
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("module {item:?} must look like kind:size")))?;
        let size: usize = size
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("module {item:?}: size is not an integer")))?;
        if size == 0 {
            return Err(CliError::Config(format!("module {item:?}: size must be positive")));
        }
        out.push(match kind.trim() {
            "conjugate" => ModuleEntry::Conjugate(size),
            "changepoint" => ModuleEntry::Changepoint(size),
            "voronoi" => ModuleEntry::Voronoi(size),
            other => {
                return Err(CliError::Config(format!(
                    "unknown module kind {other:?} (conjugate, changepoint or voronoi)"
                )))
            }
        });
    }
    if out.is_empty() {
        return Err(CliError::Config("`modules` lists no modules".into()));
    }
    let first_partition = out
        .iter()
        .position(|m| !matches!(m, ModuleEntry::Conjugate(_)))
        .unwrap_or(out.len());
    if out[first_partition..]
        .iter()
        .any(|m| matches!(m, ModuleEntry::Conjugate(_)))
    {
        return Err(CliError::Config(
            "conjugate modules must precede partition modules".into(),
        ));
    }
    Ok(out)
}

pub fn parse_prior(text: &str) -> CliResult<GaussianPrior> {
    match text.trim() {
        "unit" => Ok(GaussianPrior::unit_information()),
        "flat" => Ok(GaussianPrior::flat()),
        other => match other.strip_prefix("ridge:") {
            Some(tau) => {
                let tau: f64 = tau
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("bad ridge scale in {other:?}")))?;
                if tau.is_nan() || tau <= 0.0 {
                    return Err(CliError::Config("ridge scale must be positive".into()));
                }
                Ok(GaussianPrior::ridge(tau))
            }
            None => Err(CliError::Config(format!(
                "unknown prior {other:?} (unit, flat or ridge:tau)"
            ))),
        },
    }
}

pub fn parse_noise(text: &str) -> CliResult<NoisePrior> {
    let text = text.trim();
    let bad = || CliError::Config(format!("bad noise prior {text:?} (invgamma:a,b, jeffreys or known:s2)"));
    let noise = if text == "jeffreys" {
        NoisePrior::Jeffreys
    } else if let Some(rest) = text.strip_prefix("invgamma:") {
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        NoisePrior::InvGamma {
            shape: a.trim().parse().map_err(|_| bad())?,
            rate: b.trim().parse().map_err(|_| bad())?,
        }
    } else if let Some(s2) = text.strip_prefix("known:") {
        NoisePrior::Known(s2.trim().parse().map_err(|_| bad())?)
    } else {
        return Err(bad());
    };
    noise.validate()?;
    Ok(noise)
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub x_path: PathBuf,
    pub y_path: PathBuf,
    pub beta_true_path: Option<PathBuf>,
    pub modules: Vec<ModuleEntry>,
    pub prior: GaussianPrior,
    pub noise: NoisePrior,
    pub partition: PartitionModuleConfig,
    pub voronoi_width: usize,
    pub image: Option<(usize, usize)>,
    pub sampler: SamplerConfig,
    pub chains: usize,
    pub alpha: f64,
    pub mode: CoarseningMode,
    pub probit: bool,
    pub out: PathBuf,
    pub figures: bool,
}

impl FitConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let modules = parse_modules(
            raw.modules
                .as_deref()
                .unwrap_or("changepoint:1,changepoint:2,changepoint:4"),
        )?;
        let prior = parse_prior(raw.prior.as_deref().unwrap_or("unit"))?;
        let noise = parse_noise(raw.noise.as_deref().unwrap_or("invgamma:1,1"))?;
        let defaults = SamplerConfig::default();
        let sampler = SamplerConfig {
            iterations: raw.iterations.unwrap_or(defaults.iterations),
            burn_in: raw.burn_in.unwrap_or(defaults.burn_in),
            thin: raw.thin.unwrap_or(defaults.thin),
            seed: raw.seed()?,
            chain: 0,
            n_inner: raw.n_inner.unwrap_or(defaults.n_inner),
        };
        sampler.validate()?;
        let partition = PartitionModuleConfig {
            level_prior: prior.clone(),
            noise,
            width: raw.width.unwrap_or(3),
            min_segment: raw.min_segment.unwrap_or(1),
        };
        partition.validate()?;
        let alpha = raw.alpha.unwrap_or(0.05);
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(CliError::Config(format!("alpha {alpha} outside (0, 1)")));
        }
        let mode = match raw.mode.as_deref().unwrap_or("sum") {
            "sum" => CoarseningMode::Sum,
            "average" => CoarseningMode::Average,
            other => return Err(CliError::Config(format!("unknown mode {other:?} (sum or average)"))),
        };
        let image = match (raw.image_height, raw.image_width) {
            (Some(h), Some(w)) => Some((h, w)),
            (None, None) => None,
            _ => {
                return Err(CliError::Config(
                    "image_height and image_width must be given together".into(),
                ))
            }
        };
        if modules.iter().any(|m| matches!(m, ModuleEntry::Voronoi(_))) && image.is_none() {
            return Err(CliError::Config(
                "voronoi modules need image_height and image_width".into(),
            ));
        }
        let chains = raw.chains.unwrap_or(1);
        if chains == 0 {
            return Err(CliError::Config("chains must be at least 1".into()));
        }
        Ok(Self {
            x_path: raw.required_path(&raw.x_path, "x_path")?,
            y_path: raw.required_path(&raw.y_path, "y_path")?,
            beta_true_path: raw.beta_true_path.clone(),
            modules,
            prior,
            noise,
            voronoi_width: raw.width.unwrap_or(2),
            partition,
            image,
            sampler,
            chains,
            alpha,
            mode,
            probit: raw.probit.unwrap_or(false),
            out: raw.out(),
            figures: raw.figures.unwrap_or(true),
        })
    }

    /// Resolution sizes of the conjugate modules, with the design width
    /// appended when the last one is coarser.
    pub fn block_sizes(&self, p: usize) -> CliResult<Vec<usize>> {
        let mut sizes: Vec<usize> = self
            .modules
            .iter()
            .filter_map(|m| match m {
                ModuleEntry::Conjugate(s) => Some(*s),
                _ => None,
            })
            .collect();
        if sizes.windows(2).any(|w| w[1] < w[0]) || sizes.last().is_some_and(|&s| s > p) {
            return Err(CliError::Config(format!(
                "conjugate sizes {sizes:?} must be non-decreasing and at most {p}"
            )));
        }
        if sizes.last() != Some(&p) {
            sizes.push(p);
        }
        Ok(sizes)
    }

    pub fn specs(&self) -> Vec<ModuleSpec> {
        self.modules
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let level = i + 1;
                let kind = match *m {
                    ModuleEntry::Conjugate(_) => ModuleKind::Conjugate {
                        prior: self.prior.clone(),
                        noise: self.noise,
                    },
                    ModuleEntry::Changepoint(pieces) => ModuleKind::Changepoint {
                        pieces,
                        config: self.partition.clone(),
                    },
                    ModuleEntry::Voronoi(centers) => {
                        let (height, width) = self.image.expect("checked at load");
                        ModuleKind::Voronoi {
                            height,
                            width,
                            centers,
                            config: PartitionModuleConfig {
                                width: self.voronoi_width,
                                ..self.partition.clone()
                            },
                        }
                    }
                };
                ModuleSpec { level, kind }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PredictConfig {
    pub fit_dir: PathBuf,
    pub x_path: PathBuf,
    pub y_path: Option<PathBuf>,
    pub out: PathBuf,
}

impl PredictConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let out = raw.out();
        Ok(Self {
            fit_dir: raw.fit_dir.clone().unwrap_or_else(|| out.clone()),
            x_path: raw.required_path(&raw.x_out_path.clone().or(raw.x_path.clone()), "x_out_path")?,
            y_path: raw.y_out_path.clone(),
            out,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SummarizeConfig {
    pub fit_dir: PathBuf,
    pub beta_true_path: Option<PathBuf>,
    pub x_out_path: Option<PathBuf>,
    pub y_out_path: Option<PathBuf>,
    pub out: PathBuf,
}

impl SummarizeConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let out = raw.out();
        Ok(Self {
            fit_dir: raw.fit_dir.clone().unwrap_or_else(|| out.clone()),
            beta_true_path: raw.beta_true_path.clone(),
            x_out_path: raw.x_out_path.clone(),
            y_out_path: raw.y_out_path.clone(),
            out,
        })
    }
}
