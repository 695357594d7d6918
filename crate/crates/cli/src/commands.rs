//! The four subcommands. Every artifact is a pure function of the config and
//! seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bmms::multiscale::{CoarseningOperator, MultiscaleDesign};
use bmms::sampler::{
    posterior_summaries, run_modular_sampler, run_probit_sampler, ModularChain, PosteriorSummary,
    SamplerConfig,
};
use bmms::simgen::{compute_metrics, gen_design, gen_holdout};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{FitConfig, ModuleEntry, PredictConfig, SimulateConfig, SummarizeConfig};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, read_matrix, read_vector, write_matrix, write_rows, write_text, write_vector};
use crate::svg::{decomposition, Panel};

/// Environment variable capping the number of chains run at once.
pub const THREADS_ENV: &str = "BMMS_THREADS";

pub const META_FILE: &str = "fit_meta.toml";

pub fn simulate(cfg: &SimulateConfig) -> CliResult<()> {
    ensure_dir(&cfg.out)?;
    let data = gen_design(&cfg.design)?;
    write_matrix(&cfg.out.join("X.csv"), "x", &data.x)?;
    write_vector(&cfg.out.join("y.csv"), "y", &data.y)?;
    write_vector(&cfg.out.join("beta_true.csv"), "beta", &data.beta)?;
    if cfg.n_out > 0 {
        let holdout = gen_holdout(&cfg.design, cfg.n_out)?;
        write_matrix(&cfg.out.join("X_out.csv"), "x", &holdout.x)?;
        write_vector(&cfg.out.join("y_out.csv"), "y", &holdout.y)?;
    }
    Ok(())
}

/// Written next to the fit artifacts; read back by `predict` and
/// `summarize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub n: usize,
    pub p: usize,
    pub modules: Vec<String>,
    pub probit: bool,
    pub seed: String,
    pub chains: usize,
    pub draws: usize,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_true_path: Option<PathBuf>,
}

impl FitMeta {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {}", path.display(), e.message())))
    }
}

/// Area under the ROC curve by the rank-sum statistic, averaging tied
/// ranks. `None` when one class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Some((sum - (n1 * (n1 + 1)) as f64 / 2.0) / (n1 * n0) as f64)
}

fn accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    let hits = scores.iter().zip(labels).filter(|(&s, &l)| (s > 0.0) == l).count();
    hits as f64 / scores.len().max(1) as f64
}

fn binary_labels(y: &DVector<f64>) -> CliResult<Vec<bool>> {
    y.iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => Err(CliError::Input(format!("binary response expected, found {other}"))),
        })
        .collect()
}

fn thread_count(chains: usize) -> CliResult<usize> {
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(cap.min(chains).max(1))
}

/// Runs `cfg.chains` chains on a bounded pool and concatenates them in
/// chain order.
fn run_chains(
    cfg: &FitConfig,
    design: &MultiscaleDesign,
    y: &DVector<f64>,
) -> CliResult<ModularChain> {
    let specs = cfg.specs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg.chains)?)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let chains: Vec<ModularChain> = pool.install(|| {
        (0..cfg.chains)
            .into_par_iter()
            .map(|c| {
                let sampler = SamplerConfig {
                    chain: c as u64,
                    ..cfg.sampler.clone()
                };
                if cfg.probit {
                    run_probit_sampler(design, y, &specs, &sampler)
                } else {
                    run_modular_sampler(design, y, &specs, &sampler)
                }
            })
            .collect::<bmms::Result<Vec<_>>>()
    })?;
    Ok(ModularChain::merge(chains)?)
}

/// Minimum-norm least squares of the running residual on `x * op_j`, one
/// level at a time.
pub fn flat_rss_ladder(x: &DMatrix<f64>, y: &DVector<f64>, operators: &[CoarseningOperator]) -> CliResult<Vec<f64>> {
    let mut residual = y.clone();
    let mut out = Vec::with_capacity(operators.len());
    for op in operators {
        let z = op.downsample(x)?;
        let svd = z.clone().svd(true, true);
        let tol = svd.singular_values.max() * z.nrows().max(z.ncols()) as f64 * f64::EPSILON;
        let theta = svd.solve(&residual, tol).map_err(|e| CliError::Numerical(e.to_string()))?;
        let next = &residual - z * theta;
        // zero is always feasible; keep it if rounding made the fit worse
        if next.norm_squared() <= residual.norm_squared() {
            residual = next;
        }
        out.push(residual.norm_squared());
    }
    Ok(out)
}

fn ladder_operators(cfg: &FitConfig, design: &MultiscaleDesign, chain: &ModularChain) -> CliResult<Vec<CoarseningOperator>> {
    cfg.modules
        .iter()
        .enumerate()
        .map(|(j, m)| match m {
            ModuleEntry::Conjugate(_) => Ok(design.lift_operator(j + 1, design.levels())?),
            _ => {
                let (state, _) = chain
                    .modal_partition(j)
                    .ok_or_else(|| CliError::Input(format!("module {} stored no partitions", j + 1)))?;
                Ok(state.to_operator()?)
            }
        })
        .collect()
}

fn num(v: f64) -> String {
    format!("{v:>12.6}")
}

fn summary_text(
    cfg: &FitConfig,
    design: &MultiscaleDesign,
    chain: &ModularChain,
    summary: &PosteriorSummary,
    beta_true: Option<&DVector<f64>>,
    ladder: &[f64],
    probit: Option<(f64, Option<f64>)>,
) -> String {
    let mut s = String::new();
    let labels: Vec<String> = cfg.modules.iter().map(ToString::to_string).collect();
    let _ = writeln!(s, "observations  {}", design.n());
    let _ = writeln!(s, "columns       {}", design.finest_size());
    let _ = writeln!(s, "modules       {}", labels.join(", "));
    let _ = writeln!(s, "chains        {}", cfg.chains);
    let _ = writeln!(s, "draws         {}", chain.len());
    let _ = writeln!(s, "interval      {}%", (1.0 - cfg.alpha) * 100.0);
    for (j, label) in labels.iter().enumerate() {
        let _ = writeln!(s, "\n[scale {}] {label}", j + 1);
        if let Some(rate) = chain.acceptance[j] {
            let _ = writeln!(s, "acceptance    {rate:.4}");
        }
        if !cfg.probit {
            let _ = writeln!(s, "sigma2 mean   {:.6}", summary.sigma2_mean[j]);
        }
        if let Some((state, freq)) = chain.modal_partition(j) {
            let key = state.key();
            let key = if key.is_empty() { "-".to_string() } else { key };
            let _ = writeln!(s, "modal         {key} (frequency {freq:.4})");
        }
        let _ = writeln!(
            s,
            "{:>6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "index", "mean", "lower", "upper", "acc_mean", "acc_lower", "acc_upper"
        );
        let (sc, acc) = (&summary.scales[j], &summary.accumulated[j]);
        for i in 0..sc.mean.len() {
            let _ = writeln!(
                s,
                "{:>6} {} {} {} {} {} {}",
                i + 1,
                num(sc.mean[i]),
                num(sc.lower[i]),
                num(sc.upper[i]),
                num(acc.mean[i]),
                num(acc.lower[i]),
                num(acc.upper[i])
            );
        }
    }
    let total = summary.accumulated.last().expect("at least one module");
    let _ = writeln!(s, "\n[total]");
    let _ = write!(s, "{:>6} {:>12} {:>12} {:>12}", "index", "mean", "lower", "upper");
    if beta_true.is_some() {
        let _ = write!(s, " {:>12}", "truth");
    }
    s.push('\n');
    for i in 0..total.mean.len() {
        let _ = write!(
            s,
            "{:>6} {} {} {}",
            i + 1,
            num(total.mean[i]),
            num(total.lower[i]),
            num(total.upper[i])
        );
        if let Some(t) = beta_true {
            let _ = write!(s, " {}", num(t[i]));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "\n[rss ladder]");
    for (j, r) in ladder.iter().enumerate() {
        let _ = writeln!(s, "{:>6} {}", j + 1, num(*r));
    }
    if let Some((acc, auc)) = probit {
        let _ = writeln!(s, "\n[probit]");
        let _ = writeln!(s, "accuracy      {acc:.4}");
        match auc {
            Some(a) => {
                let _ = writeln!(s, "auc           {a:.4}");
            }
            None => {
                let _ = writeln!(s, "auc           NA");
            }
        }
    }
    s
}

fn summary_csv(path: &Path, summary: &PosteriorSummary) -> CliResult<()> {
    let header: Vec<String> = ["panel", "index", "mean", "lower", "upper"].map(String::from).to_vec();
    let k = summary.scales.len();
    let mut rows = Vec::new();
    let mut panel = |name: String, band: &bmms::sampler::BandSummary| {
        for i in 0..band.mean.len() {
            rows.push(vec![
                name.clone(),
                (i + 1).to_string(),
                band.mean[i].to_string(),
                band.lower[i].to_string(),
                band.upper[i].to_string(),
            ]);
        }
    };
    for j in 0..k {
        panel(format!("scale{}", j + 1), &summary.scales[j]);
    }
    for j in 0..k {
        panel(format!("accumulated{}", j + 1), &summary.accumulated[j]);
    }
    panel("total".into(), &summary.accumulated[k - 1]);
    write_rows(path, &header, rows)
}

fn write_draws(out: &Path, chain: &ModularChain, per_chain: usize) -> CliResult<()> {
    let k = chain.modules();
    let chain_id = |t: usize| (t / per_chain.max(1)).to_string();
    for j in 0..k {
        let p = chain.draws[0].lifted[j].len();
        let mut header = vec!["chain".to_string()];
        header.extend((1..=p).map(|i| format!("beta{i}")));
        write_rows(
            &out.join(format!("draws_scale{}.csv", j + 1)),
            &header,
            chain.draws.iter().enumerate().map(|(t, d)| {
                std::iter::once(chain_id(t))
                    .chain(d.lifted[j].iter().map(|v| v.to_string()))
                    .collect::<Vec<_>>()
            }),
        )?;
        if chain.draws[0].partitions[j].is_some() {
            write_rows(
                &out.join(format!("partitions_scale{}.csv", j + 1)),
                &["chain".to_string(), "partition".to_string()],
                chain.draws.iter().enumerate().map(|(t, d)| {
                    let key = d.partitions[j].as_ref().map(|s| s.key()).unwrap_or_default();
                    vec![chain_id(t), key]
                }),
            )?;
        }
    }
    let mut header = vec!["chain".to_string()];
    header.extend((1..=k).map(|j| format!("scale{j}")));
    write_rows(
        &out.join("sigma2.csv"),
        &header,
        chain.draws.iter().enumerate().map(|(t, d)| {
            std::iter::once(chain_id(t))
                .chain(d.sigma2.iter().map(|v| v.to_string()))
                .collect::<Vec<_>>()
        }),
    )
}

pub fn fit(cfg: &FitConfig) -> CliResult<ModularChain> {
    let x = read_matrix(&cfg.x_path)?;
    let y = read_vector(&cfg.y_path)?;
    if x.nrows() != y.len() {
        return Err(CliError::Input(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    let p = x.ncols();
    let beta_true = match &cfg.beta_true_path {
        Some(path) => {
            let b = read_vector(path)?;
            if b.len() != p {
                return Err(CliError::Input(format!(
                    "{} has {} entries for {p} design columns",
                    path.display(),
                    b.len()
                )));
            }
            Some(b)
        }
        None => None,
    };
    let labels = if cfg.probit { Some(binary_labels(&y)?) } else { None };
    let sizes = cfg.block_sizes(p)?;
    let design = MultiscaleDesign::with_block_sizes(x, &sizes, cfg.mode)?;
    let chain = run_chains(cfg, &design, &y)?;
    let summary = posterior_summaries(&chain, cfg.alpha)?;
    let beta_hat = chain.mean_beta()?;
    let ladder = flat_rss_ladder(design.finest(), &y, &ladder_operators(cfg, &design, &chain)?)?;
    let probit = labels.as_ref().map(|l| {
        let eta = design.finest() * &beta_hat;
        (accuracy(eta.as_slice(), l), auc(eta.as_slice(), l))
    });

    ensure_dir(&cfg.out)?;
    let out = &cfg.out;
    write_draws(out, &chain, cfg.sampler.stored_draws())?;
    write_vector(&out.join("beta_hat.csv"), "beta", &beta_hat)?;
    let contributions = DMatrix::from_columns(&summary.scales.iter().map(|b| b.mean.clone()).collect::<Vec<_>>());
    write_matrix(&out.join("contributions.csv"), "scale", &contributions)?;
    write_rows(
        &out.join("rss_ladder.csv"),
        &["level".to_string(), "rss".to_string()],
        ladder.iter().enumerate().map(|(j, r)| vec![(j + 1).to_string(), r.to_string()]),
    )?;
    write_text(
        &out.join("summary.txt"),
        &summary_text(cfg, &design, &chain, &summary, beta_true.as_ref(), &ladder, probit),
    )?;
    summary_csv(&out.join("summary.csv"), &summary)?;
    if let Some((acc, auc)) = probit {
        write_rows(
            &out.join("classification.csv"),
            &["metric".to_string(), "value".to_string()],
            [
                vec!["accuracy".to_string(), acc.to_string()],
                vec!["auc".to_string(), auc.map_or("NA".into(), |a| a.to_string())],
            ],
        )?;
    }
    let meta = FitMeta {
        n: design.n(),
        p,
        modules: cfg.modules.iter().map(ToString::to_string).collect(),
        probit: cfg.probit,
        seed: cfg.sampler.seed.to_string(),
        chains: cfg.chains,
        draws: chain.len(),
        alpha: cfg.alpha,
        beta_true_path: cfg.beta_true_path.clone(),
    };
    let meta_text = toml::to_string(&meta).map_err(|e| CliError::Input(e.to_string()))?;
    write_text(&out.join(META_FILE), &meta_text)?;
    if cfg.figures {
        let mut panels: Vec<Panel> = summary
            .scales
            .iter()
            .zip(&cfg.modules)
            .enumerate()
            .map(|(j, (b, m))| Panel {
                title: format!("scale {} ({m})", j + 1),
                mean: &b.mean,
                lower: &b.lower,
                upper: &b.upper,
                truth: None,
            })
            .collect();
        let total = summary.accumulated.last().expect("at least one module");
        panels.push(Panel {
            title: "total".into(),
            mean: &total.mean,
            lower: &total.lower,
            upper: &total.upper,
            truth: beta_true.as_ref(),
        });
        write_text(&out.join("decomposition.svg"), &decomposition(&panels))?;
    }
    Ok(chain)
}

pub fn predict(cfg: &PredictConfig) -> CliResult<()> {
    let meta = FitMeta::load(&cfg.fit_dir)?;
    let beta = read_vector(&cfg.fit_dir.join("beta_hat.csv"))?;
    let x = read_matrix(&cfg.x_path)?;
    if x.ncols() != beta.len() {
        return Err(CliError::Input(format!(
            "{} has {} columns but the fit used {}",
            cfg.x_path.display(),
            x.ncols(),
            beta.len()
        )));
    }
    let eta = &x * &beta;
    ensure_dir(&cfg.out)?;
    let mut metrics: Vec<(String, String)> = Vec::new();
    if meta.probit {
        let normal = Normal::standard();
        let prob: Vec<f64> = eta.iter().map(|&e| normal.cdf(e)).collect();
        write_rows(
            &cfg.out.join("predictions.csv"),
            &["eta", "probability", "label"].map(String::from),
            eta.iter().zip(&prob).map(|(e, pr)| {
                vec![e.to_string(), pr.to_string(), u8::from(*pr >= 0.5).to_string()]
            }),
        )?;
        if let Some(path) = &cfg.y_path {
            let y = read_vector(path)?;
            check_len(path, &y, x.nrows())?;
            let labels = binary_labels(&y)?;
            let hits = prob.iter().zip(&labels).filter(|(&pr, &l)| (pr >= 0.5) == l).count();
            metrics.push(("accuracy".into(), (hits as f64 / labels.len().max(1) as f64).to_string()));
            metrics.push((
                "auc".into(),
                auc(eta.as_slice(), &labels).map_or("NA".into(), |a| a.to_string()),
            ));
        }
    } else {
        write_vector(&cfg.out.join("predictions.csv"), "prediction", &eta)?;
        if let Some(path) = &cfg.y_path {
            let y = read_vector(path)?;
            check_len(path, &y, x.nrows())?;
            let err = &y - &eta;
            let n = y.len().max(1) as f64;
            metrics.push(("mape".into(), (err.abs().sum() / n).to_string()));
            metrics.push(("mse".into(), (err.norm_squared() / n).to_string()));
        }
    }
    if !metrics.is_empty() {
        write_rows(
            &cfg.out.join("prediction_metrics.csv"),
            &["metric", "value"].map(String::from),
            metrics.iter().map(|(k, v)| vec![k.clone(), v.clone()]),
        )?;
    }
    Ok(())
}

fn check_len(path: &Path, y: &DVector<f64>, n: usize) -> CliResult<()> {
    if y.len() != n {
        return Err(CliError::Input(format!(
            "{} has {} rows, the design has {n}",
            path.display(),
            y.len()
        )));
    }
    Ok(())
}

pub fn summarize(cfg: &SummarizeConfig) -> CliResult<()> {
    let dir = &cfg.fit_dir;
    let meta = FitMeta::load(dir)?;
    let beta_hat = read_vector(&dir.join("beta_hat.csv"))?;
    let contributions = read_matrix(&dir.join("contributions.csv"))?;
    let ladder_table = read_matrix(&dir.join("rss_ladder.csv"))?;
    if ladder_table.ncols() != 2 {
        return Err(CliError::Input("rss_ladder.csv must have columns level,rss".into()));
    }
    let ladder: Vec<f64> = ladder_table.column(1).iter().copied().collect();
    let truth_path = cfg
        .beta_true_path
        .clone()
        .or(meta.beta_true_path)
        .ok_or_else(|| CliError::Config("summarize needs `beta_true_path` (config or fit)".into()))?;
    let beta_true = read_vector(&truth_path)?;
    let holdout = match (&cfg.x_out_path, &cfg.y_out_path) {
        (Some(xp), Some(yp)) => Some((read_matrix(xp)?, read_vector(yp)?)),
        (None, None) => None,
        _ => {
            return Err(CliError::Config(
                "x_out_path and y_out_path must be given together".into(),
            ))
        }
    };
    let (x_out, y_out) = holdout
        .clone()
        .unwrap_or_else(|| (DMatrix::zeros(0, beta_hat.len()), DVector::zeros(0)));
    let columns: Vec<DVector<f64>> = contributions.column_iter().map(|c| c.into_owned()).collect();
    let report = compute_metrics(&beta_hat, &beta_true, &x_out, &y_out, &columns, ladder)?;
    let mape = holdout.as_ref().map(|_| report.mape);

    let mut rows: Vec<(String, Option<f64>)> = vec![
        ("beta_mse".into(), Some(report.beta_mse)),
        ("mape".into(), mape),
    ];
    for (j, v) in report.contribution_norms.iter().enumerate() {
        rows.push((format!("norm_scale{}", j + 1), Some(*v)));
    }
    for (j, v) in report.rss.iter().enumerate() {
        rows.push((format!("rss_level{}", j + 1), Some(*v)));
    }
    ensure_dir(&cfg.out)?;
    write_rows(
        &cfg.out.join("metrics.csv"),
        &["metric", "value"].map(String::from),
        rows.iter()
            .map(|(k, v)| vec![k.clone(), v.map_or("NA".into(), |x| x.to_string())]),
    )?;
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut text = String::new();
    for (k, v) in &rows {
        let value = v.map_or(format!("{:>16}", "NA"), |x| format!("{x:>16.8}"));
        let _ = writeln!(text, "{k:<width$}  {value}");
    }
    write_text(&cfg.out.join("metrics.txt"), &text)
}
