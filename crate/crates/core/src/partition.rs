//! Coarsening modules whose operator is itself unknown.
//!
//! A 1D changepoint partition splits the columns `1..=p` into `H` contiguous
//! pieces; a 2D Voronoi partition assigns every pixel of an image grid to its
//! nearest center. Either one induces a coarsening operator that sums the
//! columns of each piece, so the module regresses the residual on `X L` with
//! one level per piece.
//!
//! Partition moves are Metropolis-Hastings steps on the marginal likelihood,
//! with the levels and the noise variance integrated out under the conjugate
//! prior. Proposals are symmetric; anything that leaves the valid set is
//! rejected outright.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::conjugate::{module_posterior, GaussianModulePosterior, GaussianPrior, NoisePrior};
use crate::error::{BmmsError, Result};
use crate::multiscale::{CoarseningMode, CoarseningOperator};

/// Step function on `1..=p` with `H = splits.len() + 1` pieces.
///
/// `splits[h]` is the last (1-based) column of piece `h`, so piece `h` covers
/// `t_{h-1} + 1 ..= t_h` with `t_0 = 0` and `t_H = p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangepointPartition {
    p: usize,
    splits: Vec<usize>,
    pub levels: DVector<f64>,
}

impl ChangepointPartition {
    pub fn new(p: usize, splits: Vec<usize>) -> Result<Self> {
        if p == 0 {
            return Err(BmmsError::InvalidPartition("empty column range".into()));
        }
        let mut prev = 0;
        for &t in &splits {
            if t <= prev || t >= p {
                return Err(BmmsError::InvalidPartition(format!(
                    "splits {splits:?} must be strictly increasing within 1..{p}"
                )));
            }
            prev = t;
        }
        let pieces = splits.len() + 1;
        Ok(Self {
            p,
            splits,
            levels: DVector::zeros(pieces),
        })
    }

    /// Near-equal contiguous pieces, larger first.
    pub fn even(p: usize, pieces: usize) -> Result<Self> {
        if pieces == 0 || pieces > p {
            return Err(BmmsError::InvalidPartition(format!(
                "cannot cut {p} columns into {pieces} pieces"
            )));
        }
        let base = p / pieces;
        let extra = p % pieces;
        let mut splits = Vec::with_capacity(pieces - 1);
        let mut end = 0;
        for h in 0..pieces - 1 {
            end += base + usize::from(h < extra);
            splits.push(end);
        }
        Self::new(p, splits)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn splits(&self) -> &[usize] {
        &self.splits
    }

    pub fn pieces(&self) -> usize {
        self.splits.len() + 1
    }

    /// Lengths of the pieces, in order.
    pub fn piece_lengths(&self) -> Vec<usize> {
        let mut prev = 0;
        self.splits
            .iter()
            .chain(std::iter::once(&self.p))
            .map(|&t| {
                let len = t - prev;
                prev = t;
                len
            })
            .collect()
    }

    pub fn to_operator(&self) -> Result<CoarseningOperator> {
        let mut assignment = Vec::with_capacity(self.p);
        for (h, len) in self.piece_lengths().into_iter().enumerate() {
            assignment.extend(std::iter::repeat_n(h, len));
        }
        CoarseningOperator::from_assignment(assignment, self.pieces(), CoarseningMode::Sum)
    }

    /// Coefficient vector on the full column grid: `b_h` on piece `h`.
    pub fn coefficients(&self) -> Result<DVector<f64>> {
        self.to_operator()?.lift(&self.levels)
    }

    fn with_split(&self, index: usize, value: usize) -> Self {
        let mut next = self.clone();
        next.splits[index] = value;
        next
    }
}

/// Nearest-center tessellation of a `height x width` pixel grid.
///
/// Pixels are flattened row-major (`row * width + col`). Distances are
/// Euclidean on integer coordinates; ties go to the lowest center index.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiPartition {
    height: usize,
    width: usize,
    centers: Vec<(usize, usize)>,
    pub levels: DVector<f64>,
}

impl VoronoiPartition {
    pub fn new(height: usize, width: usize, centers: Vec<(usize, usize)>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(BmmsError::InvalidPartition("empty pixel grid".into()));
        }
        if centers.is_empty() {
            return Err(BmmsError::InvalidPartition("no centers".into()));
        }
        for (i, &(r, c)) in centers.iter().enumerate() {
            if r >= height || c >= width {
                return Err(BmmsError::InvalidPartition(format!(
                    "center ({r}, {c}) outside {height}x{width} grid"
                )));
            }
            if centers[..i].contains(&(r, c)) {
                return Err(BmmsError::InvalidPartition(format!(
                    "duplicate center ({r}, {c})"
                )));
            }
        }
        let k = centers.len();
        Ok(Self {
            height,
            width,
            centers,
            levels: DVector::zeros(k),
        })
    }

    /// `count` distinct centers drawn uniformly from the grid.
    pub fn random<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let pixels = height * width;
        if count == 0 || count > pixels {
            return Err(BmmsError::InvalidPartition(format!(
                "cannot place {count} centers on {pixels} pixels"
            )));
        }
        let chosen = rand::seq::index::sample(rng, pixels, count);
        let centers = chosen.iter().map(|i| (i / width, i % width)).collect();
        Self::new(height, width, centers)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn centers(&self) -> &[(usize, usize)] {
        &self.centers
    }

    pub fn pieces(&self) -> usize {
        self.centers.len()
    }

    /// Cell index of every pixel.
    pub fn assign(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                let mut best = 0;
                let mut best_d = usize::MAX;
                for (k, &(cr, cc)) in self.centers.iter().enumerate() {
                    let d = r.abs_diff(cr).pow(2) + c.abs_diff(cc).pow(2);
                    if d < best_d {
                        best_d = d;
                        best = k;
                    }
                }
                out.push(best);
            }
        }
        out
    }

    pub fn to_operator(&self) -> Result<CoarseningOperator> {
        CoarseningOperator::from_assignment(self.assign(), self.pieces(), CoarseningMode::Sum)
    }

    pub fn coefficients(&self) -> Result<DVector<f64>> {
        self.to_operator()?.lift(&self.levels)
    }

    /// Cells as sorted pixel lists, ordered by their smallest pixel. Two
    /// center sets with the same tessellation share this key.
    pub fn canonical_cells(&self) -> Vec<Vec<usize>> {
        let assignment = self.assign();
        let mut cells = vec![Vec::new(); self.pieces()];
        for (pixel, &k) in assignment.iter().enumerate() {
            cells[k].push(pixel);
        }
        cells.retain(|c| !c.is_empty());
        cells.sort();
        cells
    }
}

/// Partition state carried by a partition module across sweeps.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionState {
    Changepoint(ChangepointPartition),
    Voronoi(VoronoiPartition),
}

impl PartitionState {
    pub fn to_operator(&self) -> Result<CoarseningOperator> {
        match self {
            PartitionState::Changepoint(p) => p.to_operator(),
            PartitionState::Voronoi(p) => p.to_operator(),
        }
    }

    pub fn levels(&self) -> &DVector<f64> {
        match self {
            PartitionState::Changepoint(p) => &p.levels,
            PartitionState::Voronoi(p) => &p.levels,
        }
    }

    pub fn set_levels(&mut self, levels: DVector<f64>) {
        match self {
            PartitionState::Changepoint(p) => p.levels = levels,
            PartitionState::Voronoi(p) => p.levels = levels,
        }
    }

    /// Short text key identifying the partition (not the levels).
    pub fn key(&self) -> String {
        match self {
            PartitionState::Changepoint(p) => p
                .splits()
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            PartitionState::Voronoi(p) => p
                .centers()
                .iter()
                .map(|(r, c)| format!("{r}:{c}"))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

/// Prior and proposal settings shared by partition modules.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionModuleConfig {
    pub level_prior: GaussianPrior,
    pub noise: NoisePrior,
    /// Maximum split move (1D) or window half-width (2D).
    pub width: usize,
    /// Minimum piece length in the 1D case.
    pub min_segment: usize,
}

impl Default for PartitionModuleConfig {
    fn default() -> Self {
        Self {
            level_prior: GaussianPrior::unit_information(),
            noise: NoisePrior::default(),
            width: 3,
            min_segment: 1,
        }
    }
}

impl PartitionModuleConfig {
    pub fn voronoi_default() -> Self {
        Self {
            width: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.min_segment < 1 {
            return Err(BmmsError::InvalidConfig(
                "proposal width and minimum segment length must be at least 1".into(),
            ));
        }
        self.noise.validate()
    }
}

/// Result of one Metropolis-Hastings move.
#[derive(Debug, Clone)]
pub struct MhStep<P> {
    pub state: P,
    pub accepted: bool,
    /// Log marginal likelihood of the returned state.
    pub log_marginal: f64,
}

/// Conjugate posterior of the piece levels for the step design `X L`.
pub fn levels_posterior(
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    operator: &CoarseningOperator,
    prior: &GaussianPrior,
    noise: &NoisePrior,
) -> Result<GaussianModulePosterior> {
    let z = operator.downsample(x)?;
    module_posterior(&z, residual, prior, noise)
}

/// Log marginal likelihood of the residual under the step design induced by
/// `partition`, with levels and noise variance integrated out.
pub fn partition_log_marginal(
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    partition: &PartitionState,
    config: &PartitionModuleConfig,
) -> Result<f64> {
    let op = partition.to_operator()?;
    Ok(levels_posterior(x, residual, &op, &config.level_prior, &config.noise)?.log_marginal)
}

fn accept<R: Rng + ?Sized>(current: f64, proposed: f64, rng: &mut R) -> bool {
    let log_ratio = proposed - current;
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// One split move: choose a split uniformly, shift it by a nonzero uniform
/// offset in `-width..=width`, reject if ordering or the minimum piece length
/// would break, otherwise accept with the marginal-likelihood ratio.
///
/// `current_log_marginal` may carry the cached value for `state`.
pub fn mh_step_splits<R: Rng + ?Sized>(
    state: &ChangepointPartition,
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    config: &PartitionModuleConfig,
    current_log_marginal: Option<f64>,
    rng: &mut R,
) -> Result<MhStep<ChangepointPartition>> {
    let lm_of = |s: &ChangepointPartition| {
        partition_log_marginal(x, residual, &PartitionState::Changepoint(s.clone()), config)
    };
    let current = match current_log_marginal {
        Some(v) => v,
        None => lm_of(state)?,
    };
    let unchanged = |lm| MhStep {
        state: state.clone(),
        accepted: false,
        log_marginal: lm,
    };
    if state.splits.is_empty() {
        return Ok(MhStep {
            state: state.clone(),
            accepted: true,
            log_marginal: current,
        });
    }
    let w = config.width as i64;
    let index = rng.random_range(0..state.splits.len());
    let mut offset = rng.random_range(-w..w);
    if offset >= 0 {
        offset += 1;
    }
    let proposed = state.splits[index] as i64 + offset;
    let lower = if index == 0 { 0 } else { state.splits[index - 1] as i64 };
    let upper = state
        .splits
        .get(index + 1)
        .map_or(state.p as i64, |&t| t as i64);
    let min = config.min_segment as i64;
    if proposed - lower < min || upper - proposed < min {
        return Ok(unchanged(current));
    }
    let candidate = state.with_split(index, proposed as usize);
    let lm = lm_of(&candidate)?;
    if accept(current, lm, rng) {
        Ok(MhStep {
            state: candidate,
            accepted: true,
            log_marginal: lm,
        })
    } else {
        Ok(unchanged(current))
    }
}

/// One center move: choose a center uniformly and propose a uniform pixel in
/// the `(2w + 1)^2` window around it. Proposals off the grid, onto another
/// center, or leaving a cell empty are rejected.
pub fn mh_step_centers<R: Rng + ?Sized>(
    state: &VoronoiPartition,
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    config: &PartitionModuleConfig,
    current_log_marginal: Option<f64>,
    rng: &mut R,
) -> Result<MhStep<VoronoiPartition>> {
    let lm_of = |s: &VoronoiPartition| {
        partition_log_marginal(x, residual, &PartitionState::Voronoi(s.clone()), config)
    };
    let current = match current_log_marginal {
        Some(v) => v,
        None => lm_of(state)?,
    };
    let unchanged = |lm| MhStep {
        state: state.clone(),
        accepted: false,
        log_marginal: lm,
    };
    let w = config.width as i64;
    let k = rng.random_range(0..state.centers.len());
    let dr = rng.random_range(-w..=w);
    let dc = rng.random_range(-w..=w);
    let (r, c) = state.centers[k];
    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
    if (dr, dc) == (0, 0) {
        return Ok(MhStep {
            state: state.clone(),
            accepted: true,
            log_marginal: current,
        });
    }
    if nr < 0 || nc < 0 || nr >= state.height as i64 || nc >= state.width as i64 {
        return Ok(unchanged(current));
    }
    let target = (nr as usize, nc as usize);
    if state.centers.contains(&target) {
        return Ok(unchanged(current));
    }
    let mut candidate = state.clone();
    candidate.centers[k] = target;
    let lm = match lm_of(&candidate) {
        Ok(v) => v,
        Err(BmmsError::InvalidPartition(_)) => return Ok(unchanged(current)),
        Err(e) => return Err(e),
    };
    if accept(current, lm, rng) {
        Ok(MhStep {
            state: candidate,
            accepted: true,
            log_marginal: lm,
        })
    } else {
        Ok(unchanged(current))
    }
}

/// Conjugate draw of the piece levels and the noise variance given the
/// partition. Returns `(levels, s2)`.
pub fn sample_levels_given_partition<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    partition: &PartitionState,
    config: &PartitionModuleConfig,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    let op = partition.to_operator()?;
    let post = levels_posterior(x, residual, &op, &config.level_prior, &config.noise)?;
    post.sample(rng)
}
