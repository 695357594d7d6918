//! Resolution grids, coarsening operators and multiscale designs.
//!
//! A coarsening operator `L` maps a design at resolution `j + 1` to resolution
//! `j` by aggregating groups of columns: `X_j = X_{j+1} L`. Operators are kept
//! in sparse assignment form (one coarse column and one weight per fine
//! column); dense matrices are only built on request.
//!
//! Levels are numbered from 1 (coarsest) to `K` (finest) throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, BmmsError, Result};

/// How the columns of a group are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoarseningMode {
    #[default]
    Sum,
    Average,
}

/// One resolution in the multiscale hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolutionGrid {
    pub level: usize,
    pub size: usize,
}

/// Sparse column-aggregation matrix of shape `fine_size x coarse_size`.
///
/// Every fine column belongs to exactly one coarse column, so the dense form
/// has exactly one nonzero per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningOperator {
    assignment: Vec<usize>,
    weights: Vec<f64>,
    coarse_size: usize,
}

impl CoarseningOperator {
    /// Contiguous blocks of near-equal size, larger blocks first.
    pub fn dyadic(fine_size: usize, coarse_size: usize, mode: CoarseningMode) -> Result<Self> {
        if coarse_size < 1 || coarse_size > fine_size {
            return dim_err(format!(
                "coarse size {coarse_size} must lie in 1..={fine_size}"
            ));
        }
        let base = fine_size / coarse_size;
        let extra = fine_size % coarse_size;
        let mut assignment = Vec::with_capacity(fine_size);
        for group in 0..coarse_size {
            let len = base + usize::from(group < extra);
            assignment.extend(std::iter::repeat_n(group, len));
        }
        Self::from_assignment(assignment, coarse_size, mode)
    }

    pub fn identity(size: usize) -> Self {
        Self {
            assignment: (0..size).collect(),
            weights: vec![1.0; size],
            coarse_size: size,
        }
    }

    /// Builds an operator from an explicit fine-to-coarse map. Every coarse
    /// column must receive at least one fine column.
    pub fn from_assignment(
        assignment: Vec<usize>,
        coarse_size: usize,
        mode: CoarseningMode,
    ) -> Result<Self> {
        let mut counts = vec![0usize; coarse_size];
        for &g in &assignment {
            if g >= coarse_size {
                return dim_err(format!("group index {g} out of range 0..{coarse_size}"));
            }
            counts[g] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(BmmsError::InvalidPartition(format!(
                "coarse column {empty} has no fine columns"
            )));
        }
        let weights = match mode {
            CoarseningMode::Sum => vec![1.0; assignment.len()],
            CoarseningMode::Average => assignment.iter().map(|&g| 1.0 / counts[g] as f64).collect(),
        };
        Ok(Self {
            assignment,
            weights,
            coarse_size,
        })
    }

    pub fn fine_size(&self) -> usize {
        self.assignment.len()
    }

    pub fn coarse_size(&self) -> usize {
        self.coarse_size
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of fine columns in each coarse group.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.coarse_size];
        for &g in &self.assignment {
            counts[g] += 1;
        }
        counts
    }

    pub fn is_identity(&self) -> bool {
        self.coarse_size == self.fine_size()
            && self.assignment.iter().enumerate().all(|(i, &g)| i == g)
            && self.weights.iter().all(|&w| w == 1.0)
    }

    /// `X L`: aggregates the columns of `x` into the coarse groups.
    pub fn downsample(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.fine_size() {
            return dim_err(format!(
                "design has {} columns, operator expects {}",
                x.ncols(),
                self.fine_size()
            ));
        }
        let mut out = DMatrix::zeros(x.nrows(), self.coarse_size);
        for (i, (&g, &w)) in self.assignment.iter().zip(&self.weights).enumerate() {
            let src = x.column(i);
            let mut dst = out.column_mut(g);
            dst.axpy(w, &src, 1.0);
        }
        Ok(out)
    }

    /// `L theta`: stretches a coarse coefficient vector to the fine grid so
    /// that `X_fine * lift(theta) == (X_fine L) * theta`.
    pub fn lift(&self, coarse: &DVector<f64>) -> Result<DVector<f64>> {
        if coarse.len() != self.coarse_size {
            return dim_err(format!(
                "coefficient length {} does not match coarse size {}",
                coarse.len(),
                self.coarse_size
            ));
        }
        Ok(DVector::from_iterator(
            self.fine_size(),
            self.assignment
                .iter()
                .zip(&self.weights)
                .map(|(&g, &w)| w * coarse[g]),
        ))
    }

    /// `L' v`: pools a fine vector into the coarse groups.
    pub fn pool(&self, fine: &DVector<f64>) -> Result<DVector<f64>> {
        if fine.len() != self.fine_size() {
            return dim_err(format!(
                "vector length {} does not match fine size {}",
                fine.len(),
                self.fine_size()
            ));
        }
        let mut out = DVector::zeros(self.coarse_size);
        for (i, (&g, &w)) in self.assignment.iter().zip(&self.weights).enumerate() {
            out[g] += w * fine[i];
        }
        Ok(out)
    }

    /// Composite operator `self * coarser`, mapping this operator's fine grid
    /// directly onto the coarse grid of `coarser`.
    pub fn then(&self, coarser: &CoarseningOperator) -> Result<CoarseningOperator> {
        if coarser.fine_size() != self.coarse_size {
            return dim_err(format!(
                "cannot chain operator with {} coarse columns into one with {} fine columns",
                self.coarse_size,
                coarser.fine_size()
            ));
        }
        let assignment = self.assignment.iter().map(|&g| coarser.assignment[g]).collect();
        let weights = self
            .assignment
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| w * coarser.weights[g])
            .collect();
        Ok(CoarseningOperator {
            assignment,
            weights,
            coarse_size: coarser.coarse_size,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.fine_size(), self.coarse_size);
        for (i, (&g, &w)) in self.assignment.iter().zip(&self.weights).enumerate() {
            m[(i, g)] = w;
        }
        m
    }
}

/// Free function form of [`CoarseningOperator::downsample`].
pub fn downsample(x: &DMatrix<f64>, op: &CoarseningOperator) -> Result<DMatrix<f64>> {
    op.downsample(x)
}

/// Coefficient vector contributed by a single resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleContribution {
    pub level: usize,
    pub theta: DVector<f64>,
}

impl ScaleContribution {
    pub fn new(level: usize, theta: DVector<f64>) -> Self {
        Self { level, theta }
    }
}

/// Finest-scale design plus the chain of coarsening operators that produce
/// every coarser design. `X_j = X_{j+1} L_j` holds by construction.
#[derive(Debug, Clone)]
pub struct MultiscaleDesign {
    designs: Vec<DMatrix<f64>>,
    operators: Vec<CoarseningOperator>,
}

impl MultiscaleDesign {
    /// `operators[j - 1]` is `L_j`, mapping level `j + 1` to level `j`.
    pub fn new(finest: DMatrix<f64>, operators: Vec<CoarseningOperator>) -> Result<Self> {
        let k = operators.len() + 1;
        let mut designs = vec![DMatrix::zeros(0, 0); k];
        designs[k - 1] = finest;
        for j in (0..k - 1).rev() {
            designs[j] = operators[j].downsample(&designs[j + 1])?;
        }
        Ok(Self { designs, operators })
    }

    /// Single-level design.
    pub fn single(finest: DMatrix<f64>) -> Self {
        Self {
            designs: vec![finest],
            operators: Vec::new(),
        }
    }

    /// Contiguous near-equal blocks between consecutive sizes. `sizes` lists
    /// `p_1 <= ... <= p_K` with `p_K` equal to the column count of `finest`.
    pub fn with_block_sizes(
        finest: DMatrix<f64>,
        sizes: &[usize],
        mode: CoarseningMode,
    ) -> Result<Self> {
        let Some(&last) = sizes.last() else {
            return dim_err("at least one resolution size is required");
        };
        if last != finest.ncols() {
            return dim_err(format!(
                "finest size {last} does not match design width {}",
                finest.ncols()
            ));
        }
        let operators = sizes
            .windows(2)
            .map(|w| CoarseningOperator::dyadic(w[1], w[0], mode))
            .collect::<Result<Vec<_>>>()?;
        Self::new(finest, operators)
    }

    pub fn levels(&self) -> usize {
        self.designs.len()
    }

    pub fn n(&self) -> usize {
        self.designs[0].nrows()
    }

    pub fn finest(&self) -> &DMatrix<f64> {
        &self.designs[self.designs.len() - 1]
    }

    pub fn finest_size(&self) -> usize {
        self.finest().ncols()
    }

    pub fn x(&self, level: usize) -> Result<&DMatrix<f64>> {
        self.check_level(level)?;
        Ok(&self.designs[level - 1])
    }

    pub fn size(&self, level: usize) -> Result<usize> {
        Ok(self.x(level)?.ncols())
    }

    pub fn grids(&self) -> Vec<ResolutionGrid> {
        self.designs
            .iter()
            .enumerate()
            .map(|(j, x)| ResolutionGrid {
                level: j + 1,
                size: x.ncols(),
            })
            .collect()
    }

    /// `L_j`, for `1 <= level < K`.
    pub fn operator(&self, level: usize) -> Result<&CoarseningOperator> {
        if level == 0 || level >= self.levels() {
            return dim_err(format!("no operator below level {level}"));
        }
        Ok(&self.operators[level - 1])
    }

    /// Composite operator `L_{to-1} ... L_from` lifting level `from` to level `to`.
    pub fn lift_operator(&self, from: usize, to: usize) -> Result<CoarseningOperator> {
        self.check_level(from)?;
        self.check_level(to)?;
        if from > to {
            return dim_err(format!("cannot lift level {from} down to level {to}"));
        }
        let mut op = CoarseningOperator::identity(self.designs[to - 1].ncols());
        for j in (from..to).rev() {
            op = op.then(&self.operators[j - 1])?;
        }
        Ok(op)
    }

    pub fn lift(&self, theta: &DVector<f64>, from: usize, to: usize) -> Result<DVector<f64>> {
        let p = self.size(from)?;
        if p != theta.len() {
            return dim_err(format!(
                "level {from} has {p} columns, got {} coefficients",
                theta.len()
            ));
        }
        self.check_level(to)?;
        let mut v = theta.clone();
        for j in from..to {
            v = self.operators[j - 1].lift(&v)?;
        }
        Ok(v)
    }

    /// `beta_j = sum_{h <= j} lift(theta_h)`: the accumulated coefficient at
    /// resolution `up_to`, satisfying `X_j beta_j = sum_h X_h theta_h`.
    pub fn accumulate(
        &self,
        contributions: &[ScaleContribution],
        up_to: usize,
    ) -> Result<DVector<f64>> {
        self.check_level(up_to)?;
        let mut beta = DVector::zeros(self.designs[up_to - 1].ncols());
        for level in 1..=up_to {
            let c = contributions
                .iter()
                .find(|c| c.level == level)
                .ok_or_else(|| {
                    BmmsError::IncompleteChain(format!("missing contribution for level {level}"))
                })?;
            beta += self.lift(&c.theta, level, up_to)?;
        }
        Ok(beta)
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels() {
            return dim_err(format!("level {level} outside 1..={}", self.levels()));
        }
        Ok(())
    }
}

/// Free function form of [`MultiscaleDesign::accumulate`].
pub fn accumulate(
    contributions: &[ScaleContribution],
    design: &MultiscaleDesign,
    up_to: usize,
) -> Result<DVector<f64>> {
    design.accumulate(contributions, up_to)
}
