//! Tuning-parameter grids, warm-started regularization paths, validation-set
//! and K-fold selection, and adaptive reweighting.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, AdditiveModelSpec, BlockSet, ComponentStatus, FittedAdditiveModel, PenaltyWeights,
    PreparedDesign,
};
use crate::solver::{self, Family, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_l1: usize,
    pub n_l2: usize,
    /// Smallest `λ₁` as a fraction of `λ₁,max`.
    pub l1_ratio: f64,
    /// `λ₂` range; defaults to `(1e−6, 1e2) · n^{−4/5}`.
    pub l2_range: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_l1: 100,
            n_l2: 15,
            l1_ratio: 1e-3,
            l2_range: None,
        }
    }
}

impl GridConfig {
    pub fn default_l2_range(n: usize) -> (f64, f64) {
        let rate = (n as f64).powf(-0.8);
        (1e-6 * rate, 1e2 * rate)
    }

    fn validate(&self) -> Result<()> {
        if self.n_l1 == 0 || self.n_l2 == 0 {
            return Err(Error::InvalidInput("grid sizes must be positive".into()));
        }
        if !(self.l1_ratio > 0.0 && self.l1_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "l1_ratio must lie in (0, 1), got {}",
                self.l1_ratio
            )));
        }
        if let Some((lo, hi)) = self.l2_range {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "invalid lambda2 range ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// `count` log-spaced values from `start` to `end` inclusive.
pub fn log_space(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    let (a, b) = (start.ln(), end.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                start
            } else if i == count - 1 {
                end
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    /// Ascending.
    pub lambda2_values: Vec<f64>,
    /// For each `λ₂`, descending `λ₁` values starting at its anchor.
    pub lambda1_values: Vec<Vec<f64>>,
    /// `λ₁,max` for each `λ₂`.
    pub anchors: Vec<f64>,
    pub l1_ratio: f64,
}

impl LambdaGrid {
    pub fn n_l1(&self) -> usize {
        self.lambda1_values.first().map_or(0, Vec::len)
    }

    pub fn n_l2(&self) -> usize {
        self.lambda2_values.len()
    }

    /// `λ₁ / λ₁,max` for row `i`, shared by every column.
    pub fn relative_lambda1(&self, i: usize) -> f64 {
        let n = self.n_l1();
        if n <= 1 {
            1.0
        } else {
            self.l1_ratio.powf(i as f64 / (n - 1) as f64)
        }
    }
}

pub fn make_grid_prepared(
    design: &PreparedDesign,
    spec: &AdditiveModelSpec,
    config: &GridConfig,
) -> Result<LambdaGrid> {
    config.validate()?;
    let (lo, hi) = config
        .l2_range
        .unwrap_or_else(|| GridConfig::default_l2_range(design.n()));
    let lambda2_values = log_space(lo, hi, config.n_l2);
    let anchors = lambda2_values
        .par_iter()
        .map(|&l2| {
            let blocks = design.blocks(l2, spec.weights.as_deref())?;
            let lmax = solver::lambda1_max(&design.problem(&blocks, 0.0, 0.0)?)?;
            if !(lmax > 0.0) {
                return Err(Error::DegenerateResponse);
            }
            Ok(lmax)
        })
        .collect::<Result<Vec<f64>>>()?;
    let lambda1_values = anchors
        .iter()
        .map(|&a| log_space(a, a * config.l1_ratio, config.n_l1))
        .collect();
    Ok(LambdaGrid {
        lambda2_values,
        lambda1_values,
        anchors,
        l1_ratio: config.l1_ratio,
    })
}

pub fn make_grid(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    spec: &AdditiveModelSpec,
    config: &GridConfig,
) -> Result<LambdaGrid> {
    spec.validate(x.ncols())?;
    let design = PreparedDesign::new(x, y, spec.family, spec.knots)?;
    make_grid_prepared(&design, spec, config)
}

/// One converged (or soft-failed) grid point of a path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub l1_index: usize,
    pub l2_index: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub solution: Solution,
}

impl PathPoint {
    pub fn active_size(&self) -> usize {
        self.solution.active.len()
    }
}

/// Runs every `λ₂` track; within a track `λ₁` descends with warm starts.
/// `setup` builds per-track state once, `visit` sees each solution.
fn run_tracks<C, T, S, F>(
    design: &PreparedDesign,
    grid: &LambdaGrid,
    spec: &AdditiveModelSpec,
    setup: S,
    visit: F,
) -> Result<Vec<Vec<T>>>
where
    T: Send,
    S: Fn(&BlockSet) -> Result<C> + Sync,
    F: Fn(&C, usize, usize, &Solution) -> Result<T> + Sync,
{
    spec.validate(design.p())?;
    (0..grid.n_l2())
        .into_par_iter()
        .map(|l2| {
            let blocks = design.blocks(grid.lambda2_values[l2], spec.weights.as_deref())?;
            let ctx = setup(&blocks)?;
            let mut problem = design.problem(&blocks, grid.lambda1_values[l2][0], spec.lambda3)?;
            let mut warm: Option<Solution> = None;
            let mut out = Vec::with_capacity(grid.n_l1());
            for (l1, &lambda1) in grid.lambda1_values[l2].iter().enumerate() {
                problem.lambda1 = lambda1;
                let sol = solver::fit(&problem, &spec.solver, warm.as_ref())?;
                out.push(visit(&ctx, l1, l2, &sol)?);
                warm = Some(sol);
            }
            Ok(out)
        })
        .collect()
}

pub fn path_fit_prepared(
    design: &PreparedDesign,
    grid: &LambdaGrid,
    spec: &AdditiveModelSpec,
) -> Result<Vec<PathPoint>> {
    let tracks = run_tracks(
        design,
        grid,
        spec,
        |_| Ok(()),
        |_, l1, l2, sol| {
            Ok(PathPoint {
                l1_index: l1,
                l2_index: l2,
                lambda1: grid.lambda1_values[l2][l1],
                lambda2: grid.lambda2_values[l2],
                solution: sol.clone(),
            })
        },
    )?;
    Ok(tracks.into_iter().flatten().collect())
}

/// Warm-started fits over the whole grid, ordered by `λ₂` then descending `λ₁`.
pub fn path_fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    grid: &LambdaGrid,
    spec: &AdditiveModelSpec,
) -> Result<Vec<PathPoint>> {
    let design = PreparedDesign::new(x, y, spec.family, spec.knots)?;
    path_fit_prepared(&design, grid, spec)
}

fn holdout_loss(family: Family, eta: &Array1<f64>, y: ArrayView1<f64>) -> f64 {
    match family {
        Family::Gaussian => {
            eta.iter()
                .zip(y)
                .map(|(e, v)| (v - e) * (v - e))
                .sum::<f64>()
                / y.len() as f64
        }
        Family::Binomial => solver::logistic_loss(eta.view(), y),
    }
}

/// Holdout loss and active-set size at every grid point.
fn score_grid(
    design: &PreparedDesign,
    grid: &LambdaGrid,
    spec: &AdditiveModelSpec,
    x_hold: ArrayView2<f64>,
    y_hold: ArrayView1<f64>,
) -> Result<(Array2<f64>, Array2<usize>, Array2<bool>)> {
    if y_hold.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    if x_hold.nrows() != y_hold.len() {
        return Err(Error::DimensionMismatch(
            "holdout X and y lengths differ".into(),
        ));
    }
    let offset = design.offset();
    let tracks = run_tracks(
        design,
        grid,
        spec,
        |blocks| design.transform_new(blocks, x_hold),
        |hold, _, _, sol| {
            let mut eta = Array1::from_elem(y_hold.len(), offset + sol.intercept);
            for (b, coef) in hold.iter().zip(&sol.beta_tilde) {
                if coef.iter().any(|&v| v != 0.0) {
                    eta += &b.dot(coef);
                }
            }
            Ok((
                holdout_loss(design.family(), &eta, y_hold),
                sol.active.len(),
                sol.converged,
            ))
        },
    )?;
    let (n1, n2) = (grid.n_l1(), grid.n_l2());
    let mut scores = Array2::<f64>::zeros((n1, n2));
    let mut active = Array2::<usize>::zeros((n1, n2));
    let mut conv = Array2::from_elem((n1, n2), true);
    for (l2, track) in tracks.into_iter().enumerate() {
        for (l1, (s, a, c)) in track.into_iter().enumerate() {
            scores[[l1, l2]] = s;
            active[[l1, l2]] = a;
            conv[[l1, l2]] = c;
        }
    }
    Ok((scores, active, conv))
}

/// Index of the minimum score; ties go to larger `λ₁`, then larger `λ₂`.
fn argmin_grid(scores: &Array2<f64>, grid: &LambdaGrid) -> (usize, usize) {
    let mut best: Option<(usize, usize)> = None;
    for l2 in 0..grid.n_l2() {
        for l1 in 0..grid.n_l1() {
            let s = scores[[l1, l2]];
            if s.is_nan() {
                continue;
            }
            let better = match best {
                None => true,
                Some((b1, b2)) => {
                    let bs = scores[[b1, b2]];
                    let (la, lb) = (grid.lambda1_values[l2][l1], grid.lambda1_values[b2][b1]);
                    s < bs
                        || (s == bs
                            && (la > lb
                                || (la == lb && grid.lambda2_values[l2] > grid.lambda2_values[b2])))
                }
            };
            if better {
                best = Some((l1, l2));
            }
        }
    }
    best.unwrap_or((0, 0))
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `(λ₁ row, λ₂ column)` of the selected point.
    pub best_index: (usize, usize),
    /// Holdout loss, rows `λ₁` (descending), columns `λ₂` (ascending).
    pub scores: Array2<f64>,
    pub active_sizes: Array2<usize>,
    pub converged: Array2<bool>,
    pub grid: LambdaGrid,
    /// Refit on the training data at the selected pair.
    pub model: FittedAdditiveModel,
}

impl TuneResult {
    fn from_scores(
        design: &PreparedDesign,
        grid: &LambdaGrid,
        spec: &AdditiveModelSpec,
        scores: Array2<f64>,
        active_sizes: Array2<usize>,
        converged: Array2<bool>,
    ) -> Result<Self> {
        let (l1, l2) = argmin_grid(&scores, grid);
        let lambda1 = grid.lambda1_values[l2][l1];
        let lambda2 = grid.lambda2_values[l2];
        let refit_spec = AdditiveModelSpec {
            lambda1,
            lambda2,
            ..spec.clone()
        };
        let (model, _) = model::fit_prepared(design, &refit_spec, None)?;
        Ok(Self {
            lambda1,
            lambda2,
            best_index: (l1, l2),
            scores,
            active_sizes,
            converged,
            grid: grid.clone(),
            model,
        })
    }

    /// Score surface as CSV: header row of `λ₂` values, first column the
    /// relative `λ₁ / λ₁,max` shared by every column.
    pub fn write_scores_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "lambda1_over_max")?;
        for l2 in &self.grid.lambda2_values {
            write!(w, ",{l2}")?;
        }
        writeln!(w)?;
        for (i, row) in self.scores.axis_iter(Axis(0)).enumerate() {
            write!(w, "{}", self.grid.relative_lambda1(i))?;
            for s in row {
                write!(w, ",{s}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Long-format path table: one row per grid point.
    pub fn write_path_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lambda2,lambda1,score,active,converged")?;
        for l2 in 0..self.grid.n_l2() {
            for l1 in 0..self.grid.n_l1() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    self.grid.lambda2_values[l2],
                    self.grid.lambda1_values[l2][l1],
                    self.scores[[l1, l2]],
                    self.active_sizes[[l1, l2]],
                    self.converged[[l1, l2]]
                )?;
            }
        }
        Ok(())
    }
}

pub fn validate_select_prepared(
    design: &PreparedDesign,
    holdout: (ArrayView2<f64>, ArrayView1<f64>),
    grid: &LambdaGrid,
    spec: &AdditiveModelSpec,
) -> Result<TuneResult> {
    let (scores, active, conv) = score_grid(design, grid, spec, holdout.0, holdout.1)?;
    TuneResult::from_scores(design, grid, spec, scores, active, conv)
}

/// Selects `(λ₁, λ₂)` by holdout loss (mean squared error, or mean negative
/// log-likelihood for binomial models) and refits on the training data.
pub fn validate_select(
    train: (ArrayView2<f64>, ArrayView1<f64>),
    holdout: (ArrayView2<f64>, ArrayView1<f64>),
    grid: &LambdaGrid,
    spec: &AdditiveModelSpec,
) -> Result<TuneResult> {
    if holdout.1.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let design = PreparedDesign::new(train.0, train.1, spec.family, spec.knots)?;
    validate_select_prepared(&design, holdout, grid, spec)
}

/// Seeded fold labels `0..k`; falls back to label-stratified assignment when
/// a binomial training split would lose a class.
pub fn fold_assignment(y: ArrayView1<f64>, k: usize, family: Family, seed: u64) -> Vec<usize> {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut folds = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    if family == Family::Binomial && !folds_keep_classes(y, &folds, k) {
        let mut pos = 0;
        for class in [0.0, 1.0] {
            for &i in order.iter().filter(|&&i| y[i] == class) {
                folds[i] = pos % k;
                pos += 1;
            }
        }
    }
    folds
}

fn folds_keep_classes(y: ArrayView1<f64>, folds: &[usize], k: usize) -> bool {
    (0..k).all(|f| {
        let train: Vec<f64> = folds
            .iter()
            .zip(y)
            .filter(|(g, _)| **g != f)
            .map(|(_, v)| *v)
            .collect();
        train.contains(&0.0) && train.contains(&1.0)
    })
}

fn select_rows(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    rows: &[usize],
) -> (Array2<f64>, Array1<f64>) {
    (x.select(Axis(0), rows), y.select(Axis(0), rows))
}

/// K-fold cross-validation over a fixed grid, then a refit on all data.
pub fn kfold_cv(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    grid: &LambdaGrid,
    spec: &AdditiveModelSpec,
    k: usize,
    seed: u64,
) -> Result<TuneResult> {
    let n = y.len();
    if k < 2 || k > n {
        return Err(Error::InvalidInput(format!(
            "need 2 <= folds <= n, got {k} folds for {n} rows"
        )));
    }
    if x.nrows() != n {
        return Err(Error::DimensionMismatch("X and y lengths differ".into()));
    }
    let folds = fold_assignment(y, k, spec.family, seed);
    let mut total = Array2::<f64>::zeros((grid.n_l1(), grid.n_l2()));
    let mut conv = Array2::from_elem((grid.n_l1(), grid.n_l2()), true);
    for f in 0..k {
        let train_rows: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let hold_rows: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let (xt, yt) = select_rows(x, y, &train_rows);
        let (xh, yh) = select_rows(x, y, &hold_rows);
        let design = PreparedDesign::new(xt.view(), yt.view(), spec.family, spec.knots)?;
        let (s, _, c) = score_grid(&design, grid, spec, xh.view(), yh.view())?;
        total += &s;
        conv.zip_mut_with(&c, |a, &b| *a = *a && b);
    }
    total /= k as f64;
    let full = PreparedDesign::new(x, y, spec.family, spec.knots)?;
    // active sizes reported for the full-data path
    let active = run_tracks(
        &full,
        grid,
        spec,
        |_| Ok(()),
        |_, _, _, sol| Ok(sol.active.len()),
    )?;
    let mut active_sizes = Array2::<usize>::zeros((grid.n_l1(), grid.n_l2()));
    for (l2, track) in active.into_iter().enumerate() {
        for (l1, a) in track.into_iter().enumerate() {
            active_sizes[[l1, l2]] = a;
        }
    }
    TuneResult::from_scores(&full, grid, spec, total, active_sizes, conv)
}

/// Adaptive weights `w₁ = ‖f̂‖_n^{−γ}`, `w₂ = I(f̂)^{−γ}` from an initial fit.
///
/// Zero initial components are excluded (`None`); components with zero
/// curvature but nonzero norm get `w₂ = 0`.
pub fn adaptive_weights(
    init: &FittedAdditiveModel,
    gamma_w: f64,
) -> Result<Vec<Option<PenaltyWeights>>> {
    if !(gamma_w > 0.0 && gamma_w.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "gamma_w must be positive, got {gamma_w}"
        )));
    }
    let weights: Vec<Option<PenaltyWeights>> = init
        .components
        .iter()
        .map(|c| {
            if c.status != ComponentStatus::Fitted || !(c.empirical_norm > 0.0) {
                return None;
            }
            let w1 = c.empirical_norm.powf(-gamma_w);
            let smooth = c.curvature.sqrt();
            let w2 = if smooth > 0.0 {
                smooth.powf(-gamma_w)
            } else {
                0.0
            };
            if !w1.is_finite() || !w2.is_finite() {
                return None;
            }
            Some(PenaltyWeights { w1, w2 })
        })
        .collect();
    if weights.iter().all(Option::is_none) {
        return Err(Error::EmptyModel);
    }
    Ok(weights)
}
