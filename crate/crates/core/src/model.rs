//! End-to-end additive model: knots, design blocks, penalty transforms,
//! group-lasso solve, back-transform, prediction and diagnostics.
//!
//! A clamped basis with centred columns always has the constant vector in
//! the null space of both `B_cᵀB_c` and `Ω`, since the basis sums to one and
//! constants have no curvature. Each block therefore drops its last basis
//! column before the penalty transform; the remaining `K − 1` centred columns
//! span the same function space and give a positive definite `M`.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::penalty::{self, BlockTransform};
use crate::solver::{self, sigmoid, Family, GroupLassoProblem, Solution, SolverConfig};
use crate::splines::{self, SplineBasis};

pub const FORMAT_VERSION: u32 = 1;

/// Conjugate exponent for second-derivative smoothness; `2 − γ = 8/5`.
pub const GAMMA: f64 = 0.4;

const MIN_OBSERVATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotPolicy {
    /// `round(√n) − 4` interior knots.
    #[default]
    SqrtN,
    Interior(usize),
}

impl KnotPolicy {
    pub fn num_interior(&self, n: usize) -> usize {
        match *self {
            KnotPolicy::SqrtN => splines::default_num_interior(n),
            KnotPolicy::Interior(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveModelSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub lambda3: f64,
    /// Per-predictor weights; `None` entries exclude a predictor entirely.
    #[serde(default)]
    pub weights: Option<Vec<Option<PenaltyWeights>>>,
    #[serde(default)]
    pub knots: KnotPolicy,
    #[serde(default)]
    pub family: Family,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl Default for AdditiveModelSpec {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            weights: None,
            knots: KnotPolicy::SqrtN,
            family: Family::Gaussian,
            solver: SolverConfig::default(),
        }
    }
}

impl AdditiveModelSpec {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..Self::default()
        }
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "{} weight entries for {p} predictors",
                    w.len()
                )));
            }
            for pw in w.iter().flatten() {
                if !(pw.w1 > 0.0 && pw.w1.is_finite() && pw.w2 >= 0.0 && pw.w2.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "invalid weights ({}, {})",
                        pw.w1, pw.w2
                    )));
                }
            }
        }
        Ok(())
    }
}

fn validate_data(x: ArrayView2<f64>, y: ArrayView1<f64>, family: Family) -> Result<()> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {n} rows but y has {}",
            y.len()
        )));
    }
    if n < MIN_OBSERVATIONS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_OBSERVATIONS} observations, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidInput("no predictors".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data contain non-finite values".into()));
    }
    if family == Family::Binomial {
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("binomial response must be 0/1".into()));
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == n {
            return Err(Error::DegenerateLabels);
        }
    }
    Ok(())
}

/// Spline bases and raw design blocks for one training sample; independent
/// of the penalty levels, so a tuning grid builds it once.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    n: usize,
    p: usize,
    family: Family,
    response_mean: f64,
    /// Centred response (Gaussian) or the 0/1 labels (binomial).
    y_work: Array1<f64>,
    predictors: Vec<PreparedPredictor>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone)]
struct PreparedPredictor {
    index: usize,
    basis: SplineBasis,
    full_means: Array1<f64>,
    /// `n × (K − 1)` uncentred block with the last basis column removed.
    reduced: Array2<f64>,
    omega: Array2<f64>,
}

impl PreparedDesign {
    pub fn new(
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        family: Family,
        knots: KnotPolicy,
    ) -> Result<Self> {
        validate_data(x, y, family)?;
        let (n, p) = x.dim();
        let num_interior = knots.num_interior(n);
        let mut warnings = Vec::new();
        let mut predictors = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            let kv = match splines::make_knots(col, num_interior) {
                Ok(kv) => kv,
                Err(Error::DegeneratePredictor) => {
                    warnings.push(format!(
                        "predictor {j} has fewer than two distinct values and was dropped"
                    ));
                    continue;
                }
                Err(e) => return Err(e),
            };
            if kv.collapsed() > 0 {
                warnings.push(format!(
                    "predictor {j}: {} tied interior knots removed",
                    kv.collapsed()
                ));
            }
            let basis = SplineBasis::new(kv);
            let k = basis.len();
            if k > n {
                warnings.push(format!(
                    "predictor {j}: {k} basis functions exceed {n} observations"
                ));
            }
            let full = basis.design_block(col);
            let full_means = splines::column_means(&full);
            let reduced = full.slice(s![.., ..k - 1]).to_owned();
            let omega = basis
                .curvature_matrix()
                .slice(s![..k - 1, ..k - 1])
                .to_owned();
            predictors.push(PreparedPredictor {
                index: j,
                basis,
                full_means,
                reduced,
                omega,
            });
        }
        let (response_mean, y_work) = match family {
            Family::Gaussian => {
                let m = y.mean().expect("nonempty");
                (m, y.mapv(|v| v - m))
            }
            Family::Binomial => (y.mean().expect("nonempty"), y.to_owned()),
        };
        Ok(Self {
            n,
            p,
            family,
            response_mean,
            y_work,
            predictors,
            warnings,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn response_mean(&self) -> f64 {
        self.response_mean
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Penalty transforms for every usable, non-excluded predictor.
    pub fn blocks(
        &self,
        lambda2: f64,
        weights: Option<&[Option<PenaltyWeights>]>,
    ) -> Result<BlockSet> {
        let mut members = Vec::new();
        let mut transforms = Vec::new();
        let mut btilde = Vec::new();
        for (slot, pred) in self.predictors.iter().enumerate() {
            let w = match weights {
                Some(w) => match w[pred.index] {
                    Some(w) => w,
                    None => continue,
                },
                None => PenaltyWeights::default(),
            };
            let (t, bt) = penalty::build_block(
                pred.index,
                pred.reduced.view(),
                pred.omega.view(),
                lambda2,
                w.w1,
                w.w2,
            )?;
            members.push(slot);
            transforms.push(t);
            btilde.push(bt);
        }
        Ok(BlockSet {
            lambda2,
            members,
            transforms,
            btilde,
        })
    }

    /// Group-lasso problem on `blocks`, with the curvature term when `λ₃ > 0`.
    pub fn problem(
        &self,
        blocks: &BlockSet,
        lambda1: f64,
        lambda3: f64,
    ) -> Result<GroupLassoProblem> {
        let mut problem =
            GroupLassoProblem::new(self.y_work.clone(), blocks.btilde.clone(), self.family)?;
        if lambda3 > 0.0 {
            let quad = blocks
                .members
                .iter()
                .zip(&blocks.transforms)
                .map(|(&slot, t)| t.transformed_curvature(self.predictors[slot].omega.view()))
                .collect();
            problem = problem.with_quadratic(quad, lambda3)?;
        }
        problem.lambda1 = lambda1;
        Ok(problem)
    }

    /// Transformed design of new observations for each member of `blocks`.
    pub fn transform_new(
        &self,
        blocks: &BlockSet,
        x_new: ArrayView2<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        if x_new.ncols() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "expected {} columns, got {}",
                self.p,
                x_new.ncols()
            )));
        }
        Ok(blocks
            .members
            .iter()
            .zip(&blocks.transforms)
            .map(|(&slot, t)| {
                let pred = &self.predictors[slot];
                let full = pred.basis.design_block(x_new.column(pred.index));
                let k = full.ncols();
                t.transform_design(full.slice(s![.., ..k - 1]))
            })
            .collect())
    }

    /// Offset added to the solver's linear predictor to get the model's.
    pub fn offset(&self) -> f64 {
        match self.family {
            Family::Gaussian => self.response_mean,
            Family::Binomial => 0.0,
        }
    }

    /// Assembles a fitted model from a solver solution on `blocks`.
    pub fn assemble(
        &self,
        blocks: &BlockSet,
        spec: &AdditiveModelSpec,
        solution: &Solution,
    ) -> FittedAdditiveModel {
        let n = self.n as f64;
        let mut components: Vec<ComponentFit> = (0..self.p)
            .map(|j| ComponentFit::empty(j, ComponentStatus::Dropped))
            .collect();
        for pred in &self.predictors {
            let c = &mut components[pred.index];
            c.status = ComponentStatus::Excluded;
            c.basis = Some(pred.basis.clone());
            c.beta = vec![0.0; pred.basis.len()];
            c.col_means = pred.full_means.to_vec();
        }
        let mut warnings = self.warnings.clone();
        for (b, ((&slot, t), bt)) in blocks
            .members
            .iter()
            .zip(&blocks.transforms)
            .zip(&solution.beta_tilde)
            .enumerate()
        {
            let pred = &self.predictors[slot];
            let beta_red = t.back_transform(bt.view());
            let zero = bt.iter().all(|&v| v == 0.0);
            let (norm, curv) = if zero {
                (0.0, 0.0)
            } else {
                let centered = &pred.reduced - &t.col_means.view().insert_axis(ndarray::Axis(0));
                let f = centered.dot(&beta_red);
                (
                    norm2(f.view()) / n.sqrt(),
                    pred.basis.curvature(beta_red.view()),
                )
            };
            if t.jitter_used > 0.0 {
                warnings.push(format!(
                    "predictor {}: jitter {:e} added to penalty block",
                    pred.index, t.jitter_used
                ));
            }
            let c = &mut components[pred.index];
            c.status = ComponentStatus::Fitted;
            if !zero {
                c.beta[..beta_red.len()].copy_from_slice(beta_red.as_slice().expect("contiguous"));
            }
            c.empirical_norm = norm;
            c.curvature = curv;
            c.kkt_residual = Some(solution.kkt_residuals[b]);
            c.jitter_used = t.jitter_used;
            c.weights = Some(PenaltyWeights { w1: t.w1, w2: t.w2 });
            c.transform = Some(t.clone());
        }
        if !solution.converged {
            warnings.push(format!(
                "solver stopped after {} sweeps without meeting the KKT tolerance (max residual {:e})",
                solution.sweeps_used,
                solution.max_kkt().max(solution.intercept_residual)
            ));
        }
        let active: Vec<usize> = solution
            .active
            .iter()
            .map(|&b| self.predictors[blocks.members[b]].index)
            .collect();
        let intercept = match self.family {
            Family::Gaussian => self.response_mean,
            Family::Binomial => solution.intercept,
        };
        FittedAdditiveModel {
            format_version: FORMAT_VERSION,
            spec: spec.clone(),
            n: self.n,
            p: self.p,
            response_mean: self.response_mean,
            intercept,
            predictor_names: None,
            components,
            active,
            objective: solution.objective(),
            objective_trace: solution.objective_trace.clone(),
            converged: solution.converged,
            sweeps_used: solution.sweeps_used,
            warnings,
        }
    }
}

/// Penalty transforms at one `λ₂` (and weight set) for a prepared design.
#[derive(Debug, Clone)]
pub struct BlockSet {
    pub lambda2: f64,
    /// Indices into the design's usable predictors.
    members: Vec<usize>,
    pub transforms: Vec<BlockTransform>,
    pub btilde: Vec<Array2<f64>>,
}

impl BlockSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentStatus {
    /// Entered the group lasso (it may still be estimated as zero).
    Fitted,
    /// Constant predictor; no basis could be built.
    Dropped,
    /// Removed by an infinite adaptive weight.
    Excluded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFit {
    pub index: usize,
    pub status: ComponentStatus,
    pub basis: Option<SplineBasis>,
    /// Original-space coefficients, one per basis function.
    pub beta: Vec<f64>,
    pub col_means: Vec<f64>,
    /// `‖f̂_j‖_n` on the training sample.
    pub empirical_norm: f64,
    /// `I²(f̂_j) = βᵀΩβ`.
    pub curvature: f64,
    pub kkt_residual: Option<f64>,
    pub jitter_used: f64,
    pub weights: Option<PenaltyWeights>,
    #[serde(skip)]
    pub transform: Option<BlockTransform>,
}

impl ComponentFit {
    fn empty(index: usize, status: ComponentStatus) -> Self {
        Self {
            index,
            status,
            basis: None,
            beta: Vec::new(),
            col_means: Vec::new(),
            empirical_norm: 0.0,
            curvature: 0.0,
            kkt_residual: None,
            jitter_used: 0.0,
            weights: None,
            transform: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.beta.iter().any(|&b| b != 0.0)
    }

    /// `f̂_j(x)`, with `x` clamped to the training range.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.basis {
            Some(b) if self.is_active() => b.eval_component(
                ArrayView1::from(&self.beta),
                ArrayView1::from(&self.col_means),
                x,
            ),
            _ => 0.0,
        }
    }

    /// `τ_n(f̂_j) = √(‖f̂_j‖_n² + λ^{2−γ} I²(f̂_j))`.
    pub fn tau_n(&self, lambda_theory: f64) -> f64 {
        (self.empirical_norm.powi(2) + lambda_theory.powf(2.0 - GAMMA) * self.curvature).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedAdditiveModel {
    pub format_version: u32,
    pub spec: AdditiveModelSpec,
    pub n: usize,
    pub p: usize,
    pub response_mean: f64,
    pub intercept: f64,
    #[serde(default)]
    pub predictor_names: Option<Vec<String>>,
    pub components: Vec<ComponentFit>,
    pub active: Vec<usize>,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps_used: usize,
    pub warnings: Vec<String>,
}

impl FittedAdditiveModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// `ĉ + Σ_j f̂_j(x^{(j)})` for each row.
    pub fn predict_linear(&self, x_new: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x_new.ncols() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "model has {} predictors, data has {}",
                self.p,
                x_new.ncols()
            )));
        }
        let mut eta = Array1::from_elem(x_new.nrows(), self.intercept);
        for &j in &self.active {
            let c = &self.components[j];
            for (e, &x) in eta.iter_mut().zip(x_new.column(j)) {
                *e += c.eval(x);
            }
        }
        Ok(eta)
    }

    /// Mean response: the linear predictor for Gaussian models, class-one
    /// probabilities for binomial models.
    pub fn predict(&self, x_new: ArrayView2<f64>) -> Result<Array1<f64>> {
        let eta = self.predict_linear(x_new)?;
        Ok(match self.family() {
            Family::Gaussian => eta,
            Family::Binomial => eta.mapv(sigmoid),
        })
    }

    /// Per-predictor `τ_n(f̂_j)` for a caller-supplied theory-side `λ`.
    pub fn diagnostics(&self, lambda_theory: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.tau_n(lambda_theory))
            .collect()
    }

    pub fn total_curvature(&self) -> f64 {
        self.components.iter().map(|c| c.curvature).sum()
    }

    pub fn kkt_residuals(&self) -> Vec<Option<f64>> {
        self.components.iter().map(|c| c.kkt_residual).collect()
    }

    /// Penalised criterion evaluated purely in function space on `(x, y)`:
    /// loss of `ĉ + Σ f̂_j` plus `Σ λ₁√(w₁‖f̂_j‖_n² + λ₂w₂I²(f̂_j)) + λ₃ Σ I²(f̂_j)`.
    pub fn penalized_objective(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let eta = self.predict_linear(x)?;
        let n = y.len() as f64;
        let loss = match self.family() {
            Family::Gaussian => {
                eta.iter()
                    .zip(y)
                    .map(|(e, v)| (v - e) * (v - e))
                    .sum::<f64>()
                    / n
            }
            Family::Binomial => solver::logistic_loss(eta.view(), y),
        };
        let mut pen = 0.0;
        for c in &self.components {
            if c.status != ComponentStatus::Fitted || !c.is_active() {
                continue;
            }
            let f: Vec<f64> = x.column(c.index).iter().map(|&v| c.eval(v)).collect();
            let norm2 = f.iter().map(|v| v * v).sum::<f64>() / n;
            let w = c.weights.unwrap_or_default();
            pen +=
                self.spec.lambda1 * (w.w1 * norm2 + self.spec.lambda2 * w.w2 * c.curvature).sqrt();
            pen += self.spec.lambda3 * c.curvature;
        }
        Ok(loss + pen)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {}",
                model.format_version
            )));
        }
        if model.components.len() != model.p {
            return Err(Error::Format("component count does not match p".into()));
        }
        for c in &model.components {
            if c.basis.is_some()
                && (c.beta.len() != c.col_means.len()
                    || c.beta.len() != c.basis.as_ref().map_or(0, |b| b.len()))
            {
                return Err(Error::Format(format!(
                    "component {} has inconsistent coefficient lengths",
                    c.index
                )));
            }
        }
        if model.active.iter().any(|&j| j >= model.p) {
            return Err(Error::Format("active index out of range".into()));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits one model, optionally warm-started from a solution on the same
/// design and block layout.
pub fn fit_prepared(
    design: &PreparedDesign,
    spec: &AdditiveModelSpec,
    warm_start: Option<&Solution>,
) -> Result<(FittedAdditiveModel, Solution)> {
    spec.validate(design.p)?;
    if spec.family != design.family {
        return Err(Error::InvalidInput(
            "spec family differs from prepared design".into(),
        ));
    }
    let blocks = design.blocks(spec.lambda2, spec.weights.as_deref())?;
    let problem = design.problem(&blocks, spec.lambda1, spec.lambda3)?;
    let solution = solver::fit(&problem, &spec.solver, warm_start)?;
    Ok((design.assemble(&blocks, spec, &solution), solution))
}

pub fn fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    spec: &AdditiveModelSpec,
) -> Result<FittedAdditiveModel> {
    spec.validate(x.ncols())?;
    let design = PreparedDesign::new(x, y, spec.family, spec.knots)?;
    Ok(fit_prepared(&design, spec, None)?.0)
}

/// `λ₁,max` of the reduced problem at the spec's `λ₂` and weights.
pub fn lambda1_max(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    spec: &AdditiveModelSpec,
) -> Result<f64> {
    spec.validate(x.ncols())?;
    let design = PreparedDesign::new(x, y, spec.family, spec.knots)?;
    let blocks = design.blocks(spec.lambda2, spec.weights.as_deref())?;
    solver::lambda1_max(&design.problem(&blocks, 0.0, 0.0)?)
}
