//! Group lasso by cyclic block coordinate descent.
//!
//! Minimises
//!
//! ```text
//! L(η) + λ₁ Σ_j ‖β̃_j‖ + λ₃ Σ_j β̃_jᵀ Q_j β̃_j,   η = c + Σ_j B̃_j β̃_j
//! ```
//!
//! where `L` is the mean squared error `‖y − η‖_n²` (no intercept) or the
//! mean logistic negative log-likelihood. Every block subproblem is a
//! quadratic plus a Euclidean norm, solved exactly in the eigenbasis of its
//! curvature. Gaussian blocks are minimised exactly; logistic blocks minimise
//! a quadratic majorizer built from the 1/4 bound on the logistic Hessian.
//! Convergence is declared from KKT residuals recomputed from scratch.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Gaussian,
    Binomial,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    pub max_sweeps: usize,
    pub inner_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            max_sweeps: 10_000,
            inner_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0) || !(self.inner_tol > 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidInput(
                "solver tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Eigen-factored block curvature `H` of the per-block quadratic model.
#[derive(Debug, Clone)]
struct BlockCache {
    /// `B̃ᵀ` in standard layout, so products run over contiguous rows.
    bt: Array2<f64>,
    /// `B̃ᵀB̃ / n`.
    gram: Array2<f64>,
    eigvals: Array1<f64>,
    eigvecs: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GroupLassoProblem {
    y: Array1<f64>,
    blocks: Vec<Array2<f64>>,
    quad: Option<Vec<Array2<f64>>>,
    lambda3: f64,
    family: Family,
    pub lambda1: f64,
    cache: Vec<BlockCache>,
}

impl GroupLassoProblem {
    pub fn new(y: Array1<f64>, blocks: Vec<Array2<f64>>, family: Family) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty response".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "response contains non-finite values".into(),
            ));
        }
        for (j, b) in blocks.iter().enumerate() {
            if b.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "block {j} has {} rows, response has {n}",
                    b.nrows()
                )));
            }
        }
        if family == Family::Binomial && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("binomial response must be 0/1".into()));
        }
        let mut problem = Self {
            y,
            blocks,
            quad: None,
            lambda3: 0.0,
            family,
            lambda1: 0.0,
            cache: Vec::new(),
        };
        problem.refresh_cache();
        Ok(problem)
    }

    /// Adds `λ₃ Σ β̃_jᵀ Q_j β̃_j` to the objective.
    pub fn with_quadratic(mut self, quad: Vec<Array2<f64>>, lambda3: f64) -> Result<Self> {
        if quad.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} quadratic blocks for {} design blocks",
                quad.len(),
                self.blocks.len()
            )));
        }
        for (j, (q, b)) in quad.iter().zip(&self.blocks).enumerate() {
            if q.dim() != (b.ncols(), b.ncols()) {
                return Err(Error::DimensionMismatch(format!(
                    "quadratic block {j} has shape {:?}",
                    q.dim()
                )));
            }
        }
        if !(lambda3 >= 0.0 && lambda3.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda3 must be >= 0, got {lambda3}"
            )));
        }
        self.quad = Some(quad);
        self.lambda3 = lambda3;
        self.refresh_cache();
        Ok(self)
    }

    pub fn with_lambda1(mut self, lambda1: f64) -> Self {
        self.lambda1 = lambda1;
        self
    }

    fn refresh_cache(&mut self) {
        let n = self.n() as f64;
        self.cache = (0..self.blocks.len())
            .map(|j| {
                let b = &self.blocks[j];
                let gram = b.t().dot(b) / n;
                let mut h = match self.family {
                    Family::Gaussian => &gram * 2.0,
                    Family::Binomial => &gram * 0.25,
                };
                if let Some(q) = self.quad_block(j) {
                    h.scaled_add(2.0 * self.lambda3, &q);
                }
                let (eigvals, eigvecs) = linalg::symmetric_eigen(h.view());
                BlockCache {
                    bt: b.t().as_standard_layout().into_owned(),
                    gram,
                    eigvals,
                    eigvecs,
                }
            })
            .collect();
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn lambda3(&self) -> f64 {
        self.lambda3
    }

    fn quad_block(&self, j: usize) -> Option<ArrayView2<'_, f64>> {
        match &self.quad {
            Some(q) if self.lambda3 > 0.0 => Some(q[j].view()),
            _ => None,
        }
    }

    pub fn zeros(&self) -> Vec<Array1<f64>> {
        self.blocks
            .iter()
            .map(|b| Array1::zeros(b.ncols()))
            .collect()
    }

    /// `c + Σ_j B̃_j β̃_j`.
    pub fn linear_predictor(&self, beta_tilde: &[Array1<f64>], intercept: f64) -> Array1<f64> {
        let mut eta = Array1::from_elem(self.n(), intercept);
        for (j, coef) in beta_tilde.iter().enumerate() {
            self.add_block_product(j, coef.view(), &mut eta);
        }
        eta
    }

    /// `B̃_jᵀ u`.
    fn block_grad(&self, j: usize, u: &Array1<f64>) -> Array1<f64> {
        self.cache[j].bt.dot(u)
    }

    /// `out += B̃_j coef`.
    fn add_block_product(&self, j: usize, coef: ArrayView1<f64>, out: &mut Array1<f64>) {
        for (row, &c) in self.cache[j].bt.rows().into_iter().zip(coef) {
            if c != 0.0 {
                out.scaled_add(c, &row);
            }
        }
    }

    fn class_mean(&self) -> Result<f64> {
        let ybar = self.y.mean().expect("nonempty");
        if ybar <= 0.0 || ybar >= 1.0 {
            return Err(Error::DegenerateLabels);
        }
        Ok(ybar)
    }
}

/// Fitted coefficients in transformed coordinates plus convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub beta_tilde: Vec<Array1<f64>>,
    pub intercept: f64,
    pub objective_trace: Vec<f64>,
    pub kkt_residuals: Vec<f64>,
    /// Absolute intercept gradient (logistic); 0 for Gaussian fits.
    pub intercept_residual: f64,
    pub active: Vec<usize>,
    pub sweeps_used: usize,
    pub converged: bool,
}

impl Solution {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_kkt(&self) -> f64 {
        self.kkt_residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic negative log-likelihood `−(1/n) Σ [y η − log(1 + e^η)]`.
pub fn logistic_loss(eta: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let n = eta.len() as f64;
    eta.iter()
        .zip(y)
        .map(|(&e, &yy)| softplus(e) - yy * e)
        .sum::<f64>()
        / n
}

fn smooth_loss(problem: &GroupLassoProblem, eta: &Array1<f64>) -> f64 {
    match problem.family {
        Family::Gaussian => {
            let n = problem.n() as f64;
            problem
                .y
                .iter()
                .zip(eta)
                .map(|(y, e)| (y - e) * (y - e))
                .sum::<f64>()
                / n
        }
        Family::Binomial => logistic_loss(eta.view(), problem.y.view()),
    }
}

fn penalty_value(problem: &GroupLassoProblem, beta_tilde: &[Array1<f64>]) -> f64 {
    let mut total = 0.0;
    for (j, b) in beta_tilde.iter().enumerate() {
        total += problem.lambda1 * norm2(b.view());
        if let Some(q) = problem.quad_block(j) {
            total += problem.lambda3 * b.dot(&q.dot(b));
        }
    }
    total
}

/// Penalised objective at `(β̃, c)`. The intercept is ignored for Gaussian
/// problems, whose response is taken as already centred.
pub fn objective(problem: &GroupLassoProblem, beta_tilde: &[Array1<f64>], intercept: f64) -> f64 {
    let c = match problem.family {
        Family::Gaussian => 0.0,
        Family::Binomial => intercept,
    };
    let eta = problem.linear_predictor(beta_tilde, c);
    smooth_loss(problem, &eta) + penalty_value(problem, beta_tilde)
}

/// Residual-like vector `u` with `∇_j L = B̃_jᵀ u` and `∂L/∂c = Σ u`.
fn loss_weights(problem: &GroupLassoProblem, eta: &Array1<f64>) -> Array1<f64> {
    let n = problem.n() as f64;
    match problem.family {
        Family::Gaussian => (eta - &problem.y) * (2.0 / n),
        Family::Binomial => Array1::from_iter(
            eta.iter()
                .zip(&problem.y)
                .map(|(&e, &y)| (sigmoid(e) - y) / n),
        ),
    }
}

/// Gradient of the unpenalised loss with respect to each block and the
/// intercept (the latter is 0 for Gaussian problems).
pub fn loss_gradient(
    problem: &GroupLassoProblem,
    beta_tilde: &[Array1<f64>],
    intercept: f64,
) -> (Vec<Array1<f64>>, f64) {
    let c = if problem.family == Family::Binomial {
        intercept
    } else {
        0.0
    };
    let eta = problem.linear_predictor(beta_tilde, c);
    let u = loss_weights(problem, &eta);
    let grads = (0..problem.num_blocks()).map(|j| problem.block_grad(j, &u)).collect();
    let gc = match problem.family {
        Family::Gaussian => 0.0,
        Family::Binomial => u.sum(),
    };
    (grads, gc)
}

/// Smallest `λ₁` for which all-zero blocks satisfy the KKT conditions.
pub fn lambda1_max(problem: &GroupLassoProblem) -> Result<f64> {
    // evaluated exactly as the solver's first sweep sees the null model, so
    // a fit at λ₁ = λ₁,max stays at zero without rounding slack
    let c = match problem.family {
        Family::Gaussian => 0.0,
        Family::Binomial => {
            let ybar = problem.class_mean()?;
            (ybar / (1.0 - ybar)).ln()
        }
    };
    let eta = Array1::from_elem(problem.n(), c);
    let u = loss_weights(problem, &eta);
    Ok((0..problem.num_blocks())
        .map(|j| norm2(problem.block_grad(j, &u).view()))
        .fold(0.0, f64::max))
}

fn block_kkt(
    grad: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    q: Option<ArrayView2<f64>>,
    lambda1: f64,
    lambda3: f64,
) -> f64 {
    let nb = norm2(beta);
    if nb == 0.0 {
        return (norm2(grad) - lambda1).max(0.0);
    }
    let mut s = grad.to_owned();
    if let Some(q) = q {
        s.scaled_add(2.0 * lambda3, &q.dot(&beta));
    }
    s.scaled_add(lambda1 / nb, &beta);
    norm2(s.view())
}

/// Per-block KKT residuals of `solution`, recomputed from the problem data.
pub fn kkt_residuals(problem: &GroupLassoProblem, solution: &Solution) -> Vec<f64> {
    let (grads, _) = loss_gradient(problem, &solution.beta_tilde, solution.intercept);
    grads
        .iter()
        .zip(&solution.beta_tilde)
        .enumerate()
        .map(|(j, (g, b))| {
            block_kkt(
                g.view(),
                b.view(),
                problem.quad_block(j),
                problem.lambda1,
                problem.lambda3,
            )
        })
        .collect()
}

/// Exact minimiser of `½ bᵀHb − gᵀb + λ₁‖b‖` with `H = V diag(d) Vᵀ ⪰ 0`.
///
/// For `‖g‖ > λ₁` the solution is `b = (H + (λ₁/t) I)⁻¹ g` where `t = ‖b‖`
/// solves `Σ c_i² / (d_i t + λ₁)² = 1`, `c = Vᵀg`. The root is found by
/// safeguarded Newton on `S(t)^{-1/2} − 1`, which is linear in `t` when `H`
/// is a multiple of the identity.
fn norm_prox_quadratic(
    eigvals: &Array1<f64>,
    eigvecs: &Array2<f64>,
    g: ArrayView1<f64>,
    lambda1: f64,
) -> Array1<f64> {
    let k = g.len();
    let gnorm = norm2(g);
    if gnorm <= lambda1 || gnorm == 0.0 {
        return Array1::zeros(k);
    }
    let c = eigvecs.t().dot(&g);
    let dmax = eigvals.iter().copied().fold(0.0, f64::max);
    let null_tol = 1e-13 * dmax.max(f64::MIN_POSITIVE);
    let d: Vec<f64> = eigvals
        .iter()
        .map(|&v| if v > null_tol { v } else { 0.0 })
        .collect();
    if lambda1 == 0.0 {
        let coef = Array1::from_iter((0..k).map(|i| if d[i] > 0.0 { c[i] / d[i] } else { 0.0 }));
        return eigvecs.dot(&coef);
    }
    // Range part only: a component of g outside range(H) would make the
    // problem unbounded, and is numerical noise here.
    let c: Vec<f64> = (0..k)
        .map(|i| if d[i] > 0.0 { c[i] } else { 0.0 })
        .collect();
    let cnorm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if cnorm <= lambda1 {
        return Array1::zeros(k);
    }
    let s_of = |t: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for i in 0..k {
            if c[i] == 0.0 {
                continue;
            }
            let den = d[i] * t + lambda1;
            let c2 = c[i] * c[i];
            s += c2 / (den * den);
            ds -= 2.0 * c2 * d[i] / (den * den * den);
        }
        (s, ds)
    };
    let dmin_active = (0..k)
        .filter(|&i| c[i] != 0.0)
        .map(|i| d[i])
        .fold(f64::INFINITY, f64::min);
    let mut lo = (cnorm - lambda1) / dmax;
    let mut hi = (cnorm - lambda1) / dmin_active;
    if !hi.is_finite() || hi <= lo {
        hi = lo.max(f64::MIN_POSITIVE) * 2.0;
    }
    // q(t) = S(t)^{-1/2} is increasing; bracket q(lo) <= 1 <= q(hi).
    let q_of = |t: f64| 1.0 / s_of(t).0.sqrt();
    let mut grow = 0;
    while q_of(hi) < 1.0 && grow < 200 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (s, ds) = s_of(t);
        let q = 1.0 / s.sqrt();
        if q < 1.0 {
            lo = t;
        } else {
            hi = t;
        }
        if (q - 1.0).abs() <= 4.0 * f64::EPSILON || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let dq = -0.5 * q * q * q * ds;
        let newton = t - (q - 1.0) / dq;
        t = if dq > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let coef = Array1::from_iter((0..k).map(|i| c[i] * t / (d[i] * t + lambda1)));
    eigvecs.dot(&coef)
}

/// Minimises `‖target − B̃b‖_n² + λ₃ bᵀQb + λ₁‖b‖` over one block.
///
/// The closed-form eigen solution is polished with majorization–minimization
/// steps (`z = b − ∇/h`, group soft-threshold at `λ₁/h`, `h` the largest
/// curvature eigenvalue) whenever its block KKT residual exceeds `inner_tol`.
pub fn solve_block(
    residual_target: ArrayView1<f64>,
    btilde: ArrayView2<f64>,
    lambda1: f64,
    q: Option<ArrayView2<f64>>,
    lambda3: f64,
    inner_tol: f64,
) -> Array1<f64> {
    let n = btilde.nrows() as f64;
    let mut h = btilde.t().dot(&btilde) * (2.0 / n);
    if let Some(q) = q {
        h.scaled_add(2.0 * lambda3, &q);
    }
    let (vals, vecs) = linalg::symmetric_eigen(h.view());
    let g = btilde.t().dot(&residual_target) * (2.0 / n);
    let mut b = norm_prox_quadratic(&vals, &vecs, g.view(), lambda1);
    let hmax = vals.iter().copied().fold(0.0, f64::max);
    if hmax == 0.0 {
        return b;
    }
    let q_lambda3 = if lambda3 > 0.0 { q } else { None };
    for _ in 0..10_000 {
        let grad = h.dot(&b) - &g;
        let smooth_grad = match q_lambda3 {
            // block_kkt adds the quadratic term itself
            Some(qm) => &grad - &(qm.dot(&b) * (2.0 * lambda3)),
            None => grad.clone(),
        };
        if block_kkt(smooth_grad.view(), b.view(), q_lambda3, lambda1, lambda3) <= inner_tol {
            break;
        }
        let z = &b - &(grad / hmax);
        let zn = norm2(z.view());
        let shrink = if zn > 0.0 {
            (1.0 - lambda1 / (hmax * zn)).max(0.0)
        } else {
            0.0
        };
        b = z * shrink;
    }
    b
}

/// Working state shared by both families.
struct Workspace<'a> {
    problem: &'a GroupLassoProblem,
    beta: Vec<Array1<f64>>,
    intercept: f64,
    eta: Array1<f64>,
    /// `∇_η L` evaluated at `eta`.
    u: Array1<f64>,
    nonzero: Vec<bool>,
}

impl<'a> Workspace<'a> {
    fn new(problem: &'a GroupLassoProblem, beta: Vec<Array1<f64>>, intercept: f64) -> Self {
        let eta = problem.linear_predictor(&beta, intercept);
        let u = loss_weights(problem, &eta);
        let nonzero = beta.iter().map(|b| b.iter().any(|&v| v != 0.0)).collect();
        Self {
            problem,
            beta,
            intercept,
            eta,
            u,
            nonzero,
        }
    }

    fn objective(&self) -> f64 {
        smooth_loss(self.problem, &self.eta) + penalty_value(self.problem, &self.beta)
    }

    fn refresh_u(&mut self) {
        self.u = loss_weights(self.problem, &self.eta);
    }

    /// Updates block `j`; returns its KKT residual before the update.
    fn update_block(&mut self, j: usize) -> f64 {
        let p = self.problem;
        let cache = &p.cache[j];
        let grad = p.block_grad(j, &self.u);
        let q = p.quad_block(j);
        let pre = block_kkt(grad.view(), self.beta[j].view(), q, p.lambda1, p.lambda3);
        if !self.nonzero[j] && pre == 0.0 {
            return 0.0;
        }
        // linear term of the block model: H_loss β_old − ∇L, where H_loss is
        // 2G (squared error, exact) or G/4 (logistic majorizer)
        let loss_curv = match p.family {
            Family::Gaussian => 2.0,
            Family::Binomial => 0.25,
        };
        let mut target = cache.gram.dot(&self.beta[j]) * loss_curv;
        target -= &grad;
        let new = norm_prox_quadratic(&cache.eigvals, &cache.eigvecs, target.view(), p.lambda1);
        let delta = &new - &self.beta[j];
        if delta.iter().any(|&v| v != 0.0) {
            match p.family {
                Family::Gaussian => {
                    p.add_block_product(j, delta.view(), &mut self.eta);
                    p.add_block_product(j, (&delta * (2.0 / p.n() as f64)).view(), &mut self.u);
                }
                Family::Binomial => {
                    p.add_block_product(j, delta.view(), &mut self.eta);
                    self.refresh_u();
                }
            }
        }
        self.nonzero[j] = new.iter().any(|&v| v != 0.0);
        self.beta[j] = new;
        pre
    }

    fn sweep(&mut self, blocks: impl Iterator<Item = usize>) -> f64 {
        let mut worst = 0.0f64;
        for j in blocks {
            worst = worst.max(self.update_block(j));
        }
        worst
    }

    /// Damped Newton step on the unpenalised intercept; returns `|∂L/∂c|`
    /// before the step.
    fn update_intercept(&mut self) -> f64 {
        let p = self.problem;
        let n = p.n() as f64;
        let grad = self.u.sum();
        let hess = self
            .eta
            .iter()
            .map(|&e| {
                let s = sigmoid(e);
                s * (1.0 - s)
            })
            .sum::<f64>()
            / n;
        if grad == 0.0 || !(hess > 0.0) {
            return grad.abs();
        }
        let before = smooth_loss(p, &self.eta);
        let mut step = -grad / hess;
        for _ in 0..60 {
            let trial = &self.eta + step;
            if smooth_loss(p, &trial) <= before {
                self.eta = trial;
                self.intercept += step;
                self.refresh_u();
                break;
            }
            step *= 0.5;
        }
        grad.abs()
    }

    /// Tries `β + θ(β − β_prev)` on blocks that stay nonzero and keeps it
    /// if the objective drops below `current`.
    fn extrapolate(
        &mut self,
        prev: &(Vec<Array1<f64>>, Array1<f64>, f64),
        theta: f64,
        current: f64,
    ) -> Option<f64> {
        let (prev_beta, prev_eta, prev_c) = prev;
        let dropped = prev_beta
            .iter()
            .enumerate()
            .any(|(j, pb)| !self.nonzero[j] && pb.iter().any(|&v| v != 0.0));
        if dropped {
            return None;
        }
        let beta: Vec<Array1<f64>> = self
            .beta
            .iter()
            .zip(prev_beta)
            .map(|(b, pb)| b + &((b - pb) * theta))
            .collect();
        let eta = &self.eta + &((&self.eta - prev_eta) * theta);
        let intercept = self.intercept + theta * (self.intercept - prev_c);
        let obj = smooth_loss(self.problem, &eta) + penalty_value(self.problem, &beta);
        if !(obj < current) {
            return None;
        }
        self.beta = beta;
        self.eta = eta;
        self.intercept = intercept;
        self.refresh_u();
        Some(obj)
    }

    fn into_solution(self, trace: Vec<f64>, sweeps: usize, tol: f64) -> Solution {
        let mut solution = Solution {
            beta_tilde: self.beta,
            intercept: self.intercept,
            objective_trace: trace,
            kkt_residuals: Vec::new(),
            intercept_residual: 0.0,
            active: Vec::new(),
            sweeps_used: sweeps,
            converged: false,
        };
        finalize(self.problem, &mut solution, tol);
        solution
    }
}

fn finalize(problem: &GroupLassoProblem, solution: &mut Solution, tol: f64) {
    solution.kkt_residuals = kkt_residuals(problem, solution);
    solution.intercept_residual = match problem.family {
        Family::Gaussian => 0.0,
        Family::Binomial => loss_gradient(problem, &solution.beta_tilde, solution.intercept)
            .1
            .abs(),
    };
    solution.active = solution
        .beta_tilde
        .iter()
        .enumerate()
        .filter(|(_, b)| norm2(b.view()) > 0.0)
        .map(|(j, _)| j)
        .collect();
    solution.converged = solution.max_kkt() <= tol && solution.intercept_residual <= tol;
}

fn check_warm_start(
    problem: &GroupLassoProblem,
    warm: Option<&Solution>,
) -> Result<Option<(Vec<Array1<f64>>, f64)>> {
    let Some(w) = warm else { return Ok(None) };
    let dims = problem.block_dims();
    if w.beta_tilde.len() != dims.len()
        || w.beta_tilde.iter().zip(&dims).any(|(b, &k)| b.len() != k)
    {
        return Err(Error::DimensionMismatch(
            "warm start does not match problem blocks".into(),
        ));
    }
    Ok(Some((w.beta_tilde.clone(), w.intercept)))
}

fn validate_lambda(problem: &GroupLassoProblem) -> Result<()> {
    if !(problem.lambda1 >= 0.0 && problem.lambda1.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda1 must be >= 0, got {}",
            problem.lambda1
        )));
    }
    Ok(())
}

/// Shared outer loop: a full sweep, then sweeps over the active set until
/// their KKT residuals settle, then a from-scratch KKT check of every block.
fn run_bcd(ws: &mut Workspace<'_>, config: &SolverConfig, logistic: bool) -> (Vec<f64>, usize) {
    let p = ws.problem.num_blocks();
    let tol = config.kkt_tol;
    let mut trace = Vec::new();
    let mut sweeps = 0usize;
    while sweeps < config.max_sweeps {
        let mut worst = ws.sweep(0..p);
        if logistic {
            worst = worst.max(ws.update_intercept());
        }
        sweeps += 1;
        trace.push(ws.objective());

        let mut stalled = 0;
        let mut theta = 1.0;
        while sweeps < config.max_sweeps && worst > 0.5 * tol {
            let active: Vec<usize> = (0..p).filter(|&j| ws.nonzero[j]).collect();
            if active.is_empty() && !logistic {
                break;
            }
            let prev = (ws.beta.clone(), ws.eta.clone(), ws.intercept);
            worst = ws.sweep(active.into_iter());
            if logistic {
                worst = worst.max(ws.update_intercept());
            }
            sweeps += 1;
            let mut obj = ws.objective();
            if worst > 0.5 * tol {
                match ws.extrapolate(&prev, theta, obj) {
                    Some(better) => {
                        obj = better;
                        theta = (2.0 * theta).min(8.0);
                    }
                    None => theta = (0.5 * theta).max(0.25),
                }
            }
            let last = *trace.last().expect("at least one sweep");
            stalled = if obj >= last { stalled + 1 } else { 0 };
            trace.push(obj);
            if stalled >= 3 {
                break;
            }
        }

        // fresh state for the certificate
        ws.eta = ws.problem.linear_predictor(&ws.beta, ws.intercept);
        ws.refresh_u();
        let residuals: Vec<f64> = (0..p)
            .map(|j| {
                let g = ws.problem.block_grad(j, &ws.u);
                block_kkt(
                    g.view(),
                    ws.beta[j].view(),
                    ws.problem.quad_block(j),
                    ws.problem.lambda1,
                    ws.problem.lambda3,
                )
            })
            .collect();
        let mut max_res = residuals.iter().copied().fold(0.0, f64::max);
        if logistic {
            max_res = max_res.max(ws.u.sum().abs());
        }
        if max_res <= tol {
            break;
        }
    }
    (trace, sweeps)
}

pub fn fit_gaussian(
    problem: &GroupLassoProblem,
    config: &SolverConfig,
    warm_start: Option<&Solution>,
) -> Result<Solution> {
    if problem.family != Family::Gaussian {
        return Err(Error::InvalidInput(
            "fit_gaussian called on a binomial problem".into(),
        ));
    }
    config.validate()?;
    validate_lambda(problem)?;
    let (beta, _) =
        check_warm_start(problem, warm_start)?.unwrap_or_else(|| (problem.zeros(), 0.0));
    let mut ws = Workspace::new(problem, beta, 0.0);
    let (trace, sweeps) = run_bcd(&mut ws, config, false);
    Ok(ws.into_solution(trace, sweeps, config.kkt_tol))
}

pub fn fit_logistic(
    problem: &GroupLassoProblem,
    config: &SolverConfig,
    warm_start: Option<&Solution>,
) -> Result<Solution> {
    if problem.family != Family::Binomial {
        return Err(Error::InvalidInput(
            "fit_logistic called on a gaussian problem".into(),
        ));
    }
    config.validate()?;
    validate_lambda(problem)?;
    let ybar = problem.class_mean()?;
    let (beta, intercept) = check_warm_start(problem, warm_start)?
        .unwrap_or_else(|| (problem.zeros(), (ybar / (1.0 - ybar)).ln()));
    let mut ws = Workspace::new(problem, beta, intercept);
    let (trace, sweeps) = run_bcd(&mut ws, config, true);
    Ok(ws.into_solution(trace, sweeps, config.kkt_tol))
}

/// Dispatches on the problem family.
pub fn fit(
    problem: &GroupLassoProblem,
    config: &SolverConfig,
    warm_start: Option<&Solution>,
) -> Result<Solution> {
    match problem.family {
        Family::Gaussian => fit_gaussian(problem, config, warm_start),
        Family::Binomial => fit_logistic(problem, config, warm_start),
    }
}
