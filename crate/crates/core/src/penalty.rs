//! Per-predictor penalty blocks.
//!
//! The sparsity-smoothness penalty of a component `f_j = B_c β` is
//! `λ₁ √(w₁‖f_j‖_n² + λ₂ w₂ βᵀΩβ) = λ₁ √(βᵀMβ)` with
//! `M = (w₁/n) B_cᵀB_c + λ₂ w₂ Ω`. Factoring `M = RᵀR` and substituting
//! `β̃ = Rβ`, `B̃ = B_c R⁻¹` turns it into a plain group-lasso norm `λ₁‖β̃‖`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const JITTER_STEPS: [f64; 3] = [1e-12, 1e-10, 1e-8];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockTransform {
    pub m: Array2<f64>,
    /// Upper-triangular factor, `m = rᵀr`.
    pub r: Array2<f64>,
    pub col_means: Array1<f64>,
    pub w1: f64,
    pub w2: f64,
    /// Diagonal perturbation added to `m` before it factored; 0 when none.
    pub jitter_used: f64,
}

impl BlockTransform {
    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Original-space coefficients from transformed ones: solves `Rβ = β̃`.
    pub fn back_transform(&self, beta_tilde: ArrayView1<f64>) -> Array1<f64> {
        linalg::solve_upper(self.r.view(), beta_tilde)
    }

    pub fn forward_transform(&self, beta: ArrayView1<f64>) -> Array1<f64> {
        self.r.dot(&beta)
    }

    /// `R⁻ᵀ Ω R⁻¹`, the curvature quadratic form in transformed coordinates.
    pub fn transformed_curvature(&self, omega: ArrayView2<f64>) -> Array2<f64> {
        linalg::congruence_inverse(omega, self.r.view())
    }

    /// `B_new R⁻¹` after centring `B_new` with the training column means.
    pub fn transform_design(&self, block: ArrayView2<f64>) -> Array2<f64> {
        let centered = &block - &self.col_means.view().insert_axis(Axis(0));
        linalg::right_solve_upper(centered.view(), self.r.view())
    }
}

/// Centres `block`, forms `M`, factors it and returns the transformed design.
///
/// If `M` does not factor, `δ·trace(M)/K` is added to its diagonal with `δ`
/// stepping through 1e−12, 1e−10, 1e−8.
pub fn build_block(
    predictor: usize,
    block: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    lambda2: f64,
    w1: f64,
    w2: f64,
) -> Result<(BlockTransform, Array2<f64>)> {
    let (n, k) = block.dim();
    if omega.dim() != (k, k) {
        return Err(Error::DimensionMismatch(format!(
            "curvature matrix is {:?} but block has {k} columns",
            omega.dim()
        )));
    }
    if n == 0 || k == 0 {
        return Err(Error::InvalidInput("empty design block".into()));
    }
    if !(lambda2 >= 0.0 && lambda2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda2 must be finite and >= 0, got {lambda2}"
        )));
    }
    if !(w1 > 0.0 && w1.is_finite()) || !(w2 >= 0.0 && w2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "invalid penalty weights ({w1}, {w2})"
        )));
    }
    let col_means = block.mean_axis(Axis(0)).expect("nonempty block");
    let centered = &block - &col_means.view().insert_axis(Axis(0));

    let mut m = centered.t().dot(&centered) * (w1 / n as f64);
    m.scaled_add(lambda2 * w2, &omega);
    linalg::symmetrize(&mut m);

    let (r, jitter_used) = factor_with_jitter(&m).ok_or(Error::SingularBlock {
        predictor,
        jitter: JITTER_STEPS[JITTER_STEPS.len() - 1],
    })?;
    let btilde = linalg::right_solve_upper(centered.view(), r.view());
    let transform = BlockTransform {
        m,
        r,
        col_means,
        w1,
        w2,
        jitter_used,
    };
    Ok((transform, btilde))
}

fn factor_with_jitter(m: &Array2<f64>) -> Option<(Array2<f64>, f64)> {
    if let Some(r) = linalg::cholesky_upper(m.view()) {
        return Some((r, 0.0));
    }
    let k = m.nrows();
    let scale = m.diag().sum() / k as f64;
    if !(scale > 0.0) {
        return None;
    }
    JITTER_STEPS.iter().find_map(|&delta| {
        let mut jittered = m.clone();
        let add = delta * scale;
        jittered.diag_mut().mapv_inplace(|d| d + add);
        linalg::cholesky_upper(jittered.view()).map(|r| (r, add))
    })
}

/// Free-function form of [`BlockTransform::back_transform`].
pub fn back_transform(transform: &BlockTransform, beta_tilde: ArrayView1<f64>) -> Array1<f64> {
    transform.back_transform(beta_tilde)
}
