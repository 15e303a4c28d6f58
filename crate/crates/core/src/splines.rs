//! Clamped cubic B-spline bases and their curvature (second-derivative Gram)
//! matrices.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;
const ORDER: usize = DEGREE + 1;

/// Domain end points plus strictly increasing interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    lower: f64,
    upper: f64,
    interior: Vec<f64>,
    /// Interior knots asked for before ties were collapsed.
    #[serde(default)]
    requested: usize,
}

impl KnotVector {
    pub fn new(lower: f64, upper: f64, interior: Vec<f64>) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidInput(format!(
                "knot domain [{lower}, {upper}] is empty or not finite"
            )));
        }
        let mut prev = lower;
        for &t in &interior {
            if !(t > prev && t < upper) {
                return Err(Error::InvalidInput(format!(
                    "interior knot {t} is not strictly increasing inside ({lower}, {upper})"
                )));
            }
            prev = t;
        }
        let requested = interior.len();
        Ok(Self {
            lower,
            upper,
            interior,
            requested,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// Number of interior knots lost to tied quantiles.
    pub fn collapsed(&self) -> usize {
        self.requested.saturating_sub(self.interior.len())
    }

    /// Full clamped sequence: `lower` ×4, interior, `upper` ×4.
    pub fn clamped_sequence(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.interior.len() + 2 * ORDER);
        t.extend(std::iter::repeat(self.lower).take(ORDER));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat(self.upper).take(ORDER));
        t
    }
}

/// Default interior knot count: `round(√n) − 4`, at least zero, so that the
/// basis size is about `√n`.
pub fn default_num_interior(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).saturating_sub(4)
}

/// Empirical quantile by linear interpolation between order statistics
/// (position `(n − 1)·level` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Places interior knots at empirical quantiles `i/(m+1)` of `x_col` on the
/// data range. Tied quantiles are collapsed, shrinking the basis.
pub fn make_knots(x_col: ArrayView1<f64>, num_interior: usize) -> Result<KnotVector> {
    if x_col.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "predictor contains non-finite values".into(),
        ));
    }
    let mut sorted: Vec<f64> = x_col.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegeneratePredictor);
    }
    let lower = sorted[0];
    let upper = sorted[sorted.len() - 1];
    let mut interior: Vec<f64> = Vec::with_capacity(num_interior);
    for i in 1..=num_interior {
        let q = quantile_sorted(&sorted, i as f64 / (num_interior + 1) as f64);
        let last = interior.last().copied().unwrap_or(lower);
        if q > last && q < upper {
            interior.push(q);
        }
    }
    Ok(KnotVector {
        lower,
        upper,
        interior,
        requested: num_interior,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "KnotVector", into = "KnotVector")]
pub struct SplineBasis {
    knots: KnotVector,
    sequence: Vec<f64>,
}

impl From<KnotVector> for SplineBasis {
    fn from(knots: KnotVector) -> Self {
        SplineBasis::new(knots)
    }
}

impl From<SplineBasis> for KnotVector {
    fn from(basis: SplineBasis) -> Self {
        basis.knots
    }
}

impl SplineBasis {
    pub fn new(knots: KnotVector) -> Self {
        let sequence = knots.clamped_sequence();
        Self { knots, sequence }
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    /// Number of basis functions, `|interior| + 4`.
    pub fn len(&self) -> usize {
        self.knots.interior.len() + ORDER
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.knots.lower, self.knots.upper)
    }

    /// Knot span `s` with `t[s] ≤ x < t[s+1]`; the right end point maps to
    /// the last non-empty span.
    fn span(&self, x: f64) -> usize {
        let k = self.len();
        let t = &self.sequence;
        if x >= t[k] {
            return k - 1;
        }
        // t[3..=k] is nondecreasing; find last index with t[s] <= x
        let mut lo = DEGREE;
        let mut hi = k;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// The four possibly nonzero basis values at `x` (after clamping) and the
    /// index of the first one.
    pub fn eval_local(&self, x: f64) -> (usize, [f64; ORDER]) {
        let x = self.clamp(x);
        let s = self.span(x);
        let t = &self.sequence;
        let mut n = [0.0; ORDER];
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (s - DEGREE, n)
    }

    /// Values and first two derivatives of the local basis at `x`, evaluated
    /// in span `s`. Rows are derivative orders 0, 1, 2.
    fn derivs_in_span(&self, x: f64, s: usize) -> [[f64; ORDER]; 3] {
        const P: usize = DEGREE;
        let t = &self.sequence;
        let mut ndu = [[0.0; ORDER]; ORDER];
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=P {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = [[0.0; ORDER]; 3];
        for j in 0..=P {
            ders[0][j] = ndu[j][P];
        }
        let mut a = [[0.0; ORDER]; 2];
        for r in 0..=P {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=2usize {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = P - k;
                if rk >= 0 {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2: usize = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    P - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = P as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            for v in row.iter_mut() {
                *v *= fac;
            }
            fac *= (P - k) as f64;
        }
        ders
    }

    /// Second derivatives of the local basis at `x`; returns the first index.
    pub fn second_derivative_local(&self, x: f64) -> (usize, [f64; ORDER]) {
        let x = self.clamp(x);
        let s = self.span(x);
        (s - DEGREE, self.derivs_in_span(x, s)[2])
    }

    /// Dense vector of all `K` basis values at `x`.
    pub fn eval_basis(&self, x: f64) -> Array1<f64> {
        let mut out = Array1::zeros(self.len());
        let (start, vals) = self.eval_local(x);
        for (i, v) in vals.iter().enumerate() {
            out[start + i] = *v;
        }
        out
    }

    /// `n × K` design block with rows `eval_basis(x_i)`.
    pub fn design_block(&self, x_col: ArrayView1<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x_col.len(), self.len()));
        for (i, &x) in x_col.iter().enumerate() {
            let (start, vals) = self.eval_local(x);
            for (c, v) in vals.iter().enumerate() {
                out[[i, start + c]] = *v;
            }
        }
        out
    }

    /// Curvature matrix `Ω_kl = ∫ b_k″ b_l″` over `[lower, upper]`.
    ///
    /// Second derivatives are linear on each knot interval, so two-point
    /// Gauss–Legendre per interval integrates the products exactly.
    pub fn curvature_matrix(&self) -> Array2<f64> {
        let k = self.len();
        let t = &self.sequence;
        let mut omega = Array2::<f64>::zeros((k, k));
        let g = 1.0 / 3f64.sqrt();
        for s in DEGREE..k {
            let (a, b) = (t[s], t[s + 1]);
            if !(b > a) {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for x in [mid - half * g, mid + half * g] {
                let d2 = self.derivs_in_span(x, s)[2];
                let first = s - DEGREE;
                for i in 0..ORDER {
                    for j in 0..ORDER {
                        omega[[first + i, first + j]] += half * d2[i] * d2[j];
                    }
                }
            }
        }
        omega
    }

    /// `I²(f) = ∫ f″²` for `f = Σ_k β_k b_k`, with missing trailing
    /// coefficients taken as zero.
    ///
    /// `f″` is formed at the Gauss points before squaring, so nearly linear
    /// `f` do not lose digits to cancellation as `βᵀΩβ` does.
    pub fn curvature(&self, beta: ArrayView1<f64>) -> f64 {
        assert!(beta.len() <= self.len(), "more coefficients than basis functions");
        let t = &self.sequence;
        let g = 1.0 / 3f64.sqrt();
        let mut total = 0.0;
        for s in DEGREE..self.len() {
            let (a, b) = (t[s], t[s + 1]);
            if !(b > a) {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for x in [mid - half * g, mid + half * g] {
                let d2 = self.derivs_in_span(x, s)[2];
                let f2: f64 = (0..ORDER)
                    .filter_map(|i| beta.get(s - DEGREE + i).map(|c| c * d2[i]))
                    .sum();
                total += half * f2 * f2;
            }
        }
        total
    }

    /// Greville abscissae; a clamped cubic basis reproduces `f(x) = x` with
    /// these as coefficients.
    pub fn greville(&self) -> Array1<f64> {
        let t = &self.sequence;
        Array1::from_iter((0..self.len()).map(|i| (t[i + 1] + t[i + 2] + t[i + 3]) / DEGREE as f64))
    }

    /// `f(x) = Σ_k β_k (b_k(x) − m_k)`, a component centred on the training
    /// sample whose design-block column means are `col_means`.
    pub fn eval_component(&self, beta: ArrayView1<f64>, col_means: ArrayView1<f64>, x: f64) -> f64 {
        let (start, vals) = self.eval_local(x);
        let mut acc = 0.0;
        for (i, v) in vals.iter().enumerate() {
            acc += beta[start + i] * v;
        }
        acc - beta.dot(&col_means)
    }
}

/// Column means of a design block.
pub fn column_means(block: &Array2<f64>) -> Array1<f64> {
    let n = block.nrows() as f64;
    block.sum_axis(ndarray::Axis(0)) / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit_basis(interior: Vec<f64>) -> SplineBasis {
        SplineBasis::new(KnotVector::new(0.0, 1.0, interior).unwrap())
    }

    #[test]
    fn boundary_only_knots() {
        let x = array![0.0, 0.3, 1.0];
        let kv = make_knots(x.view(), 0).unwrap();
        assert!(kv.interior().is_empty());
        assert_eq!(SplineBasis::new(kv).len(), 4);
    }

    #[test]
    fn quantile_knots_on_grid() {
        // Oracle: order statistics of {0, .01, …, 1} at positions 100·q are
        // exactly 0.25, 0.5, 0.75.
        let x = Array1::from_iter((0..=100).map(|i| i as f64 / 100.0));
        let kv = make_knots(x.view(), 3).unwrap();
        let expect = [0.25, 0.5, 0.75];
        for (a, b) in kv.interior().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert_eq!(kv.lower(), 0.0);
        assert_eq!(kv.upper(), 1.0);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x = array![2.0, 2.0, 2.0];
        assert!(matches!(
            make_knots(x.view(), 2),
            Err(Error::DegeneratePredictor)
        ));
    }

    #[test]
    fn tied_quantiles_collapse() {
        let mut x = vec![0.0; 30];
        x.extend([0.5, 1.0]);
        let kv = make_knots(Array1::from(x).view(), 4).unwrap();
        assert!(kv.interior().is_empty());
        assert_eq!(kv.collapsed(), 4);
    }

    #[test]
    fn bernstein_case() {
        let b = unit_basis(vec![]);
        let v = b.eval_basis(0.5);
        // cubic Bernstein polynomials at 1/2
        let expect = [0.125, 0.375, 0.375, 0.125];
        for (a, e) in v.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn clamped_endpoints() {
        let b = unit_basis(vec![0.3, 0.6]);
        let block = b.design_block(array![0.0, 1.0].view());
        assert_eq!(block.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(block.row(1).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let b = unit_basis(vec![0.4]);
        assert_eq!(b.eval_basis(-3.0), b.eval_basis(0.0));
        assert_eq!(b.eval_basis(7.0), b.eval_basis(1.0));
    }

    #[test]
    fn omega_corner_entry() {
        // b_1 = (1 − x)³, b_1″ = 6(1 − x), ∫₀¹ 36(1 − x)² = 12
        let omega = unit_basis(vec![]).curvature_matrix();
        assert!((omega[[0, 0]] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_block() {
        let b = unit_basis(vec![0.5]);
        let block = b.design_block(array![0.2].view());
        assert_eq!(block.row(0), b.eval_basis(0.2));
    }

    #[test]
    fn component_zero_and_unit() {
        let b = unit_basis(vec![0.5]);
        let means = Array1::from_elem(5, 0.2);
        let zero = Array1::zeros(5);
        assert_eq!(b.eval_component(zero.view(), means.view(), 0.3), 0.0);
        let mut e = Array1::zeros(5);
        e[2] = 1.0;
        let v = b.eval_component(e.view(), means.view(), 0.3);
        assert!((v - (b.eval_basis(0.3)[2] - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn default_knot_rule() {
        assert_eq!(default_num_interior(150), 8);
        assert_eq!(default_num_interior(100), 6);
        assert_eq!(default_num_interior(9), 0);
    }
}
