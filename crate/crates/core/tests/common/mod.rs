#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sparse_additive::SplineBasis;

/// Textbook recursive Cox–de Boor value of `B_{i,p}(x)` on knot sequence `t`
/// (0/0 taken as 0), with the right end closed on the last nonempty span.
pub fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let last = t[t.len() - 1];
        let inside = t[i] <= x && x < t[i + 1];
        let at_end = x == last && t[i] < t[i + 1] && t[i + 1] == last;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + p] - t[i];
    if d1 > 0.0 {
        v += (x - t[i]) / d1 * cox_de_boor(t, i, p - 1, x);
    }
    let d2 = t[i + p + 1] - t[i + 1];
    if d2 > 0.0 {
        v += (t[i + p + 1] - x) / d2 * cox_de_boor(t, i + 1, p - 1, x);
    }
    v
}

/// `d^r/dx^r B_{i,p}(x)` by the recursive derivative formula.
pub fn cox_de_boor_deriv(t: &[f64], i: usize, p: usize, r: usize, x: f64) -> f64 {
    if r == 0 {
        return cox_de_boor(t, i, p, x);
    }
    let mut v = 0.0;
    let d1 = t[i + p] - t[i];
    if d1 > 0.0 {
        v += p as f64 / d1 * cox_de_boor_deriv(t, i, p - 1, r - 1, x);
    }
    let d2 = t[i + p + 1] - t[i + 1];
    if d2 > 0.0 {
        v -= p as f64 / d2 * cox_de_boor_deriv(t, i + 1, p - 1, r - 1, x);
    }
    v
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        let err = (left + right - whole).abs();
        // rounding floor: below this the difference is noise, not truncation error
        let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        if depth == 0 || err <= 15.0 * tol || err <= floor {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, left, 0.5 * tol, depth - 1) + recurse(f, m, b, right, 0.5 * tol, depth - 1)
    }
    recurse(f, a, b, simpson(f, a, b), tol, 30)
}

/// Random clamped knot layout on a random interval.
pub fn random_knots(rng: &mut ChaCha8Rng, max_interior: usize) -> (f64, f64, Vec<f64>) {
    let lower = rng.random_range(-3.0..1.0);
    let upper = lower + rng.random_range(0.5..4.0);
    let m = rng.random_range(0..=max_interior);
    let mut interior: Vec<f64> = (0..m).map(|_| rng.random_range(lower..upper)).collect();
    interior.sort_by(f64::total_cmp);
    interior.dedup_by(|a, b| (*a - *b).abs() < 1e-3 * (upper - lower));
    interior.retain(|&t| t > lower + 1e-3 && t < upper - 1e-3);
    (lower, upper, interior)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0))
}

/// Smooth additive signal plus noise on uniform covariates.
pub fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Array2<f64>, Array1<f64>) {
    let x: Array2<f64> = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_iter((0..n).map(|i| {
        let r = x.row(i);
        (2.0 * r[0]).sin() + if p > 1 { r[1] * r[1] } else { 0.0 } + 0.3 * rng.random_range(-1.0..1.0)
    }));
    (x, y)
}

/// 0/1 labels from a logistic additive model on the same covariates.
pub fn random_labels(rng: &mut ChaCha8Rng, x: &Array2<f64>) -> Array1<f64> {
    let n = x.nrows();
    let mut y = Array1::from_iter((0..n).map(|i| {
        let eta = 2.0 * x[[i, 0]] + (3.0 * x[[i, 0]]).sin();
        let p = 1.0 / (1.0 + (-eta).exp());
        (rng.random::<f64>() < p) as u8 as f64
    }));
    y[0] = 0.0;
    y[1] = 1.0;
    y
}

/// Gaussian group-lasso objective `‖y − Bβ‖_n² + λ₁Σ‖β_j‖ + λ₃Σβ_jᵀQ_jβ_j`
/// evaluated directly on stacked data.
pub fn gaussian_objective(
    y: &Array1<f64>,
    blocks: &[Array2<f64>],
    quad: Option<&[Array2<f64>]>,
    lambda1: f64,
    lambda3: f64,
    beta: &[Array1<f64>],
) -> f64 {
    let n = y.len() as f64;
    let mut r = y.clone();
    for (b, c) in blocks.iter().zip(beta) {
        r -= &b.dot(c);
    }
    let mut obj = r.dot(&r) / n;
    for (j, c) in beta.iter().enumerate() {
        obj += lambda1 * c.dot(c).sqrt();
        if let Some(q) = quad {
            obj += lambda3 * c.dot(&q[j].dot(c));
        }
    }
    obj
}

/// Reference minimiser by FISTA with gradient restart on the full stacked
/// vector: gradient step on the smooth part, then blockwise
/// `v ↦ (1 − s·λ₁/‖v‖)₊ v`.
pub fn fista_reference(
    y: &Array1<f64>,
    blocks: &[Array2<f64>],
    quad: Option<&[Array2<f64>]>,
    lambda1: f64,
    lambda3: f64,
    iterations: usize,
) -> (Vec<Array1<f64>>, f64) {
    let n = y.len() as f64;
    let dims: Vec<usize> = blocks.iter().map(|b| b.ncols()).collect();
    let total: usize = dims.iter().sum();
    let mut stacked = Array2::<f64>::zeros((y.len(), total));
    let mut off = 0;
    for b in blocks {
        stacked.slice_mut(ndarray::s![.., off..off + b.ncols()]).assign(b);
        off += b.ncols();
    }
    let mut qfull = Array2::<f64>::zeros((total, total));
    if let Some(q) = quad {
        let mut off = 0;
        for (j, qj) in q.iter().enumerate() {
            qfull
                .slice_mut(ndarray::s![off..off + dims[j], off..off + dims[j]])
                .assign(qj);
            off += dims[j];
        }
    }
    // H = (2/n)BᵀB + 2λ₃Q
    let h = stacked.t().dot(&stacked) * (2.0 / n) + &qfull * (2.0 * lambda3);
    let g0 = stacked.t().dot(y) * (2.0 / n);
    let lip = power_iteration(&h);
    let step = 1.0 / lip;
    let prox = |v: &Array1<f64>| -> Array1<f64> {
        let mut out = v.clone();
        let mut off = 0;
        for &k in &dims {
            let mut seg = out.slice_mut(ndarray::s![off..off + k]);
            let nrm = seg.iter().map(|a| a * a).sum::<f64>().sqrt();
            let shrink = if nrm > 0.0 { (1.0 - step * lambda1 / nrm).max(0.0) } else { 0.0 };
            seg.mapv_inplace(|a| a * shrink);
            off += k;
        }
        out
    };
    let mut x = Array1::<f64>::zeros(total);
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let grad = h.dot(&z) - &g0;
        let x_new = prox(&(&z - &(grad * step)));
        // restart when momentum points uphill
        let uphill = (&z - &x_new).dot(&(&x_new - &x)) > 0.0;
        let t_new = if uphill { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let momentum = if uphill { 0.0 } else { (t - 1.0) / t_new };
        z = &x_new + &((&x_new - &x) * momentum);
        x = x_new;
        t = t_new;
    }
    let mut beta = Vec::new();
    let mut off = 0;
    for &k in &dims {
        beta.push(x.slice(ndarray::s![off..off + k]).to_owned());
        off += k;
    }
    let obj = gaussian_objective(y, blocks, quad, lambda1, lambda3, &beta);
    (beta, obj)
}

fn power_iteration(h: &Array2<f64>) -> f64 {
    let mut v = Array1::from_elem(h.nrows(), 1.0);
    let mut lam = 0.0;
    for _ in 0..500 {
        let w = h.dot(&v);
        let nrm = w.dot(&w).sqrt();
        if nrm == 0.0 {
            return 1.0;
        }
        lam = nrm / v.dot(&v).sqrt();
        v = w / nrm;
    }
    // small safety margin keeps the step strictly below 1/L
    lam * 1.01
}

/// Random group-lasso instance: uniform blocks, centred Gaussian response or
/// 0/1 labels with both classes present, optional random PSD quadratic.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    n: usize,
    dims: &[usize],
    family: sparse_additive::Family,
    lambda3: f64,
) -> sparse_additive::GroupLassoProblem {
    use sparse_additive::{Family, GroupLassoProblem};
    let blocks: Vec<Array2<f64>> = dims.iter().map(|&k| random_matrix(rng, n, k)).collect();
    let y = match family {
        Family::Gaussian => {
            let mut y = Array1::from_iter((0..n).map(|_| rng.random_range(-2.0..2.0)));
            y += &blocks[0].column(0).mapv(|v| 1.5 * v);
            let m = y.mean().unwrap();
            y - m
        }
        Family::Binomial => {
            let mut y = Array1::from_iter((0..n).map(|i| {
                let eta = 2.0 * blocks[0][[i, 0]];
                (rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())) as u8 as f64
            }));
            y[0] = 0.0;
            y[1] = 1.0;
            y
        }
    };
    let problem = GroupLassoProblem::new(y, blocks, family).unwrap();
    if lambda3 > 0.0 {
        let quad = dims
            .iter()
            .map(|&k| {
                let a = random_matrix(rng, k, k);
                a.t().dot(&a)
            })
            .collect();
        problem.with_quadratic(quad, lambda3).unwrap()
    } else {
        problem
    }
}

/// `Ω` by adaptive Simpson on each knot span of the recursive second
/// derivatives.
pub fn quadrature_omega(basis: &SplineBasis) -> Array2<f64> {
    let t = basis.knots().clamped_sequence();
    let k = basis.len();
    let kv = basis.knots();
    let mut breaks = vec![kv.lower()];
    breaks.extend_from_slice(kv.interior());
    breaks.push(kv.upper());
    let mut omega = Array2::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let mut total = 0.0;
            for w in breaks.windows(2) {
                // integrate strictly inside each span so one-sided derivatives are used
                let (lo, hi) = (w[0], w[1]);
                let f = |x: f64| {
                    let x = x.clamp(lo + 1e-15 * (hi - lo), hi - 1e-15 * (hi - lo));
                    cox_de_boor_deriv(&t, a, 3, 2, x) * cox_de_boor_deriv(&t, b, 3, 2, x)
                };
                total += adaptive_simpson(&f, lo, hi, 1e-14);
            }
            omega[[a, b]] = total;
            omega[[b, a]] = total;
        }
    }
    omega
}
