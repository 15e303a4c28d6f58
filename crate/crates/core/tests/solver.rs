mod common;

use common::{fista_reference, gaussian_objective, random_matrix, random_problem};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_additive::solver::{self, kkt_residuals, lambda1_max, loss_gradient, objective};
use sparse_additive::{Family, GroupLassoProblem, Solution, SolverConfig};

fn tight() -> SolverConfig {
    SolverConfig {
        kkt_tol: 1e-9,
        ..SolverConfig::default()
    }
}

fn warm(beta: Vec<Array1<f64>>, intercept: f64) -> Solution {
    Solution {
        beta_tilde: beta,
        intercept,
        objective_trace: Vec::new(),
        kkt_residuals: Vec::new(),
        intercept_residual: 0.0,
        active: Vec::new(),
        sweeps_used: 0,
        converged: false,
    }
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let problem = random_problem(&mut rng, 30, &[3, 4], Family::Binomial, 0.0).with_lambda1(0.0);
        let beta: Vec<Array1<f64>> = problem
            .block_dims()
            .iter()
            .map(|&k| Array1::from_iter((0..k).map(|_| rng.random_range(-1.0..1.0))))
            .collect();
        let c = rng.random_range(-1.0..1.0);
        let (grads, gc) = loss_gradient(&problem, &beta, c);
        let h = 1e-5;
        for j in 0..beta.len() {
            for l in 0..beta[j].len() {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j][l] += h;
                dn[j][l] -= h;
                let fd = (objective(&problem, &up, c) - objective(&problem, &dn, c)) / (2.0 * h);
                assert!((fd - grads[j][l]).abs() <= 1e-6, "block {j} entry {l}");
            }
        }
        let fd = (objective(&problem, &beta, c + h) - objective(&problem, &beta, c - h)) / (2.0 * h);
        assert!((fd - gc).abs() <= 1e-6);
    }
}

#[test]
fn gaussian_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let problem = random_problem(&mut rng, 25, &[2, 3], Family::Gaussian, 0.0);
    let beta = vec![Array1::from(vec![0.3, -0.2]), Array1::from(vec![0.1, 0.5, -1.0])];
    let (grads, _) = loss_gradient(&problem, &beta, 0.0);
    let h = 1e-5;
    for j in 0..2 {
        for l in 0..beta[j].len() {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j][l] += h;
            dn[j][l] -= h;
            let fd = (objective(&problem, &up, 0.0) - objective(&problem, &dn, 0.0)) / (2.0 * h);
            assert!((fd - grads[j][l]).abs() <= 1e-6);
        }
    }
}

#[test]
fn logistic_null_model_intercept() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let problem = random_problem(&mut rng, 40, &[3, 3, 2], Family::Binomial, 0.0);
        let ybar = problem.y().mean().unwrap();
        let lmax = lambda1_max(&problem).unwrap();
        let sol = solver::fit(&problem.with_lambda1(lmax * 1.01), &tight(), None).unwrap();
        assert!(sol.active.is_empty());
        assert!((sol.intercept - (ybar / (1.0 - ybar)).ln()).abs() <= 1e-6);
    }
}

#[test]
fn orthogonal_blocks_stay_zero_for_balanced_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 30;
    let y = Array1::from_iter((0..n).map(|i| (i % 2) as f64));
    let centred = y.mapv(|v| v - 0.5);
    let cc = centred.dot(&centred);
    let blocks: Vec<Array2<f64>> = (0..3)
        .map(|_| {
            let mut b = random_matrix(&mut rng, n, 3);
            for mut col in b.columns_mut() {
                let proj = col.dot(&centred) / cc;
                col.scaled_add(-proj, &centred);
            }
            b
        })
        .collect();
    let problem = GroupLassoProblem::new(y, blocks, Family::Binomial).unwrap();
    for lambda1 in [1e-6, 1e-3, 0.1] {
        let sol = solver::fit(&problem.clone().with_lambda1(lambda1), &tight(), None).unwrap();
        assert!(sol.active.is_empty(), "lambda1 = {lambda1}");
        assert!(sol.intercept.abs() <= 1e-12);
    }
}

#[test]
fn objective_trace_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for family in [Family::Gaussian, Family::Binomial] {
        for lambda3 in [0.0, 0.05] {
            for _ in 0..5 {
                let problem = random_problem(&mut rng, 40, &[4, 3, 5, 2], family, lambda3);
                let lmax = lambda1_max(&problem).unwrap();
                let problem = problem.with_lambda1(0.1 * lmax);
                let sol = solver::fit(&problem, &tight(), None).unwrap();
                assert!(sol.converged);
                for w in sol.objective_trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{family:?}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }
}

#[test]
fn converged_fits_pass_independent_kkt_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for family in [Family::Gaussian, Family::Binomial] {
        for _ in 0..10 {
            let problem = random_problem(&mut rng, 35, &[3, 4, 2], family, 0.02);
            let lmax = lambda1_max(&problem).unwrap();
            let problem = problem.with_lambda1(rng.random_range(0.05..0.8) * lmax);
            let sol = solver::fit(&problem, &SolverConfig::default(), None).unwrap();
            assert!(sol.converged);
            for r in kkt_residuals(&problem, &sol) {
                assert!(r <= 1e-6);
            }
        }
    }
}

#[test]
fn perturbing_an_active_coefficient_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let problem = random_problem(&mut rng, 30, &[3, 3], Family::Gaussian, 0.0);
        let lmax = lambda1_max(&problem).unwrap();
        let problem = problem.with_lambda1(0.2 * lmax);
        let sol = solver::fit(&problem, &tight(), None).unwrap();
        let base_obj = objective(&problem, &sol.beta_tilde, 0.0);
        let base_kkt = kkt_residuals(&problem, &sol).into_iter().fold(0.0, f64::max);
        let j = sol.active[0];
        for sign in [1.0, -1.0] {
            let mut moved = sol.clone();
            moved.beta_tilde[j][0] += sign * 1e-2;
            assert!(objective(&problem, &moved.beta_tilde, 0.0) > base_obj);
            let kkt = kkt_residuals(&problem, &moved).into_iter().fold(0.0, f64::max);
            assert!(kkt > base_kkt);
        }
    }
}

#[test]
fn inactive_blocks_are_stable_under_warm_starts() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    for _ in 0..10 {
        let problem = random_problem(&mut rng, 40, &[3, 3, 3, 3, 3], Family::Gaussian, 0.0);
        let lmax = lambda1_max(&problem).unwrap();
        let problem = problem.with_lambda1(0.5 * lmax);
        let config = tight();
        let sol = solver::fit(&problem, &config, None).unwrap();
        let (grads, _) = loss_gradient(&problem, &sol.beta_tilde, 0.0);
        let strict: Vec<usize> = (0..problem.num_blocks())
            .filter(|&j| {
                sol.beta_tilde[j].iter().all(|&v| v == 0.0)
                    && grads[j].dot(&grads[j]).sqrt() < problem.lambda1 - config.kkt_tol
            })
            .collect();
        for _ in 0..5 {
            let start = problem
                .block_dims()
                .iter()
                .map(|&k| Array1::from_iter((0..k).map(|_| rng.random_range(-2.0..2.0))))
                .collect();
            let again = solver::fit(&problem, &config, Some(&warm(start, 0.0))).unwrap();
            assert!(again.converged);
            for &j in &strict {
                assert!(again.beta_tilde[j].iter().all(|&v| v == 0.0), "block {j} reappeared");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn scaling_response_and_lambda_scales_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let problem = random_problem(&mut rng, 30, &[3, 4], Family::Gaussian, 0.0);
        let lmax = lambda1_max(&problem).unwrap();
        let lambda1 = 0.2 * lmax;
        let base = solver::fit(&problem.clone().with_lambda1(lambda1), &tight(), None).unwrap();
        let c = 3.7;
        let y = problem.y().mapv(|v| c * v);
        let scaled = GroupLassoProblem::new(y, problem.blocks().to_vec(), Family::Gaussian)
            .unwrap()
            .with_lambda1(c * lambda1);
        let sol = solver::fit(&scaled, &tight(), None).unwrap();
        for (a, b) in base.beta_tilde.iter().zip(&sol.beta_tilde) {
            let diff = (&a.mapv(|v| c * v) - b).mapv(f64::abs).sum();
            assert!(diff <= 1e-6 * (1.0 + b.mapv(f64::abs).sum()));
        }
    }
}

#[test]
fn unpenalized_fit_solves_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let problem = random_problem(&mut rng, 40, &[3, 2, 4], Family::Gaussian, 0.0).with_lambda1(0.0);
    let sol = solver::fit(&problem, &tight(), None).unwrap();
    let b = ndarray::concatenate(
        ndarray::Axis(1),
        &problem.blocks().iter().map(|b| b.view()).collect::<Vec<_>>(),
    )
    .unwrap();
    let coef = sparse_additive::linalg::solve_dense(b.t().dot(&b).view(), b.t().dot(&problem.y()).view()).unwrap();
    let r = &problem.y() - &b.dot(&coef);
    let ls = r.dot(&r) / 40.0;
    assert!((sol.objective() - ls).abs() <= 1e-8 * ls);
}

#[test]
fn matches_proximal_gradient_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for lambda3 in [0.0, 0.1] {
        let problem = random_problem(&mut rng, 20, &[4, 4], Family::Gaussian, lambda3);
        let lmax = lambda1_max(&problem).unwrap();
        let lambda1 = 0.3 * lmax;
        let problem = problem.with_lambda1(lambda1);
        let sol = solver::fit(&problem, &tight(), None).unwrap();
        let y = problem.y().to_owned();
        let quad: Option<Vec<Array2<f64>>> = (lambda3 > 0.0).then(|| {
            // recover Q_j from the objective's quadratic form
            problem
                .block_dims()
                .iter()
                .enumerate()
                .map(|(j, &k)| quadratic_block(&problem, j, k))
                .collect()
        });
        let (_, reference) = fista_reference(&y, problem.blocks(), quad.as_deref(), lambda1, lambda3, 200_000);
        let ours = gaussian_objective(&y, problem.blocks(), quad.as_deref(), lambda1, lambda3, &sol.beta_tilde);
        assert!((ours - sol.objective()).abs() <= 1e-10 * ours);
        assert!((ours - reference).abs() <= 1e-5 * reference, "{ours} vs {reference}");
    }
}

/// `Q_j` by polarisation of the penalty term `objective(e_a + e_b) − …`
/// with λ₁ = 0 and the loss part cancelled.
fn quadratic_block(problem: &GroupLassoProblem, j: usize, k: usize) -> Array2<f64> {
    let p = problem.clone().with_lambda1(0.0);
    let lambda3 = p.lambda3();
    let zeros = p.zeros();
    let y = p.y().to_owned();
    let value = |v: &Array1<f64>| {
        let mut beta = zeros.clone();
        beta[j] = v.clone();
        let loss = gaussian_objective(&y, p.blocks(), None, 0.0, 0.0, &beta);
        (objective(&p, &beta, 0.0) - loss) / lambda3
    };
    let mut q = Array2::zeros((k, k));
    for a in 0..k {
        for b in 0..k {
            let mut ea = Array1::zeros(k);
            ea[a] = 1.0;
            let mut eb = Array1::zeros(k);
            eb[b] = 1.0;
            q[[a, b]] = 0.25 * (value(&(&ea + &eb)) - value(&(&ea - &eb)));
        }
    }
    q
}
