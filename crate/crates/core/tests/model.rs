mod common;

use common::random_data;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_additive::model::{self, ComponentStatus, KnotPolicy, PenaltyWeights};
use sparse_additive::simulate::{self, SimScenario};
use sparse_additive::{AdditiveModelSpec, SolverConfig};

fn spec(lambda1: f64, lambda2: f64) -> AdditiveModelSpec {
    AdditiveModelSpec {
        solver: SolverConfig {
            kkt_tol: 1e-9,
            ..SolverConfig::default()
        },
        ..AdditiveModelSpec::new(lambda1, lambda2)
    }
}

#[test]
fn huge_smoothness_penalty_gives_least_squares_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 60;
    let x: Array2<f64> = Array2::from_shape_fn((n, 1), |_| rng.random_range(0.0..3.0));
    let y = Array1::from_iter((0..n).map(|i| {
        let v = x[[i, 0]];
        1.0 + 0.8 * v + (2.0 * v).sin() + 0.2 * rng.random_range(-1.0..1.0)
    }));
    // λ₁ tiny but positive: at λ₁ = 0 the curvature term carries no weight
    let model = model::fit(x.view(), y.view(), &spec(1e-4, 1e8)).unwrap();
    let xc = x.column(0);
    let (xm, ym) = (xc.mean().unwrap(), y.mean().unwrap());
    let slope = xc.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>()
        / xc.iter().map(|a| (a - xm) * (a - xm)).sum::<f64>();
    let pred = model.predict(x.view()).unwrap();
    let dev = pred
        .iter()
        .zip(xc)
        .map(|(p, &v)| (p - (ym + slope * (v - xm))).powi(2))
        .sum::<f64>()
        / n as f64;
    assert!(dev.sqrt() <= 1e-3, "distance {}", dev.sqrt());
}

#[test]
fn objective_matches_function_space_criterion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..12 {
        let p = rng.random_range(1..=5);
        let n = rng.random_range(20..=60);
        let (x, y) = random_data(&mut rng, n, p);
        for lambda2 in [0.0, 0.1, 1.0] {
            let mut s = spec(0.0, lambda2);
            s.knots = KnotPolicy::Interior(rng.random_range(0..=4));
            if trial % 3 == 1 {
                s.lambda3 = 0.01;
            }
            if trial % 3 == 2 {
                s.weights = Some(
                    (0..p)
                        .map(|_| {
                            Some(PenaltyWeights {
                                w1: rng.random_range(0.5..2.0),
                                w2: rng.random_range(0.0..2.0),
                            })
                        })
                        .collect(),
                );
            }
            let lmax = model::lambda1_max(x.view(), y.view(), &s).unwrap();
            s.lambda1 = 0.2 * lmax;
            let m = model::fit(x.view(), y.view(), &s).unwrap();
            let direct = m.penalized_objective(x.view(), y.view()).unwrap();
            assert!(
                (direct - m.objective).abs() <= 1e-8 * m.objective,
                "trial {trial} λ₂ {lambda2}: {direct} vs {}",
                m.objective
            );
        }
    }
}

#[test]
fn components_are_centred() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = random_data(&mut rng, 50, 4);
    let m = model::fit(x.view(), y.view(), &spec(0.01, 0.1)).unwrap();
    assert!(!m.active.is_empty());
    for &j in &m.active {
        let c = &m.components[j];
        let vals: Vec<f64> = x.column(j).iter().map(|&v| c.eval(v)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let norm = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-8 * norm);
        assert!((norm - c.empirical_norm).abs() <= 1e-10 * norm);
    }
}

#[test]
fn curvature_decreases_with_smoothness_penalty() {
    let draw = simulate::gen(&SimScenario::ex1(), 11).unwrap();
    let (x, y) = (draw.x.view(), draw.y.view());
    let levels = [0.0, 0.1, 1.0, 10.0];
    let lmax = levels
        .iter()
        .map(|&l2| model::lambda1_max(x, y, &spec(0.0, l2)).unwrap())
        .fold(f64::INFINITY, f64::min);
    let curv: Vec<f64> = levels
        .iter()
        .map(|&l2| {
            let m = model::fit(x, y, &spec(0.1 * lmax, l2)).unwrap();
            assert!(!m.active.is_empty());
            m.total_curvature()
        })
        .collect();
    for w in curv.windows(2) {
        assert!(w[1] <= w[0], "{curv:?}");
    }
    assert!(curv[2] < curv[0]);
}

#[test]
fn diagnostics_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y) = random_data(&mut rng, 40, 3);
    let s = spec(0.02, 0.3);
    let a = model::fit(x.view(), y.view(), &s).unwrap();
    let b = model::fit(x.view(), y.view(), &s).unwrap();
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(a.diagnostics(0.1)), bits(b.diagnostics(0.1)));
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn unit_lambda_diagnostic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 40;
    let x: Array2<f64> = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_iter((0..n).map(|i| 2.0 * x[[i, 0]] + x[[i, 1]].powi(2)));
    let m = model::fit(x.view(), y.view(), &spec(0.01, 0.5)).unwrap();
    for c in &m.components {
        let t = c.tau_n(1.0);
        assert!((t * t - (c.empirical_norm.powi(2) + c.curvature)).abs() <= 1e-12 * (1.0 + t * t));
    }
}

#[test]
fn excluded_and_dropped_predictors_stay_inactive() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut x, y) = random_data(&mut rng, 40, 4);
    x.column_mut(3).fill(1.5);
    let mut s = spec(0.0, 0.1);
    s.weights = Some(vec![None, Some(PenaltyWeights::default()), Some(PenaltyWeights::default()), None]);
    s.lambda1 = 1e-3;
    let m = model::fit(x.view(), y.view(), &s).unwrap();
    assert_eq!(m.components[0].status, ComponentStatus::Excluded);
    assert!(!m.active.contains(&0));
    assert!(!m.active.contains(&3));
    assert!(m.active.contains(&1));

    let m = model::fit(x.view(), y.view(), &spec(1e-3, 0.1)).unwrap();
    assert_eq!(m.components[3].status, ComponentStatus::Dropped);
    assert!(!m.warnings.is_empty());
    assert!(!m.active.contains(&3));
    // dropped predictor contributes nothing, whatever its value
    let mut shifted = x.clone();
    shifted.column_mut(3).fill(-7.0);
    assert_eq!(m.predict(x.view()).unwrap(), m.predict(shifted.view()).unwrap());
}

#[test]
fn out_of_range_inputs_are_clamped() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, y) = random_data(&mut rng, 40, 2);
    let m = model::fit(x.view(), y.view(), &spec(0.01, 0.1)).unwrap();
    let c = &m.components[0];
    let (lo, hi) = {
        let b = c.basis.as_ref().unwrap().knots();
        (b.lower(), b.upper())
    };
    assert_eq!(c.eval(lo - 5.0), c.eval(lo));
    assert_eq!(c.eval(hi + 5.0), c.eval(hi));
}
