//! Simulation scenarios, signal-to-noise and prediction-error estimates, and
//! replicated tuning studies.
//!
//! Every draw comes from a `ChaCha8Rng` seeded with the caller's seed:
//! stream 0 produces training data, stream 1 the Monte Carlo samples used by
//! [`snr_estimate`], [`bayes_risk`] and [`prediction_error`]. Replicate `r` of
//! a study uses [`replicate_seed`].

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdditiveModelSpec, FittedAdditiveModel, PreparedDesign};
use crate::solver::{sigmoid, Family};
use crate::tuning::{self, GridConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    Ex1,
    Ex2,
    Ex3,
    Ex3Hf,
    Ex4,
    Logistic,
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ex1" => Ok(Self::Ex1),
            "ex2" => Ok(Self::Ex2),
            "ex3" => Ok(Self::Ex3),
            "ex3hf" => Ok(Self::Ex3Hf),
            "ex4" => Ok(Self::Ex4),
            "logistic" => Ok(Self::Logistic),
            other => Err(Error::InvalidInput(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub id: ScenarioId,
    pub n: usize,
    pub p: usize,
    /// Mixing parameter of the Ex3/Ex4 covariates; 0 elsewhere.
    pub t: f64,
    /// Zero-based indices of the nonzero components.
    pub true_active: Vec<usize>,
    pub noise_sd: f64,
    pub nominal_snr: f64,
}

impl SimScenario {
    pub fn ex1() -> Self {
        Self {
            id: ScenarioId::Ex1,
            n: 150,
            p: 200,
            t: 0.0,
            true_active: vec![0, 1, 2, 3],
            noise_sd: 1.0,
            nominal_snr: 15.0,
        }
    }

    pub fn ex2() -> Self {
        Self {
            id: ScenarioId::Ex2,
            n: 100,
            p: 1000,
            t: 0.0,
            true_active: vec![0, 1, 2, 3],
            noise_sd: 1.0,
            nominal_snr: 6.7,
        }
    }

    pub fn ex3(t: f64) -> Self {
        let snr = if t == 0.0 { 9.0 } else { 7.9 };
        Self {
            id: ScenarioId::Ex3,
            n: 100,
            p: 80,
            t,
            true_active: vec![0, 1, 2, 3],
            noise_sd: 1.74f64.sqrt(),
            nominal_snr: snr,
        }
    }

    pub fn ex3_hf(t: f64) -> Self {
        let snr = if t == 0.0 { 9.0 } else { 8.1 };
        Self {
            id: ScenarioId::Ex3Hf,
            nominal_snr: snr,
            ..Self::ex3(t)
        }
    }

    pub fn ex4(t: f64) -> Self {
        let snr = if t == 0.0 { 9.0 } else { 11.25 };
        Self {
            id: ScenarioId::Ex4,
            n: 100,
            p: 60,
            t,
            true_active: (0..12).collect(),
            noise_sd: 0.72,
            nominal_snr: snr,
        }
    }

    /// Binary response through `η = 1.5 (2 + f)` with `f` and `X` as in Ex2.
    pub fn logistic(p: usize) -> Self {
        Self {
            id: ScenarioId::Logistic,
            n: 100,
            p,
            t: 0.0,
            true_active: vec![0, 1, 2, 3],
            noise_sd: 0.0,
            nominal_snr: f64::NAN,
        }
    }

    pub fn from_id(id: ScenarioId, t: f64) -> Self {
        match id {
            ScenarioId::Ex1 => Self::ex1(),
            ScenarioId::Ex2 => Self::ex2(),
            ScenarioId::Ex3 => Self::ex3(t),
            ScenarioId::Ex3Hf => Self::ex3_hf(t),
            ScenarioId::Ex4 => Self::ex4(t),
            ScenarioId::Logistic => Self::logistic(250),
        }
    }

    pub fn with_p(mut self, p: usize) -> Result<Self> {
        let needed = self.true_active.iter().max().map_or(0, |m| m + 1);
        if p < needed {
            return Err(Error::InvalidInput(format!(
                "scenario needs p >= {needed}, got {p}"
            )));
        }
        self.p = p;
        Ok(self)
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    /// Same covariates and noise with every component removed.
    pub fn without_signal(mut self) -> Self {
        self.true_active.clear();
        self.nominal_snr = 0.0;
        self
    }

    pub fn family(&self) -> Family {
        match self.id {
            ScenarioId::Logistic => Family::Binomial,
            _ => Family::Gaussian,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.true_active.iter().any(|&j| j >= self.p) {
            return Err(Error::InvalidInput(
                "scenario active set outside 0..p".into(),
            ));
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mixing parameter must be >= 0, got {}",
                self.t
            )));
        }
        Ok(())
    }

    /// Draws `rows` covariate vectors.
    pub fn sample_x<R: Rng>(&self, rng: &mut R, rows: usize) -> Array2<f64> {
        let p = self.p;
        let mut x = Array2::<f64>::zeros((rows, p));
        for mut row in x.rows_mut() {
            match self.id {
                ScenarioId::Ex1 => row
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-2.5..2.5)),
                ScenarioId::Ex2 | ScenarioId::Logistic => {
                    // stationary AR(1) with unit variance gives Σ_ij = 0.5^|i−j|
                    let mut prev: f64 = rng.sample(StandardNormal);
                    row[0] = prev;
                    for j in 1..p {
                        let z: f64 = rng.sample(StandardNormal);
                        prev = 0.5 * prev + 0.75f64.sqrt() * z;
                        row[j] = prev;
                    }
                }
                ScenarioId::Ex3 | ScenarioId::Ex3Hf | ScenarioId::Ex4 => {
                    for v in row.iter_mut() {
                        *v = rng.random::<f64>();
                    }
                    let u = rng.random::<f64>();
                    row.mapv_inplace(|w| (w + self.t * u) / (1.0 + self.t));
                }
            }
        }
        x
    }

    /// Scaled component contribution of predictor `j` at `x`.
    fn component(&self, j: usize, x: f64) -> f64 {
        match self.id {
            ScenarioId::Ex1 | ScenarioId::Ex2 => ex1_function(j, x),
            ScenarioId::Logistic => 1.5 * ex1_function(j, x),
            ScenarioId::Ex3 => [5.0, 3.0, 4.0, 6.0][j] * ex3_function(j, x),
            ScenarioId::Ex3Hf => {
                let arg = match j {
                    2 => 8.0 * x,
                    3 => 4.0 * x,
                    _ => x,
                };
                [5.0, 3.0, 4.0, 6.0][j] * ex3_function(j, arg)
            }
            ScenarioId::Ex4 => [1.0, 1.5, 2.0][j / 4] * ex3_function(j % 4, x),
        }
    }

    /// `n × p` matrix of true component values (zero for inactive predictors).
    pub fn component_values(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(x.raw_dim());
        for &j in &self.true_active {
            for (o, &v) in out.column_mut(j).iter_mut().zip(x.column(j)) {
                *o = self.component(j, v);
            }
        }
        out
    }

    /// Regression function for Gaussian scenarios, linear predictor `η` for
    /// the logistic one.
    pub fn true_signal(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let s = self.component_values(x).sum_axis(Axis(1));
        match self.id {
            ScenarioId::Logistic => s + 3.0,
            _ => s,
        }
    }
}

fn ex1_function(j: usize, x: f64) -> f64 {
    match j {
        0 => -(2.0 * x).sin(),
        1 => x * x - 25.0 / 12.0,
        2 => x,
        _ => (-x).exp() - 0.4 * 2.5f64.sinh(),
    }
}

fn ex3_function(j: usize, x: f64) -> f64 {
    let s = (2.0 * PI * x).sin();
    let c = (2.0 * PI * x).cos();
    match j {
        0 => x,
        1 => (2.0 * x - 1.0).powi(2),
        2 => s / (2.0 - s),
        _ => 0.1 * s + 0.2 * c + 0.3 * s * s + 0.4 * c.powi(3) + 0.5 * s.powi(3),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub true_component_values: Array2<f64>,
    pub seed: u64,
}

fn draw_rows<R: Rng>(
    scenario: &SimScenario,
    rng: &mut R,
    rows: usize,
) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let x = scenario.sample_x(rng, rows);
    let comps = scenario.component_values(x.view());
    let signal = scenario.true_signal(x.view());
    let y = match scenario.family() {
        Family::Gaussian => {
            signal.mapv(|f| f + scenario.noise_sd * rng.sample::<f64, _>(StandardNormal))
        }
        Family::Binomial => signal.mapv(|eta| (rng.random::<f64>() < sigmoid(eta)) as u8 as f64),
    };
    (x, y, comps)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One sample of `scenario.n` observations.
pub fn gen(scenario: &SimScenario, seed: u64) -> Result<SimDraw> {
    scenario.validate()?;
    let mut rng = rng_for(seed, 0);
    let (x, y, true_component_values) = draw_rows(scenario, &mut rng, scenario.n);
    Ok(SimDraw {
        x,
        y,
        true_component_values,
        seed,
    })
}

/// Training sample of `n` rows followed by an independent validation sample
/// of `⌊n/2⌋` rows, both from stream 0.
pub fn gen_with_validation(scenario: &SimScenario, seed: u64) -> Result<(SimDraw, SimDraw)> {
    scenario.validate()?;
    let mut rng = rng_for(seed, 0);
    let (x, y, c) = draw_rows(scenario, &mut rng, scenario.n);
    let (xv, yv, cv) = draw_rows(scenario, &mut rng, scenario.n / 2);
    Ok((
        SimDraw {
            x,
            y,
            true_component_values: c,
            seed,
        },
        SimDraw {
            x: xv,
            y: yv,
            true_component_values: cv,
            seed,
        },
    ))
}

fn variance(v: &Array1<f64>) -> f64 {
    let m = v.mean().unwrap_or(0.0);
    v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len().max(2) - 1) as f64
}

/// Monte Carlo `Var(f(X)) / Var(ε)`; NaN for the logistic scenario, which
/// has no additive noise.
pub fn snr_estimate(scenario: &SimScenario, n_mc: usize, seed: u64) -> Result<f64> {
    scenario.validate()?;
    if scenario.family() == Family::Binomial {
        return Ok(f64::NAN);
    }
    if scenario.true_active.is_empty() {
        return Ok(0.0);
    }
    let mut rng = rng_for(seed, 1);
    let x = scenario.sample_x(&mut rng, n_mc);
    Ok(variance(&scenario.true_signal(x.view())) / (scenario.noise_sd * scenario.noise_sd))
}

/// Monte Carlo `E[min(π(X), 1 − π(X))]` for the logistic scenario.
pub fn bayes_risk(scenario: &SimScenario, n_mc: usize, seed: u64) -> Result<f64> {
    scenario.validate()?;
    if scenario.family() != Family::Binomial {
        return Err(Error::InvalidInput(
            "Bayes risk is defined for the logistic scenario".into(),
        ));
    }
    let mut rng = rng_for(seed, 1);
    let x = scenario.sample_x(&mut rng, n_mc);
    let eta = scenario.true_signal(x.view());
    Ok(eta
        .iter()
        .map(|&e| {
            let p = sigmoid(e);
            p.min(1.0 - p)
        })
        .sum::<f64>()
        / n_mc as f64)
}

/// `E_X[(f̂(X) − f(X))²]` over `n_mc` fresh covariate draws, with `predict`
/// returning the fitted regression function (or linear predictor).
pub fn prediction_error<F>(
    predict: F,
    scenario: &SimScenario,
    n_mc: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(ArrayView2<f64>) -> Result<Array1<f64>>,
{
    scenario.validate()?;
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be positive".into()));
    }
    let mut rng = rng_for(seed, 1);
    let x = scenario.sample_x(&mut rng, n_mc);
    let truth = scenario.true_signal(x.view());
    let pred = predict(x.view())?;
    if pred.len() != n_mc {
        return Err(Error::DimensionMismatch(
            "prediction length differs from sample size".into(),
        ));
    }
    Ok(pred
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n_mc as f64)
}

/// [`prediction_error`] of a fitted model on the linear-predictor scale.
pub fn model_prediction_error(
    model: &FittedAdditiveModel,
    scenario: &SimScenario,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    prediction_error(|x| model.predict_linear(x), scenario, n_mc, seed)
}

/// `(|estimated ∩ truth|, |estimated \ truth|)`.
pub fn tp_fp(estimated: &[usize], truth: &[usize]) -> (usize, usize) {
    let tp = estimated.iter().filter(|j| truth.contains(j)).count();
    (tp, estimated.len() - tp)
}

/// Seed of replicate `r`: `seed ⊕ r·0x9E3779B97F4A7C15` (wrapping).
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub n_reps: usize,
    pub seed: u64,
    pub grid: GridConfig,
    /// Template for every fit; its λ values are ignored.
    pub spec: AdditiveModelSpec,
    /// `Some(γ_w)` adds an adaptive refit weighted by the ordinary estimate.
    pub adaptive: Option<f64>,
    pub n_mc: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_reps: 100,
            seed: 0,
            grid: GridConfig::default(),
            spec: AdditiveModelSpec::default(),
            adaptive: None,
            n_mc: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub lambda1: f64,
    pub lambda2: f64,
    pub pe: f64,
    pub tp: usize,
    pub fp: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub ordinary: FitOutcome,
    pub adaptive: Option<FitOutcome>,
}

impl ReplicateResult {
    pub fn pe_ratio(&self) -> Option<f64> {
        self.adaptive.as_ref().map(|a| a.pe / self.ordinary.pe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: SimScenario,
    pub replicates: Vec<ReplicateResult>,
    /// Replicates that raised an error, with the message.
    pub failures: Vec<(usize, String)>,
    /// Adaptive stages skipped because the ordinary fit selected nothing.
    pub adaptive_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    /// `None` with fewer than two values.
    pub sd: Option<f64>,
    pub count: usize,
}

fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    (mean, sd)
}

impl StudyReport {
    fn ordinary(&self, f: impl Fn(&FitOutcome) -> f64) -> Vec<f64> {
        self.replicates.iter().map(|r| f(&r.ordinary)).collect()
    }

    fn adaptive(&self, f: impl Fn(&FitOutcome) -> f64) -> Vec<f64> {
        self.replicates
            .iter()
            .filter_map(|r| r.adaptive.as_ref().map(&f))
            .collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        let mut push = |metric: &str, values: Vec<f64>| {
            let (mean, sd) = mean_sd(&values);
            rows.push(SummaryRow {
                metric: metric.into(),
                mean,
                sd,
                count: values.len(),
            });
        };
        push("pe", self.ordinary(|o| o.pe));
        push("tp", self.ordinary(|o| o.tp as f64));
        push("fp", self.ordinary(|o| o.fp as f64));
        push("converged", self.ordinary(|o| o.converged as u8 as f64));
        if self.replicates.iter().any(|r| r.adaptive.is_some()) {
            push("adaptive_pe", self.adaptive(|o| o.pe));
            push("adaptive_tp", self.adaptive(|o| o.tp as f64));
            push("adaptive_fp", self.adaptive(|o| o.fp as f64));
            push(
                "adaptive_converged",
                self.adaptive(|o| o.converged as u8 as f64),
            );
            push(
                "pe_ratio",
                self.replicates
                    .iter()
                    .filter_map(ReplicateResult::pe_ratio)
                    .collect(),
            );
        }
        rows
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.metric == metric)
            .map(|r| r.mean)
    }

    pub fn write_replicates_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let adaptive = self.replicates.iter().any(|r| r.adaptive.is_some());
        write!(w, "replicate,seed,lambda1,lambda2,pe,tp,fp,converged")?;
        if adaptive {
            write!(w, ",adaptive_lambda1,adaptive_lambda2,adaptive_pe,adaptive_tp,adaptive_fp,adaptive_converged,pe_ratio")?;
        }
        writeln!(w)?;
        for r in &self.replicates {
            let o = &r.ordinary;
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.replicate, r.seed, o.lambda1, o.lambda2, o.pe, o.tp, o.fp, o.converged
            )?;
            if adaptive {
                match &r.adaptive {
                    Some(a) => write!(
                        w,
                        ",{},{},{},{},{},{},{}",
                        a.lambda1,
                        a.lambda2,
                        a.pe,
                        a.tp,
                        a.fp,
                        a.converged,
                        a.pe / o.pe
                    )?,
                    None => write!(w, ",,,,,,,")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,mean,sd,count")?;
        for row in self.summary() {
            let sd = row.sd.map(|s| s.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", row.metric, row.mean, sd, row.count)?;
        }
        writeln!(w, "failures,{},,", self.failures.len())?;
        Ok(())
    }
}

fn outcome(
    model: &FittedAdditiveModel,
    scenario: &SimScenario,
    n_mc: usize,
    seed: u64,
) -> Result<FitOutcome> {
    let (tp, fp) = tp_fp(&model.active, &scenario.true_active);
    Ok(FitOutcome {
        lambda1: model.spec.lambda1,
        lambda2: model.spec.lambda2,
        pe: model_prediction_error(model, scenario, n_mc, seed)?,
        tp,
        fp,
        converged: model.converged,
    })
}

/// One replicate: fresh train/validation draw, validation-set tuning and,
/// optionally, an adaptive second stage tuned on the same split.
pub fn run_replicate(
    scenario: &SimScenario,
    config: &StudyConfig,
    replicate: usize,
) -> Result<(ReplicateResult, bool)> {
    let seed = replicate_seed(config.seed, replicate);
    let (train, valid) = gen_with_validation(scenario, seed)?;
    let spec = AdditiveModelSpec {
        family: scenario.family(),
        weights: None,
        ..config.spec.clone()
    };
    let design = PreparedDesign::new(train.x.view(), train.y.view(), spec.family, spec.knots)?;
    let holdout = (valid.x.view(), valid.y.view());

    let grid = tuning::make_grid_prepared(&design, &spec, &config.grid)?;
    let tuned = tuning::validate_select_prepared(&design, holdout, &grid, &spec)?;
    let ordinary = outcome(&tuned.model, scenario, config.n_mc, seed)?;

    let mut skipped = false;
    let adaptive = match config.adaptive {
        None => None,
        Some(gamma_w) => match tuning::adaptive_weights(&tuned.model, gamma_w) {
            Ok(weights) => {
                let aspec = AdditiveModelSpec {
                    weights: Some(weights),
                    ..spec.clone()
                };
                let agrid = tuning::make_grid_prepared(&design, &aspec, &config.grid)?;
                let atuned = tuning::validate_select_prepared(&design, holdout, &agrid, &aspec)?;
                Some(outcome(&atuned.model, scenario, config.n_mc, seed)?)
            }
            Err(Error::EmptyModel) => {
                skipped = true;
                None
            }
            Err(e) => return Err(e),
        },
    };
    Ok((
        ReplicateResult {
            replicate,
            seed,
            ordinary,
            adaptive,
        },
        skipped,
    ))
}

/// Replicated study; replicates run in parallel and are reported in order.
pub fn run_study(scenario: &SimScenario, config: &StudyConfig) -> Result<StudyReport> {
    scenario.validate()?;
    let results: Vec<_> = (0..config.n_reps)
        .into_par_iter()
        .map(|r| (r, run_replicate(scenario, config, r)))
        .collect();
    let mut report = StudyReport {
        scenario: scenario.clone(),
        replicates: Vec::new(),
        failures: Vec::new(),
        adaptive_skipped: 0,
    };
    for (r, res) in results {
        match res {
            Ok((rep, skipped)) => {
                report.adaptive_skipped += skipped as usize;
                report.replicates.push(rep);
            }
            Err(e) => report.failures.push((r, e.to_string())),
        }
    }
    Ok(report)
}
