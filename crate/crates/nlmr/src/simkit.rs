//! Scenario definitions, data generation, and the Monte Carlo driver.
//!
//! Data generation is fully deterministic given `(scenario, base_seed,
//! replicate)`: every variable draws from its own counter-based stream
//! ([`crate::rng`]), so results do not depend on worker count or scheduling.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Family};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_control_function, fit_control_function_binary, fit_two_stage_prediction, ModelSpec,
};
use crate::rng::{streams, StreamRng};
use crate::spmr::{fit_spmr, spmr_test, SpmrOptions};
use crate::transform::Transform;

/// Shape of the true causal curve `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CausalForm {
    /// `f(x) = x`
    Linear,
    /// `f(x) = (x/3)^2`
    Quad3,
    /// `f(x) = sin(x)`
    Sin,
    /// `f(x) = exp(x/3)`
    Exp3,
    /// `f(x) = 0`
    Null,
}

impl CausalForm {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CausalForm::Linear => x,
            CausalForm::Quad3 => (x / 3.0) * (x / 3.0),
            CausalForm::Sin => x.sin(),
            CausalForm::Exp3 => (x / 3.0).exp(),
            CausalForm::Null => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CausalForm::Linear => "linear",
            CausalForm::Quad3 => "quad3",
            CausalForm::Sin => "sin",
            CausalForm::Exp3 => "exp3",
            CausalForm::Null => "null",
        }
    }

    /// True coefficient on the matching exposure transform.
    pub fn theta_true(&self) -> f64 {
        match self {
            CausalForm::Null => 0.0,
            _ => 1.0,
        }
    }

    /// The correctly specified exposure transform for a parametric fit.
    pub fn fit_transform(&self) -> Transform {
        match self {
            CausalForm::Linear | CausalForm::Null => Transform::identity(),
            CausalForm::Quad3 => Transform::quad3(),
            CausalForm::Sin => Transform::sin(),
            CausalForm::Exp3 => Transform::exp3(),
        }
    }
}

/// Invalid-instrument structure of the data-generating process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pleiotropy {
    /// Valid instrument.
    None,
    /// Direct effect of `Z` on `Y` (independent of the confounder).
    Uncorrelated,
    /// `Z` shifts the confounder itself.
    Correlated,
    /// Both effects at once.
    Both,
}

impl Pleiotropy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pleiotropy::None => "none",
            Pleiotropy::Uncorrelated => "uncorrelated",
            Pleiotropy::Correlated => "correlated",
            Pleiotropy::Both => "both",
        }
    }
}

/// A complete data-generating process.
///
/// `X = exposure_intercept + beta_Z * Z + C + delta1`, where `delta1`
/// contains the confounder; the outcome adds `f(X)`, the covariate, a direct
/// instrument effect under (un)correlated pleiotropy, and `h(delta1)` plus
/// independent noise (gaussian) or alone on the logit scale (binomial).
#[derive(Clone, Debug)]
pub struct Scenario {
    pub causal: CausalForm,
    pub n: usize,
    /// Proportion of exposure variance explained by the instrument.
    pub pve: f64,
    pub exposure_intercept: f64,
    pub pleiotropy: Pleiotropy,
    /// Transform of the exposure-side error entering the outcome.
    pub h_form: Transform,
    pub family: Family,
    /// Instrument-to-confounder coefficient under correlated pleiotropy.
    pub beta_zu: f64,
    /// Direct instrument-to-outcome coefficient under uncorrelated
    /// pleiotropy.
    pub beta_zy: f64,
}

impl Scenario {
    pub fn new(causal: CausalForm, n: usize, pve: f64) -> Self {
        Scenario {
            causal,
            n,
            pve,
            exposure_intercept: 1.0,
            pleiotropy: Pleiotropy::None,
            h_form: Transform::identity(),
            family: Family::Gaussian,
            beta_zu: 1.0,
            beta_zy: 1.0,
        }
    }

    pub fn with_pleiotropy(mut self, p: Pleiotropy) -> Self {
        self.pleiotropy = p;
        self
    }

    pub fn with_h(mut self, h: Transform) -> Self {
        self.h_form = h;
        self
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn with_exposure_intercept(mut self, c: f64) -> Self {
        self.exposure_intercept = c;
        self
    }

    /// The correctly specified parametric model for this scenario: matching
    /// exposure transform, linear covariate, matching residual transform,
    /// and the instrument in stage 2 exactly when the process has a direct
    /// instrument effect.
    pub fn recommended_spec(&self) -> ModelSpec {
        let include_iv = matches!(self.pleiotropy, Pleiotropy::Uncorrelated | Pleiotropy::Both);
        let mut spec = ModelSpec::gaussian(vec![self.causal.fit_transform()])
            .with_family(self.family)
            .with_h(self.h_form.clone());
        if include_iv {
            spec = spec.with_pleiotropy_adjustment();
        }
        spec
    }
}

/// Instrument strength for a target proportion of variance explained:
/// the non-instrument part of the exposure always has variance 3
/// (covariate + confounder + noise), so `beta = sqrt(3 pve / (1 - pve))`.
pub fn pve_to_beta(pve: f64) -> Result<f64> {
    if !(pve.is_finite() && pve > 0.0 && pve < 1.0) {
        return Err(Error::InvalidPve(pve));
    }
    Ok((3.0 * pve / (1.0 - pve)).sqrt())
}

/// Generate one replicate of a scenario.
pub fn gen_dataset(scenario: &Scenario, base_seed: u64, replicate: u64) -> Result<DataSet> {
    let n = scenario.n;
    if n < 3 {
        return Err(Error::Invalid(format!("scenario needs n >= 3, got {n}")));
    }
    let beta_total = pve_to_beta(scenario.pve)?;
    let correlated = matches!(
        scenario.pleiotropy,
        Pleiotropy::Correlated | Pleiotropy::Both
    );
    let direct = matches!(
        scenario.pleiotropy,
        Pleiotropy::Uncorrelated | Pleiotropy::Both
    );
    let beta_z = if correlated {
        beta_total - scenario.beta_zu
    } else {
        beta_total
    };

    let mut rz = StreamRng::new(base_seed, replicate, streams::INSTRUMENT);
    let mut rc = StreamRng::new(base_seed, replicate, streams::COVARIATE);
    let mut ru = StreamRng::new(base_seed, replicate, streams::CONFOUNDER);
    let mut rx = StreamRng::new(base_seed, replicate, streams::EXPOSURE_NOISE);
    let mut re = StreamRng::new(base_seed, replicate, streams::OUTCOME_NOISE);
    let mut rb = StreamRng::new(base_seed, replicate, streams::OUTCOME_BERNOULLI);

    let mut z = DMatrix::zeros(n, 1);
    let mut c = DMatrix::zeros(n, 1);
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let zi = rz.standard_normal();
        let ci = rc.standard_normal();
        let ui = ru.standard_normal();
        let ei_x = rx.standard_normal();
        let delta1 = if correlated {
            scenario.beta_zu * zi + ui + ei_x
        } else {
            ui + ei_x
        };
        let xi = scenario.exposure_intercept + beta_z * zi + ci + delta1;
        let h_val = scenario.h_form.eval(delta1);
        if !h_val.is_finite() {
            return Err(Error::NonFinite("h(delta1) in the data generator".into()));
        }
        let direct_term = if direct { scenario.beta_zy * zi } else { 0.0 };
        let eta = 1.0 + scenario.causal.eval(xi) + direct_term + ci + h_val;
        z[(i, 0)] = zi;
        c[(i, 0)] = ci;
        x[i] = xi;
        y[i] = match scenario.family {
            Family::Gaussian => eta + re.standard_normal(),
            Family::Binomial => {
                let p = crate::linmod::logistic(eta);
                if rb.bernoulli(p) {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    DataSet::new(z, c, x, y, scenario.family)
}

/// Estimator to evaluate in a Monte Carlo run.
#[derive(Clone, Debug)]
pub enum McMethod {
    TwoStage(ModelSpec),
    /// Dispatches to the gaussian or binary control function by family.
    ControlFunction(ModelSpec),
    Spmr(SpmrOptions),
}

/// Aggregate results over successful replicates. Scalar summaries
/// (estimate, SE, coverage) are present for the parametric methods and
/// absent for the semiparametric one, whose target is a curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimSummary {
    pub n_success: usize,
    pub n_failed: usize,
    /// Message of the first failed replicate, if any.
    pub first_failure: Option<String>,
    pub mean_estimate: Option<f64>,
    /// Monte Carlo standard deviation of the estimates.
    pub mc_sd: Option<f64>,
    /// Mean of the model-based standard errors.
    pub mean_model_se: Option<f64>,
    /// Fraction of replicates whose 95% interval covers the truth.
    pub coverage95: Option<f64>,
    /// Fraction of replicates rejecting the no-effect null at 5%.
    pub rejection_rate: f64,
    /// Excluded from serialized output so reruns stay byte-identical.
    #[serde(skip, default)]
    pub wall_time_s: f64,
}

struct RepStats {
    estimate: Option<f64>,
    se: Option<f64>,
    covered: Option<bool>,
    reject: bool,
}

fn run_one(
    scenario: &Scenario,
    method: &McMethod,
    base_seed: u64,
    rep: u64,
) -> std::result::Result<RepStats, String> {
    let data = gen_dataset(scenario, base_seed, rep).map_err(|e| e.to_string())?;
    let truth = scenario.causal.theta_true();
    let parametric = |fit: crate::estimators::FitResult| -> std::result::Result<RepStats, String> {
        let estimate = fit.theta()[0];
        let se = fit.se()[fit.theta_index[0]];
        let test = fit.f_test().map_err(|e| e.to_string())?;
        Ok(RepStats {
            estimate: Some(estimate),
            se: Some(se),
            covered: Some((estimate - truth).abs() <= 1.96 * se),
            reject: test.p_value < 0.05,
        })
    };
    match method {
        McMethod::TwoStage(spec) => {
            parametric(fit_two_stage_prediction(&data, spec).map_err(|e| e.to_string())?)
        }
        McMethod::ControlFunction(spec) => {
            let fit = match data.family {
                Family::Gaussian => fit_control_function(&data, spec),
                Family::Binomial => fit_control_function_binary(&data, spec),
            }
            .map_err(|e| e.to_string())?;
            parametric(fit)
        }
        McMethod::Spmr(opts) => {
            let fit = fit_spmr(&data, opts).map_err(|e| e.to_string())?;
            let test = spmr_test(&fit, None).map_err(|e| e.to_string())?;
            Ok(RepStats {
                estimate: None,
                se: None,
                covered: None,
                reject: test.p_value < 0.05,
            })
        }
    }
}

/// Fraction of replicates allowed to fail before the whole run errors out.
const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Run `replicates` Monte Carlo replicates, in parallel, and aggregate.
///
/// `workers` pins the rayon pool size for this run; `None` uses the global
/// default. Results are identical for any worker count.
pub fn run_mc(
    scenario: &Scenario,
    method: &McMethod,
    replicates: usize,
    base_seed: u64,
    workers: Option<usize>,
) -> Result<SimSummary> {
    if replicates == 0 {
        return Err(Error::Invalid("replicates must be at least 1".into()));
    }
    if matches!(method, McMethod::TwoStage(_)) && scenario.family != Family::Gaussian {
        return Err(Error::MethodMismatch(
            "two-stage prediction requires a gaussian outcome".into(),
        ));
    }
    let start = Instant::now();
    let body = |rep: usize| run_one(scenario, method, base_seed, rep as u64);
    let results: Vec<std::result::Result<RepStats, String>> = match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
            pool.install(|| (0..replicates).into_par_iter().map(body).collect())
        }
        None => (0..replicates).into_par_iter().map(body).collect(),
    };

    // Aggregate sequentially in replicate order.
    let mut first_failure = None;
    let mut n_failed = 0usize;
    let mut estimates = Vec::new();
    let mut ses = Vec::new();
    let mut covered = Vec::new();
    let mut rejected = 0usize;
    let mut n_success = 0usize;
    for r in results {
        match r {
            Ok(stats) => {
                n_success += 1;
                if let Some(e) = stats.estimate {
                    estimates.push(e);
                }
                if let Some(s) = stats.se {
                    ses.push(s);
                }
                if let Some(c) = stats.covered {
                    covered.push(c);
                }
                if stats.reject {
                    rejected += 1;
                }
            }
            Err(msg) => {
                n_failed += 1;
                if first_failure.is_none() {
                    first_failure = Some(msg);
                }
            }
        }
    }
    if (n_failed as f64) > MAX_FAILURE_FRACTION * replicates as f64 {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            total: replicates,
            first: first_failure.unwrap_or_default(),
        });
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_estimate = (!estimates.is_empty()).then(|| mean(&estimates));
    let mc_sd = (estimates.len() >= 2).then(|| {
        let m = mean(&estimates);
        (estimates.iter().map(|e| (e - m) * (e - m)).sum::<f64>()
            / (estimates.len() - 1) as f64)
            .sqrt()
    });
    let mean_model_se = (!ses.is_empty()).then(|| mean(&ses));
    let coverage95 = (!covered.is_empty())
        .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64);
    let rejection_rate = if n_success > 0 {
        rejected as f64 / n_success as f64
    } else {
        0.0
    };

    Ok(SimSummary {
        n_success,
        n_failed,
        first_failure,
        mean_estimate,
        mc_sd,
        mean_model_se,
        coverage95,
        rejection_rate,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pve_to_beta_known_values() {
        // 3 * 0.25 / 0.75 = 1
        assert_relative_eq!(pve_to_beta(0.25).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            pve_to_beta(0.10).unwrap(),
            (1.0f64 / 3.0).sqrt(),
            epsilon = 1e-15
        );
        for bad in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(matches!(pve_to_beta(bad), Err(Error::InvalidPve(_))));
        }
    }

    #[test]
    fn generated_data_is_reproducible_and_streams_differ() {
        let sc = Scenario::new(CausalForm::Sin, 500, 0.1);
        let a = gen_dataset(&sc, 7, 3).unwrap();
        let b = gen_dataset(&sc, 7, 3).unwrap();
        for i in 0..sc.n {
            assert_eq!(a.exposure[i].to_bits(), b.exposure[i].to_bits());
            assert_eq!(a.outcome[i].to_bits(), b.outcome[i].to_bits());
        }
        let c = gen_dataset(&sc, 7, 4).unwrap();
        assert_ne!(a.exposure[0].to_bits(), c.exposure[0].to_bits());
        let d = gen_dataset(&sc, 8, 3).unwrap();
        assert_ne!(a.exposure[0].to_bits(), d.exposure[0].to_bits());
    }

    #[test]
    fn realized_instrument_strength_matches_target_pve() {
        for &(pve, pleio) in &[
            (0.1, Pleiotropy::None),
            (0.25, Pleiotropy::Correlated),
            (0.05, Pleiotropy::Both),
        ] {
            let sc = Scenario::new(CausalForm::Linear, 200_000, pve).with_pleiotropy(pleio);
            let data = gen_dataset(&sc, 11, 0).unwrap();
            // Total instrument effect on X is beta_total in every arm, so
            // realized R^2 from a univariate regression of X on Z should hit
            // the target.
            let n = data.n() as f64;
            let zbar = data.instruments.column(0).sum() / n;
            let xbar = data.exposure.sum() / n;
            let mut szz = 0.0;
            let mut szx = 0.0;
            let mut sxx = 0.0;
            for i in 0..data.n() {
                let dz = data.instruments[(i, 0)] - zbar;
                let dx = data.exposure[i] - xbar;
                szz += dz * dz;
                szx += dz * dx;
                sxx += dx * dx;
            }
            let r2 = szx * szx / (szz * sxx);
            assert!(
                (r2 - pve).abs() < 0.01,
                "pleiotropy {pleio:?}: realized R2 {r2} vs target {pve}"
            );
        }
    }

    #[test]
    fn linear_effect_is_recovered_at_large_n() {
        let sc = Scenario::new(CausalForm::Linear, 50_000, 0.2);
        let data = gen_dataset(&sc, 5, 0).unwrap();
        let fit = fit_control_function(&data, &sc.recommended_spec()).unwrap();
        let theta = fit.theta()[0];
        assert!((theta - 1.0).abs() < 0.05, "theta {theta}");
    }

    #[test]
    fn binary_outcomes_are_zero_one_with_plausible_rate() {
        let sc = Scenario::new(CausalForm::Sin, 5000, 0.1).with_family(Family::Binomial);
        let data = gen_dataset(&sc, 21, 2).unwrap();
        assert!(data.outcome.iter().all(|&v| v == 0.0 || v == 1.0));
        let rate = data.outcome.sum() / data.n() as f64;
        assert!(rate > 0.2 && rate < 0.98, "rate {rate}");
    }

    #[test]
    fn summary_is_invariant_to_worker_count() {
        let sc = Scenario::new(CausalForm::Quad3, 400, 0.2);
        let method = McMethod::ControlFunction(sc.recommended_spec());
        let one = run_mc(&sc, &method, 20, 99, Some(1)).unwrap();
        let four = run_mc(&sc, &method, 20, 99, Some(4)).unwrap();
        assert_eq!(one.n_success, four.n_success);
        assert_eq!(
            one.mean_estimate.unwrap().to_bits(),
            four.mean_estimate.unwrap().to_bits()
        );
        assert_eq!(one.mc_sd.unwrap().to_bits(), four.mc_sd.unwrap().to_bits());
        assert_eq!(
            one.coverage95.unwrap().to_bits(),
            four.coverage95.unwrap().to_bits()
        );
        assert_eq!(one.rejection_rate.to_bits(), four.rejection_rate.to_bits());
    }

    #[test]
    fn consistent_failures_are_reported() {
        // Identity exposure transform + instrument in stage 2 + linear
        // covariate: the direct effect is inseparable, every replicate fails.
        let sc = Scenario::new(CausalForm::Linear, 300, 0.2)
            .with_pleiotropy(Pleiotropy::Uncorrelated);
        let method = McMethod::ControlFunction(sc.recommended_spec());
        match run_mc(&sc, &method, 10, 1, None) {
            Err(Error::TooManyFailures { failed, total, first }) => {
                assert_eq!(failed, 10);
                assert_eq!(total, 10);
                assert!(!first.is_empty());
            }
            other => panic!("expected TooManyFailures, got {other:?}"),
        }
    }

    #[test]
    fn two_stage_demands_gaussian_family() {
        let sc = Scenario::new(CausalForm::Sin, 500, 0.1).with_family(Family::Binomial);
        let spec = sc.recommended_spec();
        assert!(matches!(
            run_mc(&sc, &McMethod::TwoStage(spec), 5, 1, None),
            Err(Error::MethodMismatch(_))
        ));
    }

    #[test]
    fn spmr_method_reports_rejection_only() {
        let sc = Scenario::new(CausalForm::Sin, 300, 0.25);
        let summary = run_mc(
            &sc,
            &McMethod::Spmr(SpmrOptions::default()),
            8,
            13,
            None,
        )
        .unwrap();
        assert_eq!(summary.n_success, 8);
        assert!(summary.mean_estimate.is_none());
        assert!(summary.coverage95.is_none());
        assert!(summary.rejection_rate >= 0.0 && summary.rejection_rate <= 1.0);
    }
}
