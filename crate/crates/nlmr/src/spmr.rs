//! Semiparametric exposure-outcome curve estimation.
//!
//! Stage 2 regresses the outcome on `[1 | s(X) | covariates | residual
//! term]`, where `s(X)` is a centered penalized B-spline block and the
//! residual term absorbs confounding exactly as in the parametric control
//! function. A single smoothing parameter, shared by every smooth block, is
//! chosen by generalized cross-validation (GCV) over a log-spaced grid
//! refined by a golden-section search. The reported covariance is the
//! penalized sandwich from [`crate::inference::bayes_cov`], which accounts
//! for both the penalty and the estimated first stage.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::{BasisSpec, KnotRule, SmoothBasis};
use crate::data::{DataSet, Family};
use crate::error::{Error, Result};
use crate::estimators::{fit_stage1, Stage1Fit};
use crate::inference::{self, CovMethod, MeatSpec, TestResult};
use crate::linmod::{self, DesignMatrix};

/// How the smoothing parameter is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    /// GCV grid search (`log10 lambda` in [-8, 8], step 0.25) plus a
    /// golden-section refinement to a relative precision of about 1e-3.
    Select,
}

/// Options for [`fit_spmr`].
#[derive(Clone, Debug)]
pub struct SpmrOptions {
    /// Number of B-spline basis functions per smooth block (before
    /// centering).
    pub num_basis: usize,
    pub degree: usize,
    pub knot_rule: KnotRule,
    /// Order of the difference penalty on adjacent spline coefficients.
    pub penalty_order: usize,
    pub lambda: LambdaChoice,
    /// Expand each covariate into its own smooth block instead of a linear
    /// column.
    pub smooth_covariates: bool,
    /// Expand the first-stage residual into a smooth block (gaussian
    /// outcomes only); models nonlinear confounding without choosing a
    /// parametric residual transform.
    pub smooth_residual: bool,
}

impl Default for SpmrOptions {
    fn default() -> Self {
        SpmrOptions {
            num_basis: 10,
            degree: 3,
            knot_rule: KnotRule::Quantile,
            penalty_order: 2,
            lambda: LambdaChoice::Select,
            smooth_covariates: false,
            smooth_residual: false,
        }
    }
}

impl SpmrOptions {
    pub fn validate(&self) -> Result<()> {
        if self.num_basis < self.degree + 2 {
            return Err(Error::Invalid(format!(
                "num_basis must be at least degree + 2, got {} with degree {}",
                self.num_basis, self.degree
            )));
        }
        if let LambdaChoice::Fixed(v) = self.lambda {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!(
                    "fixed lambda must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A fitted semiparametric model.
#[derive(Clone, Debug)]
pub struct SpmrFit {
    pub family: Family,
    pub n: usize,
    pub stage1: Stage1Fit,
    pub w: DesignMatrix,
    pub beta: DVector<f64>,
    /// Penalized sandwich covariance of `beta`.
    pub cov_b: DMatrix<f64>,
    pub cov_method: CovMethod,
    pub lambda: f64,
    /// GCV score at the selected lambda (`None` for a fixed lambda).
    pub gcv: Option<f64>,
    /// The GCV minimum sat on the edge of the search grid.
    pub lambda_at_boundary: bool,
    /// Effective degrees of freedom of the exposure smooth.
    pub edf_x: f64,
    /// Effective degrees of freedom of the whole stage-2 fit.
    pub edf_total: f64,
    /// Coefficient on the residual term; for a smooth residual block this is
    /// the best linear approximation `<delta1, s_h(delta1)> / <delta1,
    /// delta1>` used by the covariance.
    pub rho_hat: f64,
    /// Stage-2 residual variance (gaussian only), denominator `n - edf`.
    pub var_e: Option<f64>,
    pub smooth_x: SmoothBasis,
    pub(crate) x_range: Range<usize>,
    pub(crate) x_train_sorted: Vec<f64>,
    pub(crate) mu: Option<DVector<f64>>,
    /// Block-diagonal penalty (unscaled by lambda) actually used by the fit.
    pub s_full: DMatrix<f64>,
}

impl SpmrFit {
    /// Coefficients of the exposure smooth block.
    pub fn x_coefficients(&self) -> DVector<f64> {
        self.beta
            .rows(self.x_range.start, self.x_range.len())
            .into_owned()
    }

    /// Covariance of the exposure smooth block.
    pub fn cov_x(&self) -> DMatrix<f64> {
        let (s, l) = (self.x_range.start, self.x_range.len());
        self.cov_b.view((s, s), (l, l)).into_owned()
    }

    /// Fitted outcome probabilities (binomial fits only).
    pub fn fitted_probabilities(&self) -> Option<&DVector<f64>> {
        self.mu.as_ref()
    }
}

/// Minimum ratio of observations to basis functions.
const MIN_OBS_PER_BASIS: usize = 10;
/// GCV grid in `log10 lambda`.
const LOG10_LO: f64 = -8.0;
const LOG10_HI: f64 = 8.0;
const LOG10_STEP: f64 = 0.25;
/// Golden-section width target: relative lambda precision ~1e-3.
const LOG10_TOL: f64 = 4.343e-4;

fn basis_spec(x: &DVector<f64>, options: &SpmrOptions) -> Result<BasisSpec> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spec = BasisSpec {
        num_basis: options.num_basis,
        degree: options.degree,
        knot_rule: options.knot_rule,
        boundary: (lo, hi),
    };
    spec.validate()?;
    Ok(spec)
}

struct Assembled {
    w: DesignMatrix,
    s_full: DMatrix<f64>,
    x_range: Range<usize>,
    resid_range: Range<usize>,
    smooth_x: SmoothBasis,
}

fn assemble(data: &DataSet, options: &SpmrOptions, stage1: &Stage1Fit) -> Result<Assembled> {
    let n = data.n();
    let dim = options.num_basis - 1;
    let smooth_x = SmoothBasis::build(
        &data.exposure,
        &basis_spec(&data.exposure, options)?,
        options.penalty_order,
    )?;

    let n_cov = data.n_covariates();
    let cov_cols = if options.smooth_covariates { n_cov * dim } else { n_cov };
    let resid_cols = if options.smooth_residual { dim } else { 1 };
    let p = 1 + dim + cov_cols + resid_cols;

    let mut w = DMatrix::zeros(n, p);
    let mut s_full = DMatrix::zeros(p, p);
    let mut labels = Vec::with_capacity(p);
    w.column_mut(0).fill(1.0);
    labels.push("intercept".to_string());

    let mut col = 1;
    let x_range = col..col + dim;
    w.columns_mut(col, dim).copy_from(&smooth_x.design);
    s_full
        .view_mut((col, col), (dim, dim))
        .copy_from(&smooth_x.penalty);
    for m in 1..=dim {
        labels.push(format!("s({}):{m}", data.exposure_name));
    }
    col += dim;

    for l in 0..n_cov {
        let c = data.covariates.column(l).into_owned();
        if options.smooth_covariates {
            let sb = SmoothBasis::build(&c, &basis_spec(&c, options)?, options.penalty_order)?;
            w.columns_mut(col, dim).copy_from(&sb.design);
            s_full.view_mut((col, col), (dim, dim)).copy_from(&sb.penalty);
            for m in 1..=dim {
                labels.push(format!("s({}):{m}", data.covariate_names[l]));
            }
            col += dim;
        } else {
            w.set_column(col, &c);
            labels.push(format!("c:{}", data.covariate_names[l]));
            col += 1;
        }
    }

    let resid_range = col..col + resid_cols;
    if options.smooth_residual {
        let sb = SmoothBasis::build(
            &stage1.delta1,
            &basis_spec(&stage1.delta1, options)?,
            options.penalty_order,
        )?;
        w.columns_mut(col, dim).copy_from(&sb.design);
        s_full.view_mut((col, col), (dim, dim)).copy_from(&sb.penalty);
        for m in 1..=dim {
            labels.push(format!("s(delta1):{m}"));
        }
    } else {
        w.set_column(col, &stage1.delta1);
        labels.push("delta1".to_string());
    }

    Ok(Assembled {
        w: DesignMatrix::new(w, labels)?,
        s_full,
        x_range,
        resid_range,
        smooth_x,
    })
}

/// Fit the semiparametric model. The exposure enters through a centered
/// penalized spline (so the curve is identified as mean zero over the
/// training sample), covariates linearly or as smooths, and the first-stage
/// residual linearly or (gaussian only) as a smooth.
pub fn fit_spmr(data: &DataSet, options: &SpmrOptions) -> Result<SpmrFit> {
    options.validate()?;
    if data.family == Family::Binomial && options.smooth_residual {
        return Err(Error::ConfigInvalid {
            field: "model.smooth_residual".into(),
            reason: "a smooth residual block is not supported with a binomial outcome; \
                     use the linear residual term"
                .into(),
        });
    }
    let k = options.num_basis;
    if data.n() < MIN_OBS_PER_BASIS * k {
        return Err(Error::Invalid(format!(
            "semiparametric fit needs at least {} observations for {k} basis functions, got {}",
            MIN_OBS_PER_BASIS * k,
            data.n()
        )));
    }
    let distinct = data.distinct_exposures();
    if distinct < k {
        return Err(Error::TooFewDistinctExposures {
            found: distinct,
            need: k,
        });
    }

    let stage1 = fit_stage1(data)?;
    let parts = assemble(data, options, &stage1)?;
    let y = &data.outcome;
    let n = data.n();

    let mut x_train_sorted: Vec<f64> = data.exposure.iter().cloned().collect();
    x_train_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    match data.family {
        Family::Gaussian => {
            let x = parts.w.values();
            let gram = x.tr_mul(x);
            let wty = x.tr_mul(y);
            let yty = y.norm_squared();
            let (lambda, gcv, at_boundary) = match options.lambda {
                LambdaChoice::Fixed(v) => (v, None, false),
                LambdaChoice::Select => {
                    let sel =
                        select_lambda_gaussian(&gram, &wty, yty, &parts.s_full, n as f64)?;
                    (sel.0, Some(sel.1), sel.2)
                }
            };
            let ls = linmod::penalized_ls(&parts.w, y, &parts.s_full, lambda)?;
            let edf_x = block_edf(&ls.gram_inverse, &gram, &parts.x_range);

            let rho_hat = if options.smooth_residual {
                let block = parts
                    .w
                    .values()
                    .columns(parts.resid_range.start, parts.resid_range.len())
                    * ls.coef.rows(parts.resid_range.start, parts.resid_range.len());
                stage1.delta1.dot(&block) / stage1.delta1.norm_squared()
            } else {
                ls.coef[parts.resid_range.start]
            };

            let meat = MeatSpec::GaussianControl {
                var_e: ls.sigma2,
                rho: rho_hat,
                var_delta1: stage1.var_delta1,
                v: &stage1.v,
                v_gram_inverse: &stage1.gram_inverse,
            };
            let cov = inference::bayes_cov(&parts.w, &meat, &parts.s_full, lambda)?;

            Ok(SpmrFit {
                family: Family::Gaussian,
                n,
                stage1,
                w: parts.w,
                beta: ls.coef,
                cov_b: cov.cov,
                cov_method: cov.method,
                lambda,
                gcv,
                lambda_at_boundary: at_boundary,
                edf_x,
                edf_total: ls.edf,
                rho_hat,
                var_e: Some(ls.sigma2),
                smooth_x: parts.smooth_x,
                x_range: parts.x_range,
                x_train_sorted,
                mu: None,
                s_full: parts.s_full,
            })
        }
        Family::Binomial => {
            let (lambda, gcv, at_boundary, warm) = match options.lambda {
                LambdaChoice::Fixed(v) => (v, None, false, None),
                LambdaChoice::Select => {
                    let sel = select_lambda_binomial(&parts.w, y, &parts.s_full, n as f64)?;
                    (sel.0, Some(sel.1), sel.2, sel.3)
                }
            };
            let irls =
                linmod::penalized_irls_from(&parts.w, y, &parts.s_full, lambda, warm.as_ref())?;
            let wqw = linmod::weighted_gram(parts.w.values(), &irls.q_diag);
            let pen_inverse = Cholesky::new(&wqw + &parts.s_full * lambda)
                .ok_or_else(|| {
                    Error::SingularSystem("penalized W'QW is not positive definite".into())
                })?
                .inverse();
            let edf_x = block_edf(&pen_inverse, &wqw, &parts.x_range);
            let edf_total = (&pen_inverse * &wqw).trace();

            let resid_col = parts.resid_range.start;
            let rho_hat = irls.coef[resid_col];
            let resid = y - &irls.mu;
            let ones = DVector::from_element(n, 1.0);
            let meat_m = inference::mestimation_meat(
                parts.w.values(),
                &stage1.v,
                &stage1.gram_inverse,
                &stage1.delta1,
                &resid,
                &ones,
                rho_hat,
                &[resid_col],
                Some(&irls.q_diag),
            );
            let meat = MeatSpec::Binomial {
                q_diag: &irls.q_diag,
                meat: &meat_m,
            };
            let cov = inference::bayes_cov(&parts.w, &meat, &parts.s_full, lambda)?;

            Ok(SpmrFit {
                family: Family::Binomial,
                n,
                stage1,
                w: parts.w,
                beta: irls.coef,
                cov_b: cov.cov,
                cov_method: cov.method,
                lambda,
                gcv,
                lambda_at_boundary: at_boundary,
                edf_x,
                edf_total,
                rho_hat,
                var_e: None,
                smooth_x: parts.smooth_x,
                x_range: parts.x_range,
                x_train_sorted,
                mu: Some(irls.mu),
                s_full: parts.s_full,
            })
        }
    }
}

/// Sum of the diagonal of `M^-1 G` over one coefficient block.
fn block_edf(pen_inverse: &DMatrix<f64>, gram: &DMatrix<f64>, range: &Range<usize>) -> f64 {
    let a = pen_inverse * gram;
    range.clone().map(|i| a[(i, i)]).sum()
}

/// GCV score `n * RSS / (n - trA)^2` for the gaussian fit, from cached
/// cross-products only (no per-lambda pass over the data).
fn gcv_gaussian(
    gram: &DMatrix<f64>,
    wty: &DVector<f64>,
    yty: f64,
    s_full: &DMatrix<f64>,
    n: f64,
    lambda: f64,
) -> f64 {
    let chol = match Cholesky::new(gram + s_full * lambda) {
        Some(c) => c,
        None => return f64::INFINITY,
    };
    let beta = chol.solve(wty);
    let tra = (chol.inverse() * gram).trace();
    let denom = n - tra;
    if denom <= 1e-8 {
        return f64::INFINITY;
    }
    let rss = (yty - 2.0 * beta.dot(wty) + beta.dot(&(gram * &beta))).max(0.0);
    n * rss / (denom * denom)
}

fn select_lambda_gaussian(
    gram: &DMatrix<f64>,
    wty: &DVector<f64>,
    yty: f64,
    s_full: &DMatrix<f64>,
    n: f64,
) -> Result<(f64, f64, bool)> {
    let score = |log10: f64| gcv_gaussian(gram, wty, yty, s_full, n, 10f64.powf(log10));
    select_on_grid(score)
}

fn select_lambda_binomial(
    w: &DesignMatrix,
    y: &DVector<f64>,
    s_full: &DMatrix<f64>,
    n: f64,
) -> Result<(f64, f64, bool, Option<DVector<f64>>)> {
    // Warm-start each candidate from the previous accepted iterate; a failed
    // candidate (non-convergence, separation) scores infinity and is skipped.
    let mut warm: Option<DVector<f64>> = None;
    let mut best_coef: Option<DVector<f64>> = None;
    let mut best_gcv = f64::INFINITY;
    let score_with =
        |warm: Option<&DVector<f64>>, log10: f64| -> (f64, Option<DVector<f64>>) {
            let lambda = 10f64.powf(log10);
            match linmod::penalized_irls_from(w, y, s_full, lambda, warm) {
                Ok(fit) => {
                    let dev = binomial_deviance(y, &fit.mu);
                    let wqw = linmod::weighted_gram(w.values(), &fit.q_diag);
                    let chol = match Cholesky::new(&wqw + s_full * lambda) {
                        Some(c) => c,
                        None => return (f64::INFINITY, None),
                    };
                    let tra = (chol.inverse() * wqw).trace();
                    let denom = n - tra;
                    if denom <= 1e-8 {
                        return (f64::INFINITY, None);
                    }
                    (n * dev / (denom * denom), Some(fit.coef))
                }
                Err(Error::NotConverged { last_coef, .. }) => {
                    // Keep the iterate as a warm start but skip the lambda.
                    (f64::INFINITY, Some(DVector::from_vec(last_coef)))
                }
                Err(_) => (f64::INFINITY, None),
            }
        };
    let mut eval = |log10: f64| -> f64 {
        let (gcv, coef) = score_with(warm.as_ref(), log10);
        if let Some(c) = coef {
            warm = Some(c);
        }
        if gcv < best_gcv {
            best_gcv = gcv;
            best_coef = warm.clone();
        }
        gcv
    };
    let (lambda, gcv, boundary) = select_on_grid(&mut eval)?;
    Ok((lambda, gcv, boundary, best_coef))
}

/// Grid scan over `log10 lambda` followed by golden-section refinement.
/// Ties prefer the smaller lambda.
fn select_on_grid(mut score: impl FnMut(f64) -> f64) -> Result<(f64, f64, bool)> {
    let steps = ((LOG10_HI - LOG10_LO) / LOG10_STEP).round() as usize;
    let mut best_i = 0usize;
    let mut best_val = f64::INFINITY;
    let mut grid = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let g = LOG10_LO + LOG10_STEP * i as f64;
        let v = score(g);
        grid.push((g, v));
        if v < best_val {
            best_val = v;
            best_i = i;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::SingularSystem(
            "smoothing selection failed at every candidate lambda".into(),
        ));
    }
    let at_boundary = best_i == 0 || best_i == steps;
    let lo = (grid[best_i].0 - LOG10_STEP).max(LOG10_LO);
    let hi = (grid[best_i].0 + LOG10_STEP).min(LOG10_HI);
    let (g_best, v_best) = golden_min(&mut score, lo, hi);
    // Prefer the grid point on effective ties (and the smaller lambda).
    let (g, v) = if v_best < best_val || (v_best == best_val && g_best < grid[best_i].0) {
        (g_best, v_best)
    } else {
        (grid[best_i].0, best_val)
    };
    Ok((10f64.powf(g), v, at_boundary))
}

/// Golden-section minimizer on `[lo, hi]`; assumes a (near) unimodal score.
fn golden_min(score: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = score(x1);
    let mut f2 = score(x2);
    let mut guard = 0;
    while hi - lo > LOG10_TOL && guard < 200 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = score(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = score(x2);
        }
        guard += 1;
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Unpenalized Bernoulli deviance.
fn binomial_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        let m = mu[i].clamp(1e-12, 1.0 - 1e-12);
        dev -= 2.0 * (y[i] * m.ln() + (1.0 - y[i]) * (1.0 - m).ln());
    }
    dev
}

/// Pointwise estimate of the causal curve with 95% bands.
#[derive(Clone, Debug)]
pub struct CurveEstimate {
    pub x: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    /// Evaluation points that fell outside the training range and were
    /// clamped to the boundary.
    pub n_clamped: usize,
}

/// Evaluate the fitted exposure curve at `xs`. The curve is normalized to
/// mean zero over the training sample; points outside the training range are
/// clamped to the nearest boundary and counted in `n_clamped`.
pub fn causal_curve(fit: &SpmrFit, xs: &[f64]) -> Result<CurveEstimate> {
    if xs.is_empty() {
        return Err(Error::Invalid("curve evaluation needs at least one point".into()));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("curve evaluation points".into()));
    }
    let (design, n_clamped) = fit.smooth_x.eval_at(xs);
    let beta_x = fit.x_coefficients();
    let cov_x = fit.cov_x();
    let f_hat = &design * &beta_x;
    let mut se = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        let row = design.row(i);
        let var = (row * &cov_x * row.transpose())[(0, 0)].max(0.0);
        se.push(var.sqrt());
    }
    let lo95 = f_hat
        .iter()
        .zip(&se)
        .map(|(f, s)| f - 1.96 * s)
        .collect();
    let hi95 = f_hat
        .iter()
        .zip(&se)
        .map(|(f, s)| f + 1.96 * s)
        .collect();
    Ok(CurveEstimate {
        x: xs.to_vec(),
        f_hat: f_hat.iter().cloned().collect(),
        se,
        lo95,
        hi95,
        n_clamped,
    })
}

/// Maximum evaluation points used by [`spmr_test`].
const TEST_GRID_MAX: usize = 500;

/// Significance test of the exposure curve: is `f` identically zero?
///
/// The curve is evaluated on (a quantile subsample of) the training
/// exposures and the quadratic-form statistic from
/// [`crate::inference::smooth_test`] is computed through the equivalent
/// low-rank eigenproblem, with test rank `r` defaulting to the smooth's
/// effective degrees of freedom.
pub fn spmr_test(fit: &SpmrFit, r: Option<f64>) -> Result<TestResult> {
    let dim = fit.x_range.len() as f64;
    let r = match r {
        Some(v) => {
            if !(v.is_finite() && v >= 1.0 && v <= dim) {
                return Err(Error::Invalid(format!(
                    "test rank must lie in [1, {dim}], got {v}"
                )));
            }
            v
        }
        None => fit.edf_x.clamp(1.0, dim),
    };

    let grid = test_grid(&fit.x_train_sorted);
    let (design, _) = fit.smooth_x.eval_at(&grid);
    let theta = fit.x_coefficients();
    let cov_x = fit.cov_x();

    // Eigenpairs of X V X' via the small problem on B = V^{1/2} X'X V^{1/2}:
    // nonzero eigenvalues coincide and scores transform accordingly.
    let g = design.tr_mul(&design);
    let v_half = matrix_sqrt(&cov_x);
    let b = &v_half * &g * &v_half;
    let eig = nalgebra::SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let g_theta = &v_half * (&g * &theta);
    let mut eigs = Vec::with_capacity(order.len());
    let mut scores = Vec::with_capacity(order.len());
    for &i in &order {
        let mu = eig.eigenvalues[i];
        eigs.push(mu);
        if mu > 0.0 {
            scores.push(eig.eigenvectors.column(i).dot(&g_theta) / mu.sqrt());
        } else {
            scores.push(0.0);
        }
    }
    inference::smooth_test_from_parts(&scores, &eigs, r)
}

/// Quantile-index subsample of the sorted training exposures.
fn test_grid(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    let m = n.min(TEST_GRID_MAX);
    (0..m)
        .map(|i| {
            let pos = (i as f64 * (n - 1) as f64 / (m - 1) as f64).round() as usize;
            sorted[pos]
        })
        .collect()
}

/// Symmetric positive-semidefinite square root (negative eigenvalues from
/// roundoff are clamped to zero).
fn matrix_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}
