//! Parametric two-stage estimators for nonlinear instrumental-variable
//! models.
//!
//! The outcome model is `Y = b0 + sum_j theta_j f_j(X) + sum_l gamma_l g_l(C)
//! + error`, where `X` is endogenous. Two estimators are provided:
//!
//! - **two-stage prediction**: regress each `f_j(X)` on `[1, Z, C]` and use
//!   the fitted values as stage-2 regressors;
//! - **control function**: regress `X` on `[1, Z, C]`, then add (a transform
//!   of) the first-stage residual to the stage-2 regression, absorbing the
//!   confounded part of the error.
//!
//! Invalid instruments with a direct outcome effect are handled by adding
//! `Z` to stage 2 (`include_iv_stage2`), and binary outcomes by a logistic
//! stage 2. All covariances account for the estimated first stage.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::{DataSet, Family};
use crate::error::{Error, Result};
use crate::inference::{self, CovMethod};
use crate::linmod::{self, DesignMatrix};
use crate::transform::Transform;

/// Threshold on the normalized singular-value ratio used for the numeric
/// linear-independence checks on realized designs.
pub const INDEPENDENCE_TOL: f64 = 1e-8;

/// Outcome-model specification shared by all parametric fits.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    /// Exposure transforms `f_1..f_K1` (at least one).
    pub f_terms: Vec<Transform>,
    /// Covariate transforms, applied to every covariate column.
    pub g_terms: Vec<Transform>,
    /// Transform of the first-stage residual entering stage 2.
    pub h_form: Transform,
    /// Add the instrument columns to stage 2 (pleiotropy adjustment).
    pub include_iv_stage2: bool,
    pub family: Family,
}

impl ModelSpec {
    /// Gaussian model with the given exposure transforms, linear covariates,
    /// identity residual term, and no pleiotropy adjustment.
    pub fn gaussian(f_terms: Vec<Transform>) -> Self {
        ModelSpec {
            f_terms,
            g_terms: vec![Transform::identity()],
            h_form: Transform::identity(),
            include_iv_stage2: false,
            family: Family::Gaussian,
        }
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn with_h(mut self, h: Transform) -> Self {
        self.h_form = h;
        self
    }

    pub fn with_pleiotropy_adjustment(mut self) -> Self {
        self.include_iv_stage2 = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.f_terms.is_empty() {
            return Err(Error::Invalid("at least one exposure transform is required".into()));
        }
        Ok(())
    }
}

/// Identifiability of the two-stage prediction model: the number of exposure
/// transforms plus the number of *linear* covariate columns must not exceed
/// the number of stage-1 predictors (instruments plus covariates).
///
/// Returns the verdict and a human-readable count of both sides.
pub fn check_identifiability_2sp(
    spec: &ModelSpec,
    n_instruments: usize,
    n_covariates: usize,
) -> (bool, String) {
    let k1 = spec.f_terms.len();
    let linear_g = spec.g_terms.iter().filter(|t| t.is_linear()).count() * n_covariates;
    let lhs = k1 + linear_g;
    let rhs = n_instruments + n_covariates;
    let detail = format!(
        "{k1} exposure transforms + {linear_g} linear covariate terms vs \
         {n_instruments} instruments + {n_covariates} covariates"
    );
    (lhs <= rhs, detail)
}

/// First-stage regression of the exposure on `[1, Z, C]`.
#[derive(Clone, Debug)]
pub struct Stage1Fit {
    pub beta: DVector<f64>,
    /// Residuals `X - V beta`; mean zero by construction.
    pub delta1: DVector<f64>,
    /// Residual variance with denominator `n - p1`.
    pub var_delta1: f64,
    pub(crate) v: DMatrix<f64>,
    pub(crate) gram_inverse: DMatrix<f64>,
}

/// Which estimator produced a [`FitResult`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    TwoStagePrediction,
    ControlFunction,
    ControlFunctionPleiotropy,
    ControlFunctionH,
    ControlFunctionBinary,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::TwoStagePrediction => "two_stage_prediction",
            Method::ControlFunction => "control_function",
            Method::ControlFunctionPleiotropy => "control_function_pleiotropy",
            Method::ControlFunctionH => "control_function_h",
            Method::ControlFunctionBinary => "control_function_binary",
        }
    }
}

/// A fitted parametric model with its sandwich covariance.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub method: Method,
    pub family: Family,
    pub n: usize,
    pub stage1: Stage1Fit,
    pub w: DesignMatrix,
    pub b_hat: DVector<f64>,
    /// Indices of the exposure-transform coefficients within `b_hat`.
    pub theta_index: Vec<usize>,
    /// Coefficient on the residual term (control-function fits only).
    pub rho_hat: Option<f64>,
    /// Stage-2 residual variance (gaussian fits only).
    pub var_e: Option<f64>,
    pub cov_b: DMatrix<f64>,
    pub cov_method: CovMethod,
    /// `(W'W)^-1`, or `(W'QW)^-1` for the logistic fit.
    pub(crate) gram_inverse: DMatrix<f64>,
    /// `y - W b` (gaussian) or `y - mu` (binomial).
    pub(crate) residuals: DVector<f64>,
    /// Residuals against the structural exposure transforms (two-stage
    /// prediction only): `y - [1, f(X), g(C)] b`.
    pub(crate) resid_structural: Option<DVector<f64>>,
    pub(crate) h_col: Option<usize>,
    pub(crate) h_deriv: Option<DVector<f64>>,
    pub(crate) mu: Option<DVector<f64>>,
    pub(crate) q_diag: Option<DVector<f64>>,
}

impl FitResult {
    /// Exposure-transform coefficients.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.theta_index.len(),
            self.theta_index.iter().map(|&j| self.b_hat[j]),
        )
    }

    /// Standard errors for all coefficients.
    pub fn se(&self) -> DVector<f64> {
        DVector::from_fn(self.b_hat.len(), |j, _| self.cov_b[(j, j)].max(0.0).sqrt())
    }

    /// Joint F test that all exposure-transform coefficients are zero.
    pub fn f_test(&self) -> Result<inference::TestResult> {
        inference::f_test(self)
    }

    /// Fitted outcome probabilities (binary fits only).
    pub fn fitted_probabilities(&self) -> Option<&DVector<f64>> {
        self.mu.as_ref()
    }
}

/// Stage-1 regressors `[1 | Z | C]`.
fn stage1_matrix(data: &DataSet) -> DMatrix<f64> {
    let n = data.n();
    let p = 1 + data.n_instruments() + data.n_covariates();
    let mut v = DMatrix::zeros(n, p);
    v.column_mut(0).fill(1.0);
    v.columns_mut(1, data.n_instruments()).copy_from(&data.instruments);
    if data.n_covariates() > 0 {
        v.columns_mut(1 + data.n_instruments(), data.n_covariates())
            .copy_from(&data.covariates);
    }
    v
}

/// Fit the first stage and keep the pieces the covariances need.
pub fn fit_stage1(data: &DataSet) -> Result<Stage1Fit> {
    let v = stage1_matrix(data);
    let (n, p1) = v.shape();
    if n <= p1 {
        return Err(Error::Invalid(format!(
            "need more rows ({n}) than stage-1 predictors ({p1})"
        )));
    }
    let vtv = v.tr_mul(&v);
    let chol = Cholesky::new(vtv).ok_or_else(|| {
        Error::RankDeficient("stage-1 design [1, Z, C] is collinear".into())
    })?;
    let beta = chol.solve(&v.tr_mul(&data.exposure));
    let delta1 = &data.exposure - &v * &beta;
    let var_delta1 = delta1.norm_squared() / (n - p1) as f64;
    Ok(Stage1Fit {
        beta,
        delta1,
        var_delta1,
        gram_inverse: chol.inverse(),
        v,
    })
}

/// Normalized smallest/largest singular-value ratio; columns are scaled to
/// unit norm first so the check is insensitive to units.
fn normalized_sv_ratio(m: &DMatrix<f64>) -> f64 {
    let mut scaled = m.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return 0.0;
        }
        col /= norm;
    }
    linmod::sv_ratio(&scaled)
}

/// Stage-2 design layout shared by the fits.
struct StageTwo {
    w: DesignMatrix,
    theta_index: Vec<usize>,
    h_col: Option<usize>,
    /// `[1 | f(X) | g(C)]`, kept when the caller needs structural residuals.
    structural: Option<DMatrix<f64>>,
}

/// Assemble `[1 | f-block | Z-block? | g-block | h(residual)?]`.
///
/// `f_values` supplies the f-block (fitted or structural); when `structural`
/// is requested the f-block is re-evaluated from the raw exposure.
fn build_stage2(
    data: &DataSet,
    spec: &ModelSpec,
    f_values: &DMatrix<f64>,
    h_residual: Option<&DVector<f64>>,
    want_structural: bool,
) -> Result<StageTwo> {
    let n = data.n();
    let k1 = spec.f_terms.len();
    let n_iv = if spec.include_iv_stage2 { data.n_instruments() } else { 0 };
    let n_g = data.n_covariates() * spec.g_terms.len();
    let p = 1 + k1 + n_iv + n_g + usize::from(h_residual.is_some());

    let mut w = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(p);
    w.column_mut(0).fill(1.0);
    labels.push("intercept".to_string());

    let mut col = 1;
    let theta_index: Vec<usize> = (col..col + k1).collect();
    for (j, t) in spec.f_terms.iter().enumerate() {
        w.set_column(col, &f_values.column(j).into_owned());
        let prefix = if h_residual.is_some() { "f" } else { "fhat" };
        labels.push(format!("{prefix}:{}({})", t.name(), data.exposure_name));
        col += 1;
    }
    if spec.include_iv_stage2 {
        for j in 0..data.n_instruments() {
            w.set_column(col, &data.instruments.column(j).into_owned());
            labels.push(format!("iv:{}", data.instrument_names[j]));
            col += 1;
        }
    }
    for l in 0..data.n_covariates() {
        for t in &spec.g_terms {
            let g = DVector::from_fn(n, |i, _| t.eval(data.covariates[(i, l)]));
            w.set_column(col, &g);
            labels.push(format!("g:{}({})", t.name(), data.covariate_names[l]));
            col += 1;
        }
    }
    let h_col = if let Some(h) = h_residual {
        w.set_column(col, h);
        labels.push(format!("h:{}(delta1)", spec.h_form.name()));
        Some(col)
    } else {
        None
    };

    let structural = if want_structural {
        let mut sm = DMatrix::zeros(n, 1 + k1 + n_g);
        sm.column_mut(0).fill(1.0);
        for (j, t) in spec.f_terms.iter().enumerate() {
            let fx = DVector::from_fn(n, |i, _| t.eval(data.exposure[i]));
            sm.set_column(1 + j, &fx);
            debug_assert!(f_values.column(j).len() == n);
        }
        let mut sc = 1 + k1;
        for l in 0..data.n_covariates() {
            for t in &spec.g_terms {
                let g = DVector::from_fn(n, |i, _| t.eval(data.covariates[(i, l)]));
                sm.set_column(sc, &g);
                sc += 1;
            }
        }
        Some(sm)
    } else {
        None
    };

    Ok(StageTwo {
        w: DesignMatrix::new(w, labels)?,
        theta_index,
        h_col,
        structural,
    })
}

/// Exposure transforms evaluated on the observed exposure, with a collinearity
/// screen against the constant.
fn f_matrix(data: &DataSet, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let n = data.n();
    let k1 = spec.f_terms.len();
    let mut f = DMatrix::zeros(n, k1);
    for (j, t) in spec.f_terms.iter().enumerate() {
        let col = DVector::from_fn(n, |i, _| t.eval(data.exposure[i]));
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("f transform `{}`", t.name())));
        }
        f.set_column(j, &col);
    }
    let mut with_const = DMatrix::zeros(n, k1 + 1);
    with_const.column_mut(0).fill(1.0);
    with_const.columns_mut(1, k1).copy_from(&f);
    if normalized_sv_ratio(&with_const) <= INDEPENDENCE_TOL {
        return Err(Error::RankDeficient(
            "exposure transforms are linearly dependent (with the constant) on these data".into(),
        ));
    }
    Ok(f)
}

/// Two-stage prediction: replace each `f_j(X)` by its stage-1 fitted values
/// and run OLS on `[1, fhat, g(C)]`.
pub fn fit_two_stage_prediction(data: &DataSet, spec: &ModelSpec) -> Result<FitResult> {
    spec.validate()?;
    if spec.family != Family::Gaussian || data.family != Family::Gaussian {
        return Err(Error::MethodMismatch(
            "two-stage prediction requires a gaussian outcome".into(),
        ));
    }
    let (identified, detail) =
        check_identifiability_2sp(spec, data.n_instruments(), data.n_covariates());
    if !identified {
        return Err(Error::NotIdentifiable(detail));
    }

    let stage1 = fit_stage1(data)?;
    let f = f_matrix(data, spec)?;
    // Project every f_j(X) onto span[1, Z, C] reusing the stage-1 factorization.
    let vtv = stage1.v.tr_mul(&stage1.v);
    let chol = Cholesky::new(vtv)
        .ok_or_else(|| Error::RankDeficient("stage-1 design [1, Z, C] is collinear".into()))?;
    let pi = chol.solve(&stage1.v.tr_mul(&f));
    let f_hat = &stage1.v * &pi;

    let st2 = build_stage2(data, spec, &f_hat, None, true)?;
    let ls = linmod::ols(&st2.w, &data.outcome)?;
    let structural = st2.structural.expect("requested above");
    let resid_structural = &data.outcome - &structural * &ls.coef;

    let mut fit = FitResult {
        method: Method::TwoStagePrediction,
        family: Family::Gaussian,
        n: data.n(),
        stage1,
        w: st2.w,
        b_hat: ls.coef,
        theta_index: st2.theta_index,
        rho_hat: None,
        var_e: Some(ls.sigma2),
        cov_b: DMatrix::zeros(0, 0),
        cov_method: CovMethod::TwoStage,
        gram_inverse: ls.gram_inverse,
        residuals: ls.residuals,
        resid_structural: Some(resid_structural),
        h_col: None,
        h_deriv: None,
        mu: None,
        q_diag: None,
    };
    let cov = inference::cov_two_stage(&fit)?;
    fit.cov_b = cov.cov;
    fit.cov_method = cov.method;
    Ok(fit)
}

/// Requirement for adding the instrument to stage 2: either the exposure
/// transforms together with `X` itself, or the covariate transforms together
/// with `C`, must be linearly independent on the realized data. Otherwise the
/// direct instrument effect cannot be separated from the causal path.
fn check_pleiotropy_identifiable(data: &DataSet, spec: &ModelSpec, f: &DMatrix<f64>) -> Result<()> {
    let n = data.n();
    let k1 = f.ncols();
    let mut fx = DMatrix::zeros(n, k1 + 2);
    fx.column_mut(0).fill(1.0);
    fx.columns_mut(1, k1).copy_from(f);
    fx.set_column(k1 + 1, &data.exposure);
    let cond_f = normalized_sv_ratio(&fx) > INDEPENDENCE_TOL;

    let cond_g = if data.n_covariates() == 0 {
        false
    } else {
        let n_g = data.n_covariates() * spec.g_terms.len();
        let mut gc = DMatrix::zeros(n, 1 + n_g + data.n_covariates());
        gc.column_mut(0).fill(1.0);
        let mut col = 1;
        for l in 0..data.n_covariates() {
            for t in &spec.g_terms {
                let g = DVector::from_fn(n, |i, _| t.eval(data.covariates[(i, l)]));
                gc.set_column(col, &g);
                col += 1;
            }
        }
        gc.columns_mut(col, data.n_covariates()).copy_from(&data.covariates);
        normalized_sv_ratio(&gc) > INDEPENDENCE_TOL
    };

    if cond_f || cond_g {
        Ok(())
    } else {
        Err(Error::RankDeficient(
            "pleiotropy adjustment is unidentified: exposure transforms are linear in X \
             and covariate transforms are linear in C"
                .into(),
        ))
    }
}

/// Control function with a gaussian outcome: OLS of `Y` on
/// `[1, f(X), (Z,) g(C), h(delta1_hat)]`.
pub fn fit_control_function(data: &DataSet, spec: &ModelSpec) -> Result<FitResult> {
    spec.validate()?;
    if spec.family != Family::Gaussian || data.family != Family::Gaussian {
        return Err(Error::MethodMismatch(
            "control function requires a gaussian outcome; use the binary variant otherwise".into(),
        ));
    }
    let stage1 = fit_stage1(data)?;
    let f = f_matrix(data, spec)?;
    if spec.include_iv_stage2 {
        check_pleiotropy_identifiable(data, spec, &f)?;
    }

    let h_vals = DVector::from_fn(data.n(), |i, _| spec.h_form.eval(stage1.delta1[i]));
    if h_vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("h(delta1)".into()));
    }
    let h_deriv = {
        let mut d = DVector::zeros(data.n());
        for i in 0..data.n() {
            d[i] = spec.h_form.deriv(stage1.delta1[i])?;
        }
        d
    };

    let st2 = build_stage2(data, spec, &f, Some(&h_vals), false)?;
    let ls = linmod::ols(&st2.w, &data.outcome)?;
    let h_col = st2.h_col.expect("control function always has a residual column");

    let h_is_identity = spec.h_form.is_identity();
    let method = if !h_is_identity {
        Method::ControlFunctionH
    } else if spec.include_iv_stage2 {
        Method::ControlFunctionPleiotropy
    } else {
        Method::ControlFunction
    };

    let mut fit = FitResult {
        method,
        family: Family::Gaussian,
        n: data.n(),
        stage1,
        w: st2.w,
        rho_hat: Some(ls.coef[h_col]),
        b_hat: ls.coef,
        theta_index: st2.theta_index,
        var_e: Some(ls.sigma2),
        cov_b: DMatrix::zeros(0, 0),
        cov_method: CovMethod::ControlFunction,
        gram_inverse: ls.gram_inverse,
        residuals: ls.residuals,
        resid_structural: None,
        h_col: Some(h_col),
        h_deriv: Some(h_deriv),
        mu: None,
        q_diag: None,
    };
    let cov = if h_is_identity {
        inference::cov_control_fn(&fit)?
    } else {
        inference::cov_mestimation(&fit)?
    };
    fit.cov_b = cov.cov;
    fit.cov_method = cov.method;
    Ok(fit)
}

/// Control function with a binary outcome: logistic stage 2 on
/// `[1, f(X), (Z,) g(C), h(delta1_hat)]`. Assumes the outcome-side error is
/// a deterministic transform of the exposure-side error.
pub fn fit_control_function_binary(data: &DataSet, spec: &ModelSpec) -> Result<FitResult> {
    spec.validate()?;
    if spec.family != Family::Binomial || data.family != Family::Binomial {
        return Err(Error::MethodMismatch(
            "binary control function requires a binomial outcome".into(),
        ));
    }
    let stage1 = fit_stage1(data)?;
    let f = f_matrix(data, spec)?;
    if spec.include_iv_stage2 {
        check_pleiotropy_identifiable(data, spec, &f)?;
    }

    let h_vals = DVector::from_fn(data.n(), |i, _| spec.h_form.eval(stage1.delta1[i]));
    if h_vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("h(delta1)".into()));
    }
    let h_deriv = {
        let mut d = DVector::zeros(data.n());
        for i in 0..data.n() {
            d[i] = spec.h_form.deriv(stage1.delta1[i])?;
        }
        d
    };

    let st2 = build_stage2(data, spec, &f, Some(&h_vals), false)?;
    if st2.w.sv_ratio() <= linmod::RANK_TOL {
        return Err(Error::RankDeficient("stage-2 design is collinear".into()));
    }
    let p = st2.w.ncols();
    let irls = linmod::penalized_irls(&st2.w, &data.outcome, &DMatrix::zeros(p, p), 0.0)?;
    let h_col = st2.h_col.expect("residual column present");

    let wqw = linmod::weighted_gram(st2.w.values(), &irls.q_diag);
    let gram_inverse = Cholesky::new(wqw)
        .ok_or_else(|| Error::SingularSystem("W'QW is not positive definite".into()))?
        .inverse();

    let mut fit = FitResult {
        method: Method::ControlFunctionBinary,
        family: Family::Binomial,
        n: data.n(),
        stage1,
        w: st2.w,
        rho_hat: Some(irls.coef[h_col]),
        b_hat: irls.coef,
        theta_index: st2.theta_index,
        var_e: None,
        cov_b: DMatrix::zeros(0, 0),
        cov_method: CovMethod::MEstimation,
        gram_inverse,
        residuals: &data.outcome - &irls.mu,
        resid_structural: None,
        h_col: Some(h_col),
        h_deriv: Some(h_deriv),
        mu: Some(irls.mu),
        q_diag: Some(irls.q_diag),
    };
    let cov = inference::cov_mestimation(&fit)?;
    fit.cov_b = cov.cov;
    fit.cov_method = cov.method;
    Ok(fit)
}
