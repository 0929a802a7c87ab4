//! Dense regression core: OLS, penalized least squares, and penalized
//! logistic IRLS.
//!
//! Solves go through a Cholesky factorization of the (penalized) Gram matrix;
//! rank is screened with a singular-value ratio test. Effective degrees of
//! freedom are `tr((X'X + lambda*S)^-1 X'X)`, and residual variance uses the
//! `n - edf` denominator throughout.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which a design is declared
/// rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// IRLS stops once the relative coefficient change drops below this.
pub const IRLS_TOL: f64 = 1e-8;

/// IRLS iteration cap.
pub const IRLS_MAX_ITER: usize = 50;

/// Step halvings allowed per IRLS iteration when the penalized deviance
/// would otherwise increase.
pub const IRLS_MAX_HALVINGS: usize = 10;

/// |linear predictor| beyond which the logistic fit is declared
/// quasi-separated.
pub const ETA_BOUND: f64 = 30.0;

/// A design matrix with unique column labels.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if p < 1 || n < p {
            return Err(Error::Invalid(format!(
                "design must have n >= p >= 1, got {n} x {p}"
            )));
        }
        if labels.len() != p {
            return Err(Error::Invalid(format!(
                "{} labels for {p} columns",
                labels.len()
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::Invalid(format!("duplicate column label `{a}`")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        Ok(DesignMatrix { values, labels })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Smallest/largest singular value ratio.
    pub fn sv_ratio(&self) -> f64 {
        sv_ratio(&self.values)
    }
}

pub(crate) fn sv_ratio(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Least-squares fit, possibly penalized.
#[derive(Clone, Debug)]
pub struct LsFit {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Residual variance with denominator `n - edf` (0 when the fit is
    /// saturated).
    pub sigma2: f64,
    /// `(X'X + lambda*S)^-1`.
    pub gram_inverse: DMatrix<f64>,
    /// `tr((X'X + lambda*S)^-1 X'X)`; equals `p` at `lambda = 0`.
    pub edf: f64,
    pub lambda: f64,
}

/// Ordinary least squares with a rank screen.
pub fn ols(design: &DesignMatrix, y: &DVector<f64>) -> Result<LsFit> {
    check_response(design, y)?;
    if design.sv_ratio() <= RANK_TOL {
        return Err(Error::RankDeficient(format!(
            "singular-value ratio {:.3e} <= {RANK_TOL:.0e}",
            design.sv_ratio()
        )));
    }
    let x = design.values();
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(y);
    solve_penalized(design, y, xtx, xty, None, 0.0)
}

/// Least squares with quadratic penalty `lambda * b' S b`.
///
/// `s` must be symmetric positive semidefinite; `X'X + lambda*S` must be
/// positive definite.
pub fn penalized_ls(
    design: &DesignMatrix,
    y: &DVector<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
) -> Result<LsFit> {
    check_response(design, y)?;
    check_penalty(design.ncols(), s, lambda)?;
    let x = design.values();
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(y);
    solve_penalized(design, y, xtx, xty, Some(s), lambda)
}

fn check_response(design: &DesignMatrix, y: &DVector<f64>) -> Result<()> {
    if y.len() != design.nrows() {
        return Err(Error::Invalid(format!(
            "response has {} rows, design has {}",
            y.len(),
            design.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    Ok(())
}

fn check_penalty(p: usize, s: &DMatrix<f64>, lambda: f64) -> Result<()> {
    if s.nrows() != p || s.ncols() != p {
        return Err(Error::Invalid(format!(
            "penalty is {}x{} for a design with {p} columns",
            s.nrows(),
            s.ncols()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let scale = 1.0 + s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let asym = (s - s.transpose()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asym > 1e-8 * scale {
        return Err(Error::Invalid("penalty matrix is not symmetric".into()));
    }
    Ok(())
}

fn solve_penalized(
    design: &DesignMatrix,
    y: &DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    s: Option<&DMatrix<f64>>,
    lambda: f64,
) -> Result<LsFit> {
    let n = design.nrows() as f64;
    let mut m = xtx.clone();
    if let Some(s) = s {
        if lambda != 0.0 {
            m += s * lambda;
        }
    }
    let chol = Cholesky::new(m).ok_or_else(|| {
        Error::SingularSystem("penalized Gram matrix is not positive definite".into())
    })?;
    let coef = chol.solve(&xty);
    let gram_inverse = chol.inverse();
    let edf = (&gram_inverse * &xtx).trace();
    let fitted = design.values() * &coef;
    let residuals = y - &fitted;
    let rss = residuals.norm_squared();
    let dof = n - edf;
    let sigma2 = if dof > f64::EPSILON { (rss / dof).max(0.0) } else { 0.0 };
    Ok(LsFit {
        coef,
        fitted,
        residuals,
        sigma2,
        gram_inverse,
        edf,
        lambda,
    })
}

/// Penalized logistic regression fit.
#[derive(Clone, Debug)]
pub struct IrlsFit {
    pub coef: DVector<f64>,
    /// Fitted probabilities.
    pub mu: DVector<f64>,
    /// IRLS weights `mu * (1 - mu)`.
    pub q_diag: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized deviance at each accepted iterate (non-increasing).
    pub deviance_trace: Vec<f64>,
    pub lambda: f64,
}

impl IrlsFit {
    /// Final penalized deviance.
    pub fn deviance(&self) -> f64 {
        *self.deviance_trace.last().expect("trace is never empty")
    }
}

/// Penalized Bernoulli log-likelihood fit by damped Newton iterations.
///
/// Minimizes `deviance(b) + lambda * b' S b`, halving the step up to
/// [`IRLS_MAX_HALVINGS`] times whenever the objective would increase.
/// Declares quasi-separation when an accepted iterate drives any
/// |linear predictor| above [`ETA_BOUND`].
pub fn penalized_irls(
    design: &DesignMatrix,
    y: &DVector<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
) -> Result<IrlsFit> {
    penalized_irls_from(design, y, s, lambda, None)
}

/// As [`penalized_irls`], starting from `warm` when provided (used by the
/// smoothing-parameter search to cut iteration counts).
pub fn penalized_irls_from(
    design: &DesignMatrix,
    y: &DVector<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    warm: Option<&DVector<f64>>,
) -> Result<IrlsFit> {
    check_response(design, y)?;
    check_penalty(design.ncols(), s, lambda)?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid("IRLS response must contain only 0 and 1".into()));
    }
    let x = design.values();
    let (n, p) = x.shape();

    let mut coef = match warm {
        Some(b) if b.len() == p => b.clone(),
        _ => DVector::zeros(p),
    };
    let mut eta = x * &coef;
    let mut obj = penalized_deviance(y, &eta, &coef, s, lambda);
    if !obj.is_finite() {
        coef = DVector::zeros(p);
        eta = x * &coef;
        obj = penalized_deviance(y, &eta, &coef, s, lambda);
    }
    let mut trace = vec![obj];

    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    for iter in 1..=IRLS_MAX_ITER {
        iterations = iter;
        let mu = eta.map(logistic);
        let q = mu.map(|m| m * (1.0 - m));
        // score = X'(y - mu) - lambda*S*b ; hessian = X'QX + lambda*S
        let mut score = x.tr_mul(&(y - &mu));
        if lambda != 0.0 {
            score -= (s * &coef) * lambda;
        }
        let xq = scale_rows(x, &q);
        let mut hess = x.tr_mul(&xq);
        if lambda != 0.0 {
            hess += s * lambda;
        }
        let chol = Cholesky::new(hess).ok_or_else(|| {
            Error::SingularSystem("IRLS Hessian is not positive definite".into())
        })?;
        let full_step = chol.solve(&score);

        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=IRLS_MAX_HALVINGS {
            let cand = &coef + &full_step * scale;
            let cand_eta = x * &cand;
            let cand_obj = penalized_deviance(y, &cand_eta, &cand, s, lambda);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-12 * (1.0 + obj.abs()) {
                last_step = (&cand - &coef).norm() / (1.0 + coef.norm());
                coef = cand;
                eta = cand_eta;
                obj = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // Objective is locally flat: treat as converged if steps are tiny.
            if last_step < IRLS_TOL {
                converged = true;
                break;
            }
            return Err(Error::NotConverged {
                iterations: iter,
                last_step,
                last_coef: coef.iter().copied().collect(),
            });
        }
        trace.push(obj);
        if eta.amax() > ETA_BOUND {
            return Err(Error::QuasiSeparation { bound: ETA_BOUND });
        }
        if last_step < IRLS_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            last_step,
            last_coef: coef.iter().copied().collect(),
        });
    }
    let mu = eta.map(logistic);
    let q_diag = mu.map(|m| m * (1.0 - m));
    debug_assert_eq!(n, mu.len());
    Ok(IrlsFit {
        coef,
        mu,
        q_diag,
        converged,
        iterations,
        deviance_trace: trace,
        lambda,
    })
}

pub(crate) fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `-2 log L + lambda * b'Sb` for Bernoulli y with logit link.
fn penalized_deviance(
    y: &DVector<f64>,
    eta: &DVector<f64>,
    coef: &DVector<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let mut ll = 0.0;
    for i in 0..y.len() {
        // log mu = -softplus(-eta), log(1 - mu) = -softplus(eta)
        ll += if y[i] == 1.0 { -softplus(-eta[i]) } else { -softplus(eta[i]) };
    }
    let pen = if lambda == 0.0 { 0.0 } else { lambda * (s * coef).dot(coef) };
    -2.0 * ll + pen
}

/// Rows of `x` scaled elementwise by `w`.
pub(crate) fn scale_rows(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

/// `x' diag(w) x` without materializing the n-by-n weight matrix.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    x.tr_mul(&scale_rows(x, w))
}

#[allow(dead_code)]
pub(crate) type DynMatrix = DMatrix<f64>;
#[allow(dead_code)]
pub(crate) type DynDim = Dyn;
