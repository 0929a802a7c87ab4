//! Covariance estimators and hypothesis tests.
//!
//! All covariances are finite-sample sandwiches for the fitted coefficient
//! vector (not the rescaled asymptotic form), so `sqrt(diag)` is directly a
//! standard error. The stage-1 estimation error is always accounted for:
//! through residual recomputation for two-stage prediction, through a
//! low-rank inflation of the error covariance for the control function, and
//! through an explicit influence correction for M-estimation fits.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::linmod::{scale_rows, weighted_gram, DesignMatrix};

/// Which covariance estimator produced a [`CovEstimate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    TwoStage,
    ControlFunction,
    MEstimation,
    PenalizedSandwich,
}

impl CovMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovMethod::TwoStage => "sandwich_two_stage",
            CovMethod::ControlFunction => "sandwich_control_function",
            CovMethod::MEstimation => "sandwich_mestimation",
            CovMethod::PenalizedSandwich => "penalized_sandwich",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CovEstimate {
    pub cov: DMatrix<f64>,
    pub method: CovMethod,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Sandwich covariance for the two-stage prediction fit.
///
/// The meat uses residuals recomputed against the structural exposure
/// transforms `f_j(X)` rather than the stage-1 fitted values, which captures
/// the substitution error; the stage-1 influence then cancels exactly against
/// the projection error, so no explicit correction term remains.
pub fn cov_two_stage(fit: &FitResult) -> Result<CovEstimate> {
    let r = fit.resid_structural.as_ref().ok_or_else(|| {
        Error::Invalid("structural residuals are only available on two-stage fits".into())
    })?;
    let w = fit.w.values();
    let wr = scale_rows(w, r);
    let meat = wr.tr_mul(&wr);
    let cov = &fit.gram_inverse * meat * &fit.gram_inverse;
    Ok(CovEstimate {
        cov: symmetrize(cov),
        method: CovMethod::TwoStage,
    })
}

/// Sandwich covariance for the gaussian control-function fit with an
/// identity residual term.
///
/// The error covariance is `var_e * I + rho^2 * var_delta1 * V (V'V)^-1 V'`;
/// the rank-p1 second piece reflects the estimated first stage and is
/// contracted against `W` directly so no n-by-n matrix is formed.
pub fn cov_control_fn(fit: &FitResult) -> Result<CovEstimate> {
    let rho = fit
        .rho_hat
        .ok_or_else(|| Error::Invalid("not a control-function fit (no rho)".into()))?;
    let var_e = fit
        .var_e
        .ok_or_else(|| Error::Invalid("control-function covariance needs a gaussian fit".into()))?;
    let w = fit.w.values();
    let v = &fit.stage1.v;
    let wtw = w.tr_mul(w);
    let wtv = w.tr_mul(v);
    let mid = &wtv * &fit.stage1.gram_inverse * wtv.transpose();
    let meat = wtw * var_e + mid * (rho * rho * fit.stage1.var_delta1);
    let cov = &fit.gram_inverse * meat * &fit.gram_inverse;
    Ok(CovEstimate {
        cov: symmetrize(cov),
        method: CovMethod::ControlFunction,
    })
}

/// Joint M-estimation meat `sum_i A_i A_i'` where
/// `A_i = psi_i + C (V'V)^-1 v_i delta1_i` and `C` differentiates the stage-2
/// estimating function through the residual column.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mestimation_meat(
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    v_gram_inverse: &DMatrix<f64>,
    delta1: &DVector<f64>,
    resid: &DVector<f64>,
    h_deriv: &DVector<f64>,
    rho: f64,
    h_cols: &[usize],
    q_diag: Option<&DVector<f64>>,
) -> DMatrix<f64> {
    let p2 = w.ncols();
    // s1 scales the `rho * w_i` part of dpsi/dbeta, s2 the `-resid * e_h` part.
    let (s1, s2): (DVector<f64>, DVector<f64>) = match q_diag {
        Some(q) => (
            DVector::from_fn(w.nrows(), |i, _| h_deriv[i] * q[i]),
            DVector::from_fn(w.nrows(), |i, _| h_deriv[i] * resid[i]),
        ),
        None => (
            h_deriv.clone(),
            DVector::from_fn(w.nrows(), |i, _| h_deriv[i] * resid[i]),
        ),
    };
    let mut c = scale_rows(w, &s1).tr_mul(v) * rho; // p2 x p1
    let s2v = scale_rows(v, &s2).row_sum(); // 1 x p1, equals s2' V
    for &h_col in h_cols {
        for j in 0..v.ncols() {
            c[(h_col, j)] -= s2v[j];
        }
    }
    let t = c * v_gram_inverse; // p2 x p1
    // A = diag(resid) W + diag(delta1) V T'
    let mut a = scale_rows(w, resid);
    a += scale_rows(&(v * t.transpose()), delta1);
    debug_assert_eq!(a.ncols(), p2);
    a.tr_mul(&a)
}

/// Sandwich covariance from the stacked estimating equations of both stages;
/// required when the residual enters stage 2 through a nonlinear transform,
/// and for the logistic stage 2 (where the bread is `(W'QW)^-1`).
pub fn cov_mestimation(fit: &FitResult) -> Result<CovEstimate> {
    let h_col = fit
        .h_col
        .ok_or_else(|| Error::Invalid("M-estimation covariance needs a residual column".into()))?;
    let rho = fit.rho_hat.expect("residual column implies rho");
    let h_deriv = fit
        .h_deriv
        .as_ref()
        .ok_or_else(|| Error::Invalid("missing derivative of the residual transform".into()))?;
    let meat = mestimation_meat(
        fit.w.values(),
        &fit.stage1.v,
        &fit.stage1.gram_inverse,
        &fit.stage1.delta1,
        &fit.residuals,
        h_deriv,
        rho,
        &[h_col],
        fit.q_diag.as_ref(),
    );
    let cov = &fit.gram_inverse * meat * &fit.gram_inverse;
    Ok(CovEstimate {
        cov: symmetrize(cov),
        method: CovMethod::MEstimation,
    })
}

/// How the tail probability of a test statistic was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Characteristic-function quadrature, absolute accuracy ~1e-6.
    Quadrature,
    /// Moment-matched chi-square approximation (degraded accuracy).
    Satterthwaite,
}

/// Reference distribution of a test statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DfSpec {
    F { df1: f64, df2: f64 },
    ChiSquare { df: f64 },
    /// `chi2(base_df) + nu1 * chi2(1) + nu2 * chi2(1)`.
    Mixture { base_df: f64, nu1: f64, nu2: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: DfSpec,
    /// Effective rank used by the smooth test.
    pub rank_r: Option<f64>,
    /// Present when the p-value came from a weighted-chi-square tail.
    pub tail_method: Option<TailMethod>,
}

fn chi2_sf(x: f64, df: f64) -> Result<f64> {
    let d = ChiSquared::new(df)
        .map_err(|e| Error::Invalid(format!("chi-square df {df}: {e}")))?;
    Ok(d.sf(x).clamp(0.0, 1.0))
}

fn f_sf(x: f64, df1: f64, df2: f64) -> Result<f64> {
    let d = FisherSnedecor::new(df1, df2)
        .map_err(|e| Error::Invalid(format!("F({df1}, {df2}): {e}")))?;
    Ok(d.sf(x).clamp(0.0, 1.0))
}

/// Joint F test that the exposure-transform coefficients are all zero:
/// `theta' V_theta^-1 theta / K1` against `F(K1, n - p)`.
pub fn f_test(fit: &FitResult) -> Result<TestResult> {
    let k1 = fit.theta_index.len();
    let p = fit.w.ncols();
    if fit.n <= p {
        return Err(Error::Invalid(format!(
            "F test needs n > p, got n = {} and p = {p}",
            fit.n
        )));
    }
    let theta = fit.theta();
    let v_theta = DMatrix::from_fn(k1, k1, |i, j| {
        fit.cov_b[(fit.theta_index[i], fit.theta_index[j])]
    });
    let chol = Cholesky::new(v_theta).ok_or(Error::SingularThetaCov)?;
    let statistic = (theta.dot(&chol.solve(&theta)) / k1 as f64).max(0.0);
    let df1 = k1 as f64;
    let df2 = (fit.n - p) as f64;
    Ok(TestResult {
        statistic,
        p_value: f_sf(statistic, df1, df2)?,
        df: DfSpec::F { df1, df2 },
        rank_r: None,
        tail_method: None,
    })
}

/// Meat specification for the penalized sandwich.
pub enum MeatSpec<'a> {
    /// Gaussian control-function error structure:
    /// `W'DW = var_e * W'W + rho^2 var_delta1 * (W'V)(V'V)^-1(V'W)`.
    GaussianControl {
        var_e: f64,
        rho: f64,
        var_delta1: f64,
        v: &'a DMatrix<f64>,
        v_gram_inverse: &'a DMatrix<f64>,
    },
    /// Logistic stage 2: IRLS weights plus a precomputed M-estimation meat.
    Binomial {
        q_diag: &'a DVector<f64>,
        meat: &'a DMatrix<f64>,
    },
}

/// Covariance of a penalized fit: `(G + lambda S)^-1 M G^-1`, symmetrized,
/// where `G` is the (weighted) Gram matrix and `M` the meat from `spec`.
/// At `lambda = 0` this reduces exactly to the unpenalized sandwich.
pub fn bayes_cov(
    w: &DesignMatrix,
    spec: &MeatSpec,
    s_full: &DMatrix<f64>,
    lambda: f64,
) -> Result<CovEstimate> {
    let x = w.values();
    let (gram, meat) = match spec {
        MeatSpec::GaussianControl {
            var_e,
            rho,
            var_delta1,
            v,
            v_gram_inverse,
        } => {
            let wtw = x.tr_mul(x);
            let wtv = x.tr_mul(*v);
            let mid = &wtv * *v_gram_inverse * wtv.transpose();
            let meat = &wtw * *var_e + mid * (rho * rho * var_delta1);
            (wtw, meat)
        }
        MeatSpec::Binomial { q_diag, meat } => {
            (weighted_gram(x, q_diag), (*meat).clone())
        }
    };
    let left = Cholesky::new(&gram + s_full * lambda)
        .ok_or_else(|| Error::SingularSystem("penalized Gram is not positive definite".into()))?
        .inverse();
    let right = Cholesky::new(gram)
        .ok_or_else(|| Error::SingularSystem("Gram matrix is not positive definite".into()))?
        .inverse();
    let cov = left * meat * right;
    Ok(CovEstimate {
        cov: symmetrize(cov),
        method: CovMethod::PenalizedSandwich,
    })
}

/// Relative eigenvalue cutoff for the smooth-test pseudo-inverse.
const EIG_REL_TOL: f64 = 1e-10;
/// Below this fractional part the test rank is treated as an integer.
const NU_INTEGER_TOL: f64 = 0.05;

/// Significance test for a fitted smooth evaluated on a grid.
///
/// `f_hat` is the fitted curve, `v_f` its covariance on the same grid, and
/// `r` the effective degrees of freedom of the smooth. The statistic is
/// `f' V^- f` with a rank-`r` pseudo-inverse; a fractional `r` scales the
/// smallest retained inverse eigenvalue by the fractional part and the null
/// becomes a weighted chi-square mixture.
pub fn smooth_test(f_hat: &DVector<f64>, v_f: &DMatrix<f64>, r: f64) -> Result<TestResult> {
    if v_f.nrows() != v_f.ncols() || v_f.nrows() != f_hat.len() {
        return Err(Error::Invalid(format!(
            "smooth test needs square V_f matching f_hat; got {}x{} and {}",
            v_f.nrows(),
            v_f.ncols(),
            f_hat.len()
        )));
    }
    if !(r.is_finite() && r >= 1.0) {
        return Err(Error::Invalid(format!("test rank r must be >= 1, got {r}")));
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(v_f.clone()));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigs: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scores: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).dot(f_hat))
        .collect();
    smooth_test_from_parts(&scores, &eigs, r)
}

/// Core of [`smooth_test`], on eigenvalues (descending) and eigenvector
/// scores `u_j' f_hat`. Exposed within the crate so the semiparametric path
/// can supply the low-rank eigensystem without forming the full grid
/// covariance.
pub(crate) fn smooth_test_from_parts(scores: &[f64], eigs: &[f64], r: f64) -> Result<TestResult> {
    let m = r.floor() as usize;
    let nu = r - m as f64;
    let integer_rank = nu < NU_INTEGER_TOL;
    let need = if integer_rank { m } else { m + 1 };

    let eig_max = eigs.first().copied().unwrap_or(0.0);
    let usable = if eig_max > 0.0 {
        eigs.iter().take_while(|&&v| v > EIG_REL_TOL * eig_max).count()
    } else {
        0
    };
    if usable < need {
        return Err(Error::RankTooLow {
            found: usable,
            need,
        });
    }

    let mut statistic = 0.0;
    for j in 0..m {
        statistic += scores[j] * scores[j] / eigs[j];
    }
    if integer_rank {
        return Ok(TestResult {
            statistic,
            p_value: chi2_sf(statistic, m as f64)?,
            df: DfSpec::ChiSquare { df: m as f64 },
            rank_r: Some(r),
            tail_method: None,
        });
    }

    statistic += nu * scores[m] * scores[m] / eigs[m];
    let nu1 = (nu + 1.0 + (1.0 - nu * nu).sqrt()) / 2.0;
    let nu2 = nu + 1.0 - nu1;
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(3);
    if m >= 2 {
        terms.push((1.0, (m - 1) as f64));
    }
    terms.push((nu1, 1.0));
    terms.push((nu2, 1.0));
    let tail = wsumchisq_sf(statistic, &terms)?;
    Ok(TestResult {
        statistic,
        p_value: tail.p,
        df: DfSpec::Mixture {
            base_df: (m.saturating_sub(1)) as f64,
            nu1,
            nu2,
        },
        rank_r: Some(r),
        tail_method: Some(tail.method),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TailProbability {
    pub p: f64,
    pub method: TailMethod,
}

/// Upper tail `P(sum_j w_j chi2(df_j) > t)` for positive weights.
///
/// Evaluated by numerical inversion of the characteristic function
/// (oscillatory-panel quadrature with series acceleration, absolute accuracy
/// around 1e-6). Falls back to a Satterthwaite moment match, flagged in the
/// result, if the quadrature fails to converge.
pub fn wsumchisq_sf(t: f64, terms: &[(f64, f64)]) -> Result<TailProbability> {
    if terms.is_empty() {
        return Err(Error::Invalid("weighted chi-square needs at least one term".into()));
    }
    for &(w, df) in terms {
        if !(w.is_finite() && w > 0.0 && df.is_finite() && df > 0.0) {
            return Err(Error::Invalid(format!(
                "weights and degrees of freedom must be positive and finite, got ({w}, {df})"
            )));
        }
    }
    if !t.is_finite() {
        return Err(Error::Invalid(format!("statistic must be finite, got {t}")));
    }
    if t <= 0.0 {
        return Ok(TailProbability {
            p: 1.0,
            method: TailMethod::Quadrature,
        });
    }
    if let Some(p) = imhof_sf(t, terms) {
        return Ok(TailProbability {
            p: p.clamp(0.0, 1.0),
            method: TailMethod::Quadrature,
        });
    }
    // Moment-matched scaled chi-square: same mean and variance.
    let mean: f64 = terms.iter().map(|&(w, h)| w * h).sum();
    let var: f64 = terms.iter().map(|&(w, h)| 2.0 * w * w * h).sum();
    let scale = var / (2.0 * mean);
    let df = 2.0 * mean * mean / var;
    Ok(TailProbability {
        p: chi2_sf(t / scale, df)?,
        method: TailMethod::Satterthwaite,
    })
}

/// Phase of the inversion integrand.
fn imhof_theta(u: f64, t: f64, terms: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for &(w, h) in terms {
        s += h * (w * u).atan();
    }
    0.5 * s - 0.5 * t * u
}

fn imhof_theta_deriv(u: f64, t: f64, terms: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for &(w, h) in terms {
        s += h * w / (1.0 + w * w * u * u);
    }
    0.5 * s - 0.5 * t
}

/// Integrand `sin(theta(u)) / (u * rho(u))`.
fn imhof_integrand(u: f64, t: f64, terms: &[(f64, f64)]) -> f64 {
    let mut log_rho = 0.0;
    for &(w, h) in terms {
        log_rho += 0.25 * h * (w * w * u * u).ln_1p();
    }
    imhof_theta(u, t, terms).sin() * (-log_rho).exp() / u
}

/// 16-point Gauss-Legendre rule on [-1, 1], nodes by Newton on the Legendre
/// recurrence so no tabulated constants are needed.
struct Gauss16 {
    nodes: [f64; 16],
    weights: [f64; 16],
}

impl Gauss16 {
    fn new() -> Self {
        const N: usize = 16;
        let mut nodes = [0.0; N];
        let mut weights = [0.0; N];
        for i in 0..N {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(N, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        Gauss16 { nodes, weights }
    }

    fn integrate(&self, a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut s = 0.0;
        for i in 0..16 {
            s += self.weights[i] * f(mid + half * self.nodes[i]);
        }
        s * half
    }

    /// Panel integral with adaptive bisection: panels between phase
    /// crossings can still hide a boundary layer (small t, strong damping),
    /// so each panel is refined until the two-half estimate stabilizes.
    fn integrate_adaptive(&self, a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let whole = self.integrate(a, b, f);
        self.refine(a, b, f, whole, 1e-11, 32)
    }

    fn refine(
        &self,
        a: f64,
        b: f64,
        f: &impl Fn(f64) -> f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let mid = 0.5 * (a + b);
        let left = self.integrate(a, mid, f);
        let right = self.integrate(mid, b, f);
        let sum = left + right;
        if depth == 0 || (sum - whole).abs() <= tol {
            return sum;
        }
        self.refine(a, mid, f, left, 0.5 * tol, depth - 1)
            + self.refine(mid, b, f, right, 0.5 * tol, depth - 1)
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const IMHOF_MAX_PANELS: usize = 4000;
const IMHOF_TAIL_TOL: f64 = 1e-9;

/// Characteristic-function inversion: integrates between consecutive zeros
/// of the oscillatory integrand and accelerates the alternating tail.
fn imhof_sf(t: f64, terms: &[(f64, f64)]) -> Option<f64> {
    let gl = Gauss16::new();
    let theta = |u: f64| imhof_theta(u, t, terms);
    let dtheta = |u: f64| imhof_theta_deriv(u, t, terms);

    // Locate the phase maximum (theta is concave: rises at most once, then
    // decreases linearly like -t*u/2).
    let u_star = if dtheta(0.0) <= 0.0 {
        0.0
    } else {
        let mut hi = 1.0;
        let mut guard = 0;
        while dtheta(hi) > 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return None;
            }
        }
        bisect(dtheta, 0.0, hi)
    };
    let theta_max = theta(u_star);

    // Panel boundaries: ascending crossings of j*pi on [0, u_star], then
    // descending crossings of k*pi for k = floor(theta_max/pi) .. -inf.
    let mut bounds = vec![0.0];
    let k_top = (theta_max / std::f64::consts::PI).floor().max(0.0) as i64;
    for j in 1..=k_top {
        let level = j as f64 * std::f64::consts::PI;
        bounds.push(bisect(|u| theta(u) - level, 0.0, u_star));
    }

    let integrand = |u: f64| imhof_integrand(u, t, terms);
    let mut head = 0.0;
    for w in bounds.windows(2) {
        head += gl.integrate_adaptive(w[0], w[1], &integrand);
    }
    let mut prev_u = *bounds.last().unwrap();
    let mut prev_u_is_start = bounds.len() == 1;

    // Descending branch: the phase first re-crosses k_top*pi on the way
    // down, then every lower multiple of pi.
    let mut tail_partials: Vec<f64> = Vec::new();
    let mut level_k = k_top + 1;
    let mut sum_head_desc = 0.0;
    let mut last_accel: Option<f64> = None;
    let mut stable = 0;
    for panel in 0..IMHOF_MAX_PANELS {
        level_k -= 1;
        let level = level_k as f64 * std::f64::consts::PI;
        // Expand a bracket to the right of prev_u (start from the max when
        // the ascending branch was empty).
        let base = if prev_u_is_start { u_star.max(prev_u) } else { prev_u };
        prev_u_is_start = false;
        let mut step = {
            let d = dtheta(base.max(1e-300)).abs();
            if d > 1e-12 {
                (std::f64::consts::PI / d).min(1e6)
            } else {
                1.0
            }
        };
        let mut lo = base;
        let mut hi = base + step;
        let mut guard = 0;
        while theta(hi) > level {
            lo = hi;
            step *= 2.0;
            hi = lo + step;
            guard += 1;
            if guard > 200 {
                return None;
            }
        }
        let crossing = bisect(|u| theta(u) - level, lo, hi);
        let val = gl.integrate_adaptive(prev_u, crossing, &integrand);
        prev_u = crossing;

        // Panels above level -2*pi still belong to the head; afterwards the
        // series alternates cleanly and can be accelerated.
        if level_k >= -2 {
            sum_head_desc += val;
            continue;
        }
        tail_partials.push(val);
        if tail_partials.len() >= 6 {
            let accel = euler_accelerate(&tail_partials);
            if let Some(prev) = last_accel {
                if (accel - prev).abs() < IMHOF_TAIL_TOL {
                    stable += 1;
                    if stable >= 2 {
                        let integral = head + sum_head_desc + accel;
                        return Some(0.5 + integral / std::f64::consts::PI);
                    }
                } else {
                    stable = 0;
                }
            }
            last_accel = Some(accel);
        }
        if panel + 1 == IMHOF_MAX_PANELS {
            return None;
        }
    }
    None
}

/// Repeated-averaging acceleration of an alternating series given its terms;
/// returns the accelerated estimate of the infinite sum.
fn euler_accelerate(terms: &[f64]) -> f64 {
    // Work on the most recent terms; older ones are already well represented
    // in the average.
    let window = terms.len().min(24);
    let start = terms.len() - window;
    let head: f64 = terms[..start].iter().sum();
    let mut row: Vec<f64> = Vec::with_capacity(window);
    let mut acc = head;
    for &v in &terms[start..] {
        acc += v;
        row.push(acc);
    }
    while row.len() > 1 {
        for i in 0..row.len() - 1 {
            row[i] = 0.5 * (row[i] + row[i + 1]);
        }
        row.pop();
    }
    row[0]
}

/// Bisection for the sign change of `f` on [lo, hi]; the sign at `lo` may be
/// either one, the invariant kept is sign(f(lo)) != sign(f(hi)).
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let positive_at_lo = f(lo) >= 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if (f(mid) >= 0.0) == positive_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chi2_ref(x: f64, df: f64) -> f64 {
        ChiSquared::new(df).unwrap().sf(x)
    }

    #[test]
    fn single_term_matches_chi_square_reference() {
        for &df in &[1.0, 2.0, 5.0] {
            for &t in &[0.5, 2.0, 10.0] {
                let got = wsumchisq_sf(t, &[(1.0, df)]).unwrap();
                assert_eq!(got.method, TailMethod::Quadrature);
                assert!(
                    (got.p - chi2_ref(t, df)).abs() < 1e-6,
                    "df {df} t {t}: {} vs {}",
                    got.p,
                    chi2_ref(t, df)
                );
            }
        }
    }

    #[test]
    fn scaled_term_matches_rescaled_chi_square() {
        // P(w * chi2_k > t) = P(chi2_k > t / w)
        for &w in &[0.3, 2.5] {
            for &t in &[1.0, 4.0, 12.0] {
                let got = wsumchisq_sf(t, &[(w, 3.0)]).unwrap().p;
                assert!((got - chi2_ref(t / w, 3.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn equal_weight_terms_add_degrees_of_freedom() {
        for &t in &[0.5, 3.0, 9.0] {
            let split = wsumchisq_sf(t, &[(1.0, 2.0), (1.0, 3.0)]).unwrap().p;
            let joint = wsumchisq_sf(t, &[(1.0, 5.0)]).unwrap().p;
            assert!((split - joint).abs() < 2e-6, "t {t}: {split} vs {joint}");
        }
    }

    #[test]
    fn tail_probability_boundaries() {
        let terms = [(0.7, 1.0), (1.3, 2.0)];
        assert_eq!(wsumchisq_sf(0.0, &terms).unwrap().p, 1.0);
        assert_eq!(wsumchisq_sf(-3.0, &terms).unwrap().p, 1.0);
        let far = wsumchisq_sf(500.0, &terms).unwrap().p;
        assert!((0.0..1e-6).contains(&far));
    }

    #[test]
    fn tail_probability_is_monotone_in_t() {
        let terms = [(0.9, 1.0), (0.4, 1.0), (1.0, 3.0)];
        let mut last = 1.0;
        for i in 0..30 {
            let t = 0.5 * i as f64;
            let p = wsumchisq_sf(t, &terms).unwrap().p;
            assert!(p <= last + 1e-7, "t {t}: p {p} > previous {last}");
            last = p;
        }
    }

    #[test]
    fn mixture_weights_near_one_match_plain_chi_square() {
        // nu1, nu2 -> 1 recovers chi2 with one extra df.
        let p_mix = wsumchisq_sf(5.0, &[(1.0, 2.0), (0.999999, 1.0)]).unwrap().p;
        let p_chi = chi2_ref(5.0, 3.0);
        assert!((p_mix - p_chi).abs() < 1e-4);
    }

    #[test]
    fn invalid_terms_are_rejected() {
        assert!(wsumchisq_sf(1.0, &[]).is_err());
        assert!(wsumchisq_sf(1.0, &[(-1.0, 2.0)]).is_err());
        assert!(wsumchisq_sf(1.0, &[(1.0, 0.0)]).is_err());
        assert!(wsumchisq_sf(f64::NAN, &[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn smooth_test_integer_rank_reproduces_chi_square() {
        // Diagonal V_f: statistic is a simple weighted square sum.
        let f_hat = DVector::from_column_slice(&[0.9, -0.4, 0.2, 0.05]);
        let v_f = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 0.3, 0.1, 0.02]));
        for r in [1.0, 2.0, 3.0] {
            let res = smooth_test(&f_hat, &v_f, r).unwrap();
            let m = r as usize;
            let expect_stat: f64 = (0..m).map(|j| f_hat[j] * f_hat[j] / v_f[(j, j)]).sum();
            assert_relative_eq!(res.statistic, expect_stat, epsilon = 1e-10);
            assert!((res.p_value - chi2_ref(expect_stat, r)).abs() < 1e-3);
            assert!(matches!(res.df, DfSpec::ChiSquare { .. }));
        }
    }

    #[test]
    fn smooth_test_nominal_five_percent_point() {
        // 3.8415 is the 95th percentile of chi2_1.
        let f_hat = DVector::from_column_slice(&[3.8415f64.sqrt(), 0.0]);
        let v_f = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.5]));
        let res = smooth_test(&f_hat, &v_f, 1.0).unwrap();
        assert!((res.p_value - 0.05).abs() < 1e-3, "p = {}", res.p_value);
    }

    #[test]
    fn smooth_test_zero_curve_gives_p_one() {
        let f_hat = DVector::zeros(5);
        let v_f = DMatrix::identity(5, 5);
        let res = smooth_test(&f_hat, &v_f, 2.6).unwrap();
        assert_relative_eq!(res.p_value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn smooth_test_fractional_rank_uses_mixture() {
        let f_hat = DVector::from_column_slice(&[1.0, 0.7, -0.3, 0.1]);
        let v_f = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.8, 0.5, 0.2, 0.05]));
        let res = smooth_test(&f_hat, &v_f, 2.5).unwrap();
        match res.df {
            DfSpec::Mixture { base_df, nu1, nu2 } => {
                assert_relative_eq!(base_df, 1.0);
                // Mixture mean equals r.
                assert_relative_eq!(base_df + nu1 + nu2, 2.5, epsilon = 1e-12);
            }
            other => panic!("expected mixture null, got {other:?}"),
        }
        assert_eq!(res.tail_method, Some(TailMethod::Quadrature));
        assert!(res.p_value > 0.0 && res.p_value < 1.0);
    }

    #[test]
    fn smooth_test_rank_deficient_covariance_errors() {
        let f_hat = DVector::from_column_slice(&[1.0, 1.0, 1.0]);
        // Rank-1 covariance cannot support r = 2.
        let u = DVector::from_column_slice(&[1.0, 2.0, -1.0]);
        let v_f = &u * u.transpose();
        assert!(matches!(
            smooth_test(&f_hat, &v_f, 2.0),
            Err(Error::RankTooLow { .. })
        ));
    }

    #[test]
    fn smooth_test_pseudo_inverse_matches_eigenbasis_quadratic_form() {
        // For integer r, the statistic must equal the quadratic form computed
        // in the rank-r eigenbasis directly.
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.3, 0.1, 0.0, 0.3, 1.5, 0.2, 0.1, 0.1, 0.2, 1.0, 0.05, 0.0, 0.1, 0.05, 0.7,
            ],
        );
        let v_f = &a * a.transpose();
        let f_hat = DVector::from_column_slice(&[0.6, -0.2, 0.4, 0.1]);
        let r = 3.0;
        let res = smooth_test(&f_hat, &v_f, r).unwrap();

        let eig = nalgebra::SymmetricEigen::new(v_f.clone());
        let mut idx: Vec<usize> = (0..4).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        let mut expect = 0.0;
        for &i in idx.iter().take(3) {
            let score = eig.eigenvectors.column(i).dot(&f_hat);
            expect += score * score / eig.eigenvalues[i];
        }
        assert_relative_eq!(res.statistic, expect, epsilon = 1e-8);
    }

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        let gl = Gauss16::new();
        // Degree-9 polynomial over [0, 2]: exactly integrable by 16 nodes.
        let val = gl.integrate(0.0, 2.0, &|x| x.powi(9) - 3.0 * x.powi(4) + 2.0);
        let exact = 2.0f64.powi(10) / 10.0 - 3.0 * 2.0f64.powi(5) / 5.0 + 4.0;
        assert_relative_eq!(val, exact, epsilon = 1e-10);
    }
}
