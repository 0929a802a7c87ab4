//! B-spline bases with difference penalties and sum-to-zero centering.
//!
//! Bases are cubic by default with interior knots at exposure quantiles and
//! boundary knots replicated `degree + 1` times. Points outside the boundary
//! are clamped (and counted, so callers can surface a warning). The centered
//! parameterization drops the constant direction via an orthonormal
//! `k x (k-1)` transform so smooth terms can coexist with an intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotRule {
    Quantile,
    Uniform,
}

/// Specification of a univariate B-spline basis.
#[derive(Clone, Debug)]
pub struct BasisSpec {
    /// Number of basis functions `k` (>= degree + 1).
    pub num_basis: usize,
    pub degree: usize,
    pub knot_rule: KnotRule,
    /// Closed evaluation interval; values outside are clamped.
    pub boundary: (f64, f64),
}

impl BasisSpec {
    /// Cubic basis with `k` functions, quantile knots, boundary from data.
    pub fn cubic_from_data(k: usize, x: &DVector<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Invalid("empty data for basis boundary".into()));
        }
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spec = BasisSpec {
            num_basis: k,
            degree: 3,
            knot_rule: KnotRule::Quantile,
            boundary: (lo, hi),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_basis < self.degree + 1 {
            return Err(Error::Invalid(format!(
                "num_basis {} must be at least degree + 1 = {}",
                self.num_basis,
                self.degree + 1
            )));
        }
        if !(self.boundary.0.is_finite() && self.boundary.1.is_finite())
            || self.boundary.0 >= self.boundary.1
        {
            return Err(Error::Invalid(format!(
                "boundary ({}, {}) must be finite with lo < hi",
                self.boundary.0, self.boundary.1
            )));
        }
        Ok(())
    }
}

/// Raw (uncentered) B-spline design.
#[derive(Clone, Debug)]
pub struct BsplineDesign {
    /// `n x k`; each row sums to one.
    pub design: DMatrix<f64>,
    /// Full knot vector of length `k + degree + 1`, boundary knots repeated.
    pub knots: Vec<f64>,
    /// Number of input points clamped into the boundary interval.
    pub n_clamped: usize,
}

/// Build the raw B-spline design for `x` under `spec`.
pub fn bspline_design(x: &DVector<f64>, spec: &BasisSpec) -> Result<BsplineDesign> {
    spec.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("basis input".into()));
    }
    let knots = build_knots(x, spec)?;
    let mut n_clamped = 0;
    let design = eval_raw(&knots, spec, x.as_slice(), &mut n_clamped);
    Ok(BsplineDesign { design, knots, n_clamped })
}

fn build_knots(x: &DVector<f64>, spec: &BasisSpec) -> Result<Vec<f64>> {
    let k = spec.num_basis;
    let d = spec.degree;
    let (lo, hi) = spec.boundary;
    let n_interior = k - d - 1;

    let interior: Vec<f64> = match spec.knot_rule {
        KnotRule::Uniform => (1..=n_interior)
            .map(|i| lo + (hi - lo) * i as f64 / (n_interior + 1) as f64)
            .collect(),
        KnotRule::Quantile => {
            let mut xs: Vec<f64> = x.iter().copied().collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (1..=n_interior)
                .map(|i| quantile(&xs, i as f64 / (n_interior + 1) as f64))
                .collect()
        }
    };

    let mut knots = Vec::with_capacity(k + d + 1);
    knots.extend(std::iter::repeat_n(lo, d + 1));
    knots.extend_from_slice(&interior);
    knots.extend(std::iter::repeat_n(hi, d + 1));

    // Interior knots must be strictly increasing and strictly inside the
    // boundary, else the basis degenerates.
    let mut prev = lo;
    for &t in &interior {
        if t <= prev || t >= hi {
            return Err(Error::DegenerateKnots(format!(
                "need {n_interior} strictly increasing interior knots in ({lo}, {hi}); \
                 the data do not provide enough distinct quantiles"
            )));
        }
        prev = t;
    }
    Ok(knots)
}

/// Linear-interpolation sample quantile on sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Evaluate all `k` basis functions at each point (clamped to the boundary).
fn eval_raw(knots: &[f64], spec: &BasisSpec, xs: &[f64], n_clamped: &mut usize) -> DMatrix<f64> {
    let k = spec.num_basis;
    let d = spec.degree;
    let (lo, hi) = spec.boundary;
    let mut out = DMatrix::zeros(xs.len(), k);
    let mut local = vec![0.0f64; d + 1];
    let mut left = vec![0.0f64; d + 1];
    let mut right = vec![0.0f64; d + 1];
    for (row, &raw) in xs.iter().enumerate() {
        let u = if raw < lo {
            *n_clamped += 1;
            lo
        } else if raw > hi {
            *n_clamped += 1;
            hi
        } else {
            raw
        };
        let span = find_span(knots, k, d, u);
        basis_at(knots, d, span, u, &mut local, &mut left, &mut right);
        for (r, &v) in local.iter().enumerate() {
            out[(row, span - d + r)] = v;
        }
    }
    out
}

/// Index `m` with `t[m] <= u < t[m+1]`, clamped to the valid span range
/// `[degree, k-1]`; `u = hi` maps to the last span.
fn find_span(knots: &[f64], k: usize, degree: usize, u: f64) -> usize {
    if u >= knots[k] {
        return k - 1;
    }
    let mut lo = degree;
    let mut hi = k;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Triangular Cox-de Boor scheme: fills `local[r] = N_{span-degree+r, degree}(u)`.
fn basis_at(
    knots: &[f64],
    degree: usize,
    span: usize,
    u: f64,
    local: &mut [f64],
    left: &mut [f64],
    right: &mut [f64],
) {
    local[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = local[r] / (right[r + 1] + left[j - r]);
            local[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        local[j] = saved;
    }
}

/// Difference penalty of the given order: returns `(S, Delta)` with
/// `S = Delta' Delta`, `Delta` of shape `(k - order) x k`.
pub fn diff_penalty(k: usize, order: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if order == 0 || order >= k {
        return Err(Error::InvalidOrder { order, k });
    }
    let mut delta = DMatrix::<f64>::identity(k, k);
    for step in 0..order {
        let rows = k - step - 1;
        let mut next = DMatrix::<f64>::zeros(rows, k);
        for i in 0..rows {
            for j in 0..k {
                next[(i, j)] = delta[(i + 1, j)] - delta[(i, j)];
            }
        }
        delta = next;
    }
    let s = delta.tr_mul(&delta);
    Ok((s, delta))
}

/// A centered smooth basis: columns orthogonal to the constant.
#[derive(Clone, Debug)]
pub struct SmoothBasis {
    /// Centered design, `n x (k-1)`; every column has mean zero.
    pub design: DMatrix<f64>,
    /// Penalty in the centered parameterization, `(k-1) x (k-1)`.
    pub penalty: DMatrix<f64>,
    pub knots: Vec<f64>,
    /// Orthonormal `k x (k-1)` map from centered to raw coefficients.
    pub center_transform: DMatrix<f64>,
    pub spec: BasisSpec,
    /// Clamp count from building the training design.
    pub n_clamped: usize,
}

impl SmoothBasis {
    /// Build a centered basis from data: raw design, difference penalty of
    /// `penalty_order`, then the sum-to-zero reparameterization.
    pub fn build(x: &DVector<f64>, spec: &BasisSpec, penalty_order: usize) -> Result<Self> {
        let raw = bspline_design(x, spec)?;
        let (s, _) = diff_penalty(spec.num_basis, penalty_order)?;
        center(raw, &s, spec.clone())
    }

    /// Evaluate the centered basis at new points; returns the design and the
    /// number of clamped points.
    pub fn eval_at(&self, xs: &[f64]) -> (DMatrix<f64>, usize) {
        let mut n_clamped = 0;
        let raw = eval_raw(&self.knots, &self.spec, xs, &mut n_clamped);
        (raw * &self.center_transform, n_clamped)
    }

    /// Centered basis dimension `k - 1`.
    pub fn dim(&self) -> usize {
        self.center_transform.ncols()
    }
}

/// Reparameterize a raw basis so its columns are orthogonal to the constant
/// over the training sample.
///
/// The transform is the orthonormal complement of the column-sum vector,
/// obtained from a Householder reflector, so fitted values are preserved and
/// the transformed penalty stays symmetric positive semidefinite.
pub fn center(raw: BsplineDesign, s: &DMatrix<f64>, spec: BasisSpec) -> Result<SmoothBasis> {
    let k = spec.num_basis;
    if s.nrows() != k || s.ncols() != k {
        return Err(Error::Invalid(format!(
            "penalty is {}x{}, expected {k}x{k}",
            s.nrows(),
            s.ncols()
        )));
    }
    // c = column sums of the raw design; rows sum to 1 so c != 0.
    let ones = DVector::from_element(raw.design.nrows(), 1.0);
    let c = raw.design.tr_mul(&ones);
    let norm = c.norm();
    if norm == 0.0 {
        return Err(Error::Invalid("degenerate basis: zero column sums".into()));
    }
    // Householder reflector mapping c to a multiple of e1; its remaining
    // columns form an orthonormal basis of the complement of c.
    let mut v = c.clone();
    v[0] += c[0].signum() * norm;
    let vtv = v.norm_squared();
    let mut h = DMatrix::<f64>::identity(k, k);
    h -= (&v * v.transpose()) * (2.0 / vtv);
    let z = h.columns(1, k - 1).into_owned();

    let design = &raw.design * &z;
    let penalty_raw = z.tr_mul(&(s * &z));
    // Exact symmetrization guards against drift in the congruence product.
    let penalty = (&penalty_raw + penalty_raw.transpose()) * 0.5;

    Ok(SmoothBasis {
        design,
        penalty,
        knots: raw.knots,
        center_transform: z,
        spec,
        n_clamped: raw.n_clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(k: usize, degree: usize, lo: f64, hi: f64) -> BasisSpec {
        BasisSpec {
            num_basis: k,
            degree,
            knot_rule: KnotRule::Uniform,
            boundary: (lo, hi),
        }
    }

    /// Textbook Cox-de Boor recursion, written naively as an oracle.
    fn naive_bspline(knots: &[f64], i: usize, d: usize, u: f64, hi: f64) -> f64 {
        if d == 0 {
            let last = u == hi && knots[i] < knots[i + 1] && knots[i + 1] == hi;
            return if (knots[i] <= u && u < knots[i + 1]) || last { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let den1 = knots[i + d] - knots[i];
        if den1 > 0.0 {
            v += (u - knots[i]) / den1 * naive_bspline(knots, i, d - 1, u, hi);
        }
        let den2 = knots[i + d + 1] - knots[i + 1];
        if den2 > 0.0 {
            v += (knots[i + d + 1] - u) / den2 * naive_bspline(knots, i + 1, d - 1, u, hi);
        }
        v
    }

    #[test]
    fn rows_sum_to_one() {
        let x = DVector::from_fn(200, |i, _| -1.0 + 2.0 * i as f64 / 199.0);
        let b = bspline_design(&x, &spec(10, 3, -1.0, 1.0)).unwrap();
        for i in 0..200 {
            let s: f64 = b.design.row(i).iter().sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
        assert_eq!(b.n_clamped, 0);
        assert_eq!(b.knots.len(), 10 + 3 + 1);
    }

    #[test]
    fn at_most_degree_plus_one_nonzeros_per_row() {
        let x = DVector::from_fn(50, |i, _| i as f64 / 49.0 * 6.0);
        let b = bspline_design(&x, &spec(9, 3, 0.0, 6.0)).unwrap();
        for i in 0..50 {
            let nz = b.design.row(i).iter().filter(|v| v.abs() > 1e-14).count();
            assert!(nz <= 4, "row {i} has {nz} nonzeros");
        }
    }

    #[test]
    fn matches_naive_recursion_oracle() {
        let sp = spec(5, 2, 0.0, 1.0);
        let pts = [0.0, 0.17, 0.33, 0.5, 0.71, 0.9, 1.0];
        let x = DVector::from_column_slice(&pts);
        let b = bspline_design(&x, &sp).unwrap();
        for (row, &u) in pts.iter().enumerate() {
            for j in 0..5 {
                let expect = naive_bspline(&b.knots, j, 2, u, 1.0);
                assert_relative_eq!(b.design[(row, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn clamping_is_counted() {
        let x = DVector::from_column_slice(&[-2.0, 0.5, 3.0]);
        let b = bspline_design(&x, &spec(5, 3, 0.0, 1.0)).unwrap();
        assert_eq!(b.n_clamped, 2);
        // Clamped rows equal the boundary rows.
        let xb = DVector::from_column_slice(&[0.0, 0.5, 1.0]);
        let bb = bspline_design(&xb, &spec(5, 3, 0.0, 1.0)).unwrap();
        assert_relative_eq!(b.design, bb.design, epsilon = 0.0);
    }

    #[test]
    fn quantile_knots_need_distinct_values() {
        // Constant data cannot supply distinct interior quantiles.
        let x = DVector::from_element(40, 0.5);
        let sp = BasisSpec {
            num_basis: 8,
            degree: 3,
            knot_rule: KnotRule::Quantile,
            boundary: (0.0, 1.0),
        };
        assert!(matches!(
            bspline_design(&x, &sp),
            Err(Error::DegenerateKnots(_))
        ));
    }

    #[test]
    fn knots_are_monotone_for_random_data() {
        let mut state = 99u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for _ in 0..20 {
            let x = DVector::from_fn(120, |_, _| next() * 4.0 - 2.0);
            let sp = BasisSpec::cubic_from_data(10, &x).unwrap();
            let b = bspline_design(&x, &sp).unwrap();
            for w in b.knots.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn diff_penalty_first_order_exact() {
        let (s, delta) = diff_penalty(3, 1).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_relative_eq!(s, expect, epsilon = 1e-14);
        assert_eq!(delta.shape(), (2, 3));
    }

    #[test]
    fn second_order_penalty_annihilates_linear_sequences() {
        let (s, _) = diff_penalty(7, 2).unwrap();
        let ones = DVector::from_element(7, 1.0);
        let lin = DVector::from_fn(7, |i, _| i as f64 + 1.0);
        assert!((&s * ones).amax() < 1e-12);
        assert!((&s * lin).amax() < 1e-12);
    }

    #[test]
    fn second_order_penalty_is_psd_with_two_null_directions() {
        let (s, _) = diff_penalty(6, 2).unwrap();
        let eig = nalgebra::SymmetricEigen::new(s);
        let max = eig.eigenvalues.amax();
        let tiny = eig.eigenvalues.iter().filter(|&&v| v.abs() < 1e-10 * max).count();
        assert_eq!(tiny, 2);
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10 * max));
    }

    #[test]
    fn invalid_order_is_rejected() {
        assert!(matches!(diff_penalty(4, 4), Err(Error::InvalidOrder { .. })));
        assert!(matches!(diff_penalty(4, 0), Err(Error::InvalidOrder { .. })));
    }

    #[test]
    fn centered_columns_have_zero_mean() {
        let x = DVector::from_fn(300, |i, _| (i as f64 / 299.0) * 2.0 - 1.0);
        let sp = spec(10, 3, -1.0, 1.0);
        let sb = SmoothBasis::build(&x, &sp, 2).unwrap();
        for j in 0..sb.dim() {
            let mean: f64 = sb.design.column(j).iter().sum::<f64>() / 300.0;
            assert!(mean.abs() < 1e-10, "column {j} mean {mean:.2e}");
        }
    }

    #[test]
    fn centered_penalty_is_psd_with_one_null_direction() {
        let x = DVector::from_fn(120, |i, _| i as f64 / 119.0);
        let sp = spec(8, 3, 0.0, 1.0);
        let sb = SmoothBasis::build(&x, &sp, 2).unwrap();
        let eig = nalgebra::SymmetricEigen::new(sb.penalty.clone());
        let max = eig.eigenvalues.amax();
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10 * max));
        let tiny = eig.eigenvalues.iter().filter(|&&v| v.abs() < 1e-10 * max).count();
        assert_eq!(tiny, 1, "centering removes the constant, leaving the linear direction");
    }

    #[test]
    fn centered_and_raw_parameterizations_give_identical_fits() {
        // Project a target onto span{1, raw basis} and span{1, centered basis}:
        // fitted values must agree because the spans are equal.
        let n = 80;
        let x = DVector::from_fn(n, |i, _| i as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |i, _| (3.1 * x[i]).sin() + 0.3 * x[i]);
        let sp = spec(7, 3, 0.0, 1.0);
        let raw = bspline_design(&x, &sp).unwrap();
        let (s, _) = diff_penalty(7, 2).unwrap();
        let sb = center(raw.clone(), &s, sp).unwrap();

        let fit_raw = {
            let d = crate::linmod::DesignMatrix::new(
                raw.design.clone(),
                (0..7).map(|j| format!("b{j}")).collect(),
            )
            .unwrap();
            crate::linmod::ols(&d, &y).unwrap().fitted
        };
        let fit_centered = {
            let mut m = DMatrix::zeros(n, 1 + sb.dim());
            m.column_mut(0).fill(1.0);
            m.columns_mut(1, sb.dim()).copy_from(&sb.design);
            let d = crate::linmod::DesignMatrix::new(
                m,
                (0..=sb.dim()).map(|j| format!("c{j}")).collect(),
            )
            .unwrap();
            crate::linmod::ols(&d, &y).unwrap().fitted
        };
        assert_relative_eq!(fit_raw, fit_centered, epsilon = 1e-8);
    }

    #[test]
    fn eval_at_training_points_reproduces_design_bit_for_bit() {
        let x = DVector::from_fn(150, |i, _| ((i * 37) % 150) as f64 / 149.0 * 5.0);
        let sp = spec(10, 3, 0.0, 5.0);
        let sb = SmoothBasis::build(&x, &sp, 2).unwrap();
        let (again, clamped) = sb.eval_at(x.as_slice());
        assert_eq!(clamped, 0);
        assert_eq!(sb.design, again, "same code path must give bitwise-equal designs");
    }
}
