//! Scalar transform registry.
//!
//! Basis transforms for the exposure (`f`), covariates (`g`) and the
//! first-stage residual (`h`) are represented as named scalar maps with a
//! derivative. Built-ins carry analytic derivatives; custom closures fall
//! back to central finite differences with step `1e-6 * (1 + |x|)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-6;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Transform {
    name: String,
    func: ScalarFn,
    deriv: Option<ScalarFn>,
    linear: bool,
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transform")
            .field("name", &self.name)
            .field("analytic_deriv", &self.deriv.is_some())
            .field("linear", &self.linear)
            .finish()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self::builtin("identity", |x| x, |_| 1.0, true)
    }

    pub fn square() -> Self {
        Self::builtin("square", |x| x * x, |x| 2.0 * x, false)
    }

    /// `(x / 3)^2`, a gently scaled quadratic.
    pub fn quad3() -> Self {
        Self::builtin("quad3", |x| (x / 3.0).powi(2), |x| 2.0 * x / 9.0, false)
    }

    pub fn sin() -> Self {
        Self::builtin("sin", f64::sin, f64::cos, false)
    }

    pub fn cos() -> Self {
        Self::builtin("cos", f64::cos, |x| -x.sin(), false)
    }

    /// `exp(x / 3)`, a gently scaled exponential.
    pub fn exp3() -> Self {
        Self::builtin("exp3", |x| (x / 3.0).exp(), |x| (x / 3.0).exp() / 3.0, false)
    }

    /// Look up a built-in by name. `scaled-square` and `linear` are accepted
    /// aliases for `quad3` and `identity`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "identity" | "linear" => Ok(Self::identity()),
            "square" => Ok(Self::square()),
            "quad3" | "scaled-square" => Ok(Self::quad3()),
            "sin" => Ok(Self::sin()),
            "cos" => Ok(Self::cos()),
            "exp3" => Ok(Self::exp3()),
            other => Err(Error::UnknownTransform(other.to_string())),
        }
    }

    /// A user-supplied transform without an analytic derivative; derivatives
    /// use central finite differences.
    pub fn custom(name: impl Into<String>, func: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Transform {
            name: name.into(),
            func: Arc::new(func),
            deriv: None,
            linear: false,
        }
    }

    /// A user-supplied transform with its analytic derivative.
    pub fn custom_with_deriv(
        name: impl Into<String>,
        func: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Transform {
            name: name.into(),
            func: Arc::new(func),
            deriv: Some(Arc::new(deriv)),
            linear: false,
        }
    }

    fn builtin(name: &str, func: fn(f64) -> f64, deriv: fn(f64) -> f64, linear: bool) -> Self {
        Transform {
            name: name.to_string(),
            func: Arc::new(func),
            deriv: Some(Arc::new(deriv)),
            linear,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// True for transforms that are affine in their argument; used by the
    /// identifiability rule, which only counts linear covariate terms.
    pub fn is_linear(&self) -> bool {
        self.linear
    }

    pub fn is_identity(&self) -> bool {
        self.name == "identity"
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.func)(x)
    }

    /// Derivative at `x`: analytic when available, else central differences.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        if let Some(d) = &self.deriv {
            return Ok(d(x));
        }
        let h = FD_STEP * (1.0 + x.abs());
        let d = ((self.func)(x + h) - (self.func)(x - h)) / (2.0 * h);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Invalid(format!(
                "finite-difference derivative of `{}` is not finite at x = {x}",
                self.name
            )))
        }
    }

    /// Apply to a slice, producing a new vector.
    pub fn map(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}
