//! Two-stage prediction: regress each exposure transform on the instruments,
//! then regress the outcome on the predicted transforms.
//!
//! Generates a dataset whose true effect of the exposure `X` on the outcome
//! is `(X/3)^2` with coefficient 1, fits the two-stage model, and tests the
//! joint null that all exposure coefficients are zero.
//!
//! Run with: `cargo run --example two_stage_prediction`

use nlmr::estimators::{fit_two_stage_prediction, ModelSpec};
use nlmr::simkit::{gen_dataset, CausalForm, Scenario};
use nlmr::Transform;

fn main() -> nlmr::Result<()> {
    // 5000 observations, instrument explaining 10% of exposure variance.
    let scenario = Scenario::new(CausalForm::Quad3, 5000, 0.10);
    let data = gen_dataset(&scenario, 42, 0)?;

    let spec = ModelSpec::gaussian(vec![Transform::quad3()]);
    let fit = fit_two_stage_prediction(&data, &spec)?;

    let n = data.exposure.len() as f64;
    let x_mean = data.exposure.mean();
    let var_x = data.exposure.iter().map(|x| (x - x_mean).powi(2)).sum::<f64>() / n;
    let var_d1 = fit.stage1.delta1.norm_squared() / n;

    println!("two-stage prediction on n = {} rows", fit.n);
    println!(
        "stage-1 R^2 (exposure on instruments + covariates): {:.4}",
        1.0 - var_d1 / var_x
    );
    for (name, (est, se)) in fit
        .w
        .labels()
        .iter()
        .zip(fit.b_hat.iter().zip(fit.se().iter()))
    {
        println!("  {name:12} {est:8.4}  (se {se:.4})");
    }
    println!("true exposure coefficient: 1.0");

    let test = fit.f_test()?;
    println!(
        "joint F test of the exposure terms: statistic {:.2}, p = {:.2e}",
        test.statistic, test.p_value
    );
    Ok(())
}
