//! Binary outcomes: the control function carries over to a logistic second
//! stage — stage 1 stays linear, stage 2 becomes a penalty-free logistic
//! regression on the exposure transforms and the stage-1 residual, and the
//! covariance accounts for the estimated residual.
//!
//! Run with: `cargo run --example binary_outcome`

use nlmr::estimators::{fit_control_function_binary, ModelSpec};
use nlmr::simkit::{gen_dataset, CausalForm, Scenario};
use nlmr::{Family, Transform};

fn main() -> nlmr::Result<()> {
    let scenario = Scenario::new(CausalForm::Sin, 10000, 0.10).with_family(Family::Binomial);
    let data = gen_dataset(&scenario, 5, 0)?;

    let cases = data.outcome.iter().filter(|&&y| y == 1.0).count();
    println!(
        "binary outcome: {cases} cases / {} controls",
        data.outcome.len() - cases
    );

    let spec = ModelSpec::gaussian(vec![Transform::sin()]).with_family(Family::Binomial);
    let fit = fit_control_function_binary(&data, &spec)?;

    println!("true log-odds effect of sin(x): 1.0");
    for (name, (est, se)) in fit
        .w
        .labels()
        .iter()
        .zip(fit.b_hat.iter().zip(fit.se().iter()))
    {
        println!("  {name:14} {est:8.4}  (se {se:.4})");
    }

    let p = fit.fitted_probabilities().unwrap();
    let (lo, hi) = p
        .iter()
        .fold((1.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("fitted event probabilities span [{lo:.3}, {hi:.3}]");

    let test = fit.f_test()?;
    println!("joint test of the exposure terms: p = {:.2e}", test.p_value);
    Ok(())
}
