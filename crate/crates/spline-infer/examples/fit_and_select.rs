//! Fit a penalized spline to noisy two-bump data, choosing the smoothing
//! parameter by GCV and recalibrating to the estimated noise scale.
//!
//! ```bash
//! cargo run --release --example fit_and_select
//! ```

use std::sync::Arc;

use spline_infer::eigenbasis::EigenSystem;
use spline_infer::fitter::{fit_gaussian_auto, log_grid, LambdaChoice};
use spline_infer::simharness::{generate, Generator, InferenceTask, Scenario};

fn main() {
    let scenario = Scenario {
        generator: Generator::CaseIBetaMix { sigma: 0.05 },
        n: 500,
        c: 0.0,
        reps: 1,
        seed: 7,
        inference: InferenceTask::Power {
            alpha: 0.05,
            q: 1,
            basis: None,
            lambda_grid: None,
        },
    };
    let data = generate(&scenario, 0);

    let es = Arc::new(EigenSystem::trig(2, 1.0, 101).unwrap());
    let auto = fit_gaussian_auto(
        &data,
        &es,
        &LambdaChoice::Gcv {
            grid: log_grid(1e-8, 1.0, 40),
            undersmooth: None,
        },
    )
    .unwrap();

    println!(
        "n = {}, GCV pick lambda~ = {:.3e}, sigma-hat = {:.4} (truth 0.05)",
        data.len(),
        auto.raw_lambda_gcv,
        auto.sigma2.sqrt()
    );
    println!(
        "calibrated fit: lambda = {:.3e}, h = {:.3}, trace A = {:.2}, converged = {}",
        auto.fit.lambda(),
        auto.fit.h(),
        auto.fit.trace_a(),
        auto.fit.converged()
    );

    println!("\n z     truth    fitted");
    for i in 0..=10 {
        let z = i as f64 / 10.0;
        println!(
            " {:.2}  {:7.4}  {:7.4}",
            z,
            scenario.generator.g0(0.0, z),
            auto.fit.eval(z)
        );
    }

    println!("\nfit document:\n{}", auto.fit.to_json());
}
