//! Likelihood-ratio test of a point value g(z0) = w0, with the scaled
//! chi-square(1) null law.
//!
//! ```bash
//! cargo run --release --example local_test
//! ```

use std::sync::Arc;

use spline_infer::eigenbasis::EigenSystem;
use spline_infer::fitter::{fit_gaussian_auto, log_grid, LambdaChoice};
use spline_infer::inference::local_lrt;
use spline_infer::models::ModelFamily;
use spline_infer::simharness::{generate, Generator, InferenceTask, Scenario};

fn main() {
    let scenario = Scenario {
        generator: Generator::CaseIBetaMix { sigma: 0.05 },
        n: 1000,
        c: 0.0,
        reps: 1,
        seed: 21,
        inference: InferenceTask::Power {
            alpha: 0.05,
            q: 1,
            basis: None,
            lambda_grid: None,
        },
    };
    let data = generate(&scenario, 0);

    let es = Arc::new(EigenSystem::trig(2, 1.0, 151).unwrap());
    let auto = fit_gaussian_auto(
        &data,
        &es,
        &LambdaChoice::Gcv {
            grid: log_grid(1e-8, 1.0, 40),
            undersmooth: Some(1.0),
        },
    )
    .unwrap();
    let fam = ModelFamily::Gaussian { sigma2: auto.sigma2 };
    let es_cal = auto.fit.eigensystem().clone();
    let lambda = auto.fit.lambda();

    let z0 = 0.25;
    let truth = scenario.generator.g0(0.0, z0);
    println!("testing at z0 = {z0}, true value {truth:.4}\n");

    for (label, w0) in [
        ("true value", truth),
        ("shifted by +0.05", truth + 0.05),
        ("shifted by +0.15", truth + 0.15),
    ] {
        let res = local_lrt(&data, &fam, &es_cal, lambda, z0, w0, 0.05).unwrap();
        println!(
            "H0: g(z0) = {w0:.4} ({label:>16}): statistic {:8.3}, p = {:.4}, reject = {}",
            res.statistic, res.p_value, res.reject
        );
    }

    let res = local_lrt(&data, &fam, &es_cal, lambda, z0, truth, 0.05).unwrap();
    println!("\nnull law: {:?} (Wilks phenomenon: scale-free of nuisance)", res.null_law);
}
