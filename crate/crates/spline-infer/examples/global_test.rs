//! Penalized likelihood-ratio test of a simple global hypothesis g = g0,
//! calibrated by its chi-square limit and by a seeded parametric
//! bootstrap.
//!
//! ```bash
//! cargo run --release --example global_test
//! ```

use std::sync::Arc;

use spline_infer::eigenbasis::EigenSystem;
use spline_infer::fitter::{fit_gaussian_auto, LambdaChoice};
use spline_infer::inference::{plrt, Calibration};
use spline_infer::models::ModelFamily;
use spline_infer::simharness::{generate, Generator, InferenceTask, Scenario};

fn main() {
    let scenario = Scenario {
        generator: Generator::CaseIBetaMix { sigma: 0.05 },
        n: 500,
        c: 0.0,
        reps: 1,
        seed: 1,
        inference: InferenceTask::Power {
            alpha: 0.05,
            q: 1,
            basis: None,
            lambda_grid: None,
        },
    };
    let data = generate(&scenario, 0);

    // The simple global test is evaluated deep in the undersmoothed regime:
    // its chi-square law drops the n lambda J(g0) shrinkage term, which for
    // this two-bump curve would dominate at GCV-scale smoothing.
    let es = Arc::new(EigenSystem::trig(2, 1.0, 301).unwrap());
    let auto = fit_gaussian_auto(&data, &es, &LambdaChoice::Fixed(1e-10)).unwrap();
    let fam = ModelFamily::Gaussian { sigma2: auto.sigma2 };
    let es_cal = auto.fit.eigensystem().clone();
    let lambda = auto.fit.lambda();

    // True hypothesis: the generating curve, projected onto the basis.
    let truth = es_cal.project(|z| scenario.generator.g0(0.0, z), 2048);
    // False hypothesis: the same curve damped by 20%.
    let damped = es_cal.project(|z| 0.8 * scenario.generator.g0(0.0, z), 2048);

    for (label, g0) in [("true curve", &truth), ("damped curve", &damped)] {
        let asym = plrt(&data, &fam, &es_cal, lambda, g0, 0.05, Calibration::Asymptotic).unwrap();
        let boot = plrt(
            &data,
            &fam,
            &es_cal,
            lambda,
            g0,
            0.05,
            Calibration::Bootstrap { reps: 500, seed: 99 },
        )
        .unwrap();
        println!(
            "H0 = {label:>12}: statistic {:9.3}, df = {:.2}, p_asym = {:.4}, p_boot = {:.4}, reject = {}",
            asym.statistic,
            asym.u_n.unwrap(),
            asym.p_value,
            boot.p_value,
            asym.reject
        );
    }
}
