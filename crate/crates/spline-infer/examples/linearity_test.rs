//! Composite test of polynomial structure: is the regression function a
//! straight line? Works for Gaussian and binary responses.
//!
//! ```bash
//! cargo run --release --example linearity_test
//! ```

use std::sync::Arc;

use spline_infer::eigenbasis::{default_truncation, EigenSystem};
use spline_infer::fitter::{fit_gaussian_auto, log_grid, LambdaChoice};
use spline_infer::inference::plrt_composite;
use spline_infer::models::ModelFamily;
use spline_infer::simharness::{generate, Generator, InferenceTask, Scenario};

fn scenario(c: f64, logistic: bool, n: usize) -> Scenario {
    Scenario {
        generator: Generator::LinearityC {
            omega: 1.0,
            logistic,
            sigma: 0.05,
        },
        n,
        c,
        reps: 1,
        seed: 13,
        inference: InferenceTask::Power {
            alpha: 0.05,
            q: 1,
            basis: None,
            lambda_grid: None,
        },
    }
}

fn main() {
    // Test bandwidth at the minimax-testing rate.
    let m = 2;
    println!("Gaussian responses (n = 300):");
    for c in [0.0, 0.3, 1.0] {
        let sc = scenario(c, false, 300);
        let data = generate(&sc, 0);
        let h = (sc.n as f64).powf(-2.0 / 9.0);
        let nb = default_truncation(sc.n, h, false);
        let es = Arc::new(EigenSystem::galerkin(|_| 1.0, |_| 1.0, m, 10 * nb, nb).unwrap());
        let pilot = fit_gaussian_auto(
            &data,
            &es,
            &LambdaChoice::Gcv {
                grid: log_grid(1e-7, 1.0, 30),
                undersmooth: None,
            },
        )
        .unwrap();
        let auto = fit_gaussian_auto(
            &data,
            &es,
            &LambdaChoice::Fixed(h.powi(4) * pilot.sigma2),
        )
        .unwrap();
        let fam = ModelFamily::Gaussian { sigma2: auto.sigma2 };
        let res =
            plrt_composite(&data, &fam, auto.fit.eigensystem(), auto.fit.lambda(), 1, 0.05)
                .unwrap();
        println!(
            "  departure c = {c:.1}: statistic {:9.3} vs chi2({:.2}), p = {:.4}, reject = {}",
            res.statistic,
            res.u_n.unwrap(),
            res.p_value,
            res.reject
        );
    }

    println!("\nBinary responses (n = 500):");
    for c in [0.0, 1.0, 2.0] {
        let sc = scenario(c, true, 500);
        let data = generate(&sc, 0);
        let h = (sc.n as f64).powf(-2.0 / 9.0);
        let nb = default_truncation(sc.n, h, false);
        let gen = sc.generator.clone();
        let es = Arc::new(
            EigenSystem::galerkin(
                move |z| {
                    let p = 1.0 / (1.0 + (-gen.g0(c, z)).exp());
                    p * (1.0 - p)
                },
                |_| 1.0,
                m,
                10 * nb,
                nb,
            )
            .unwrap(),
        );
        let res = plrt_composite(&data, &ModelFamily::Logistic, &es, h.powi(4), 1, 0.05).unwrap();
        println!(
            "  departure c = {c:.1}: statistic {:9.3} vs chi2({:.2}), p = {:.4}, reject = {}",
            res.statistic,
            res.u_n.unwrap(),
            res.p_value,
            res.reject
        );
    }
}
