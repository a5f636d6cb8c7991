//! Simultaneous confidence band over the interior of the design, from the
//! extreme-value limit of the sup deviation.
//!
//! ```bash
//! cargo run --release --example confidence_band
//! ```

use std::sync::Arc;

use spline_infer::eigenbasis::EigenSystem;
use spline_infer::fitter::{fit_gaussian_auto, log_grid, LambdaChoice};
use spline_infer::inference::{scb, DnMode};
use spline_infer::simharness::{generate, Generator, InferenceTask, Scenario};

fn main() {
    let scenario = Scenario {
        generator: Generator::CaseIISine { sigma: 0.05 },
        n: 1000,
        c: 0.0,
        reps: 1,
        seed: 3,
        inference: InferenceTask::Power {
            alpha: 0.05,
            q: 1,
            basis: None,
            lambda_grid: None,
        },
    };
    let data = generate(&scenario, 0);

    // The sine truth is not periodic, so use the Galerkin basis.
    let nb = 81;
    let es = Arc::new(EigenSystem::galerkin(|_| 1.0, |_| 1.0, 2, 10 * nb, nb).unwrap());
    let auto = fit_gaussian_auto(
        &data,
        &es,
        &LambdaChoice::Gcv {
            grid: log_grid(1e-8, 1e-2, 40),
            undersmooth: Some(1.0),
        },
    )
    .unwrap();

    for (label, mode) in [("sqrt(-2 log h)", DnMode::Simple), ("rho = 2 corner", DnMode::RhoTwo)] {
        let band = scb(&auto.fit, 0.05, 0.9, mode).unwrap();
        println!(
            "{label:>16}: half-width {:.4} on [{:.3}, {:.3}], h = {:.3}, d_n = {:.3}",
            band.half_width,
            band.grid.first().unwrap(),
            band.grid.last().unwrap(),
            band.h,
            band.d_n
        );
    }

    let band = scb(&auto.fit, 0.05, 0.9, DnMode::Simple).unwrap();
    let mut misses = 0usize;
    let mut worst: f64 = 0.0;
    for (z, center) in band.grid.iter().zip(&band.center) {
        let gap = (center - scenario.generator.g0(0.0, *z)).abs();
        worst = worst.max(gap);
        if gap > band.half_width {
            misses += 1;
        }
    }
    println!(
        "\ntruth inside the 95% band at {}/{} grid points (worst gap {:.4} vs half-width {:.4})",
        band.grid.len() - misses,
        band.grid.len(),
        worst,
        band.half_width
    );
}
