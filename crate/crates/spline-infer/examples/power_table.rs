//! Desk-scale Monte Carlo power table for the linearity test: rejection
//! rates across sample sizes and departure amplitudes. Scale up `REPS`
//! for tighter Monte Carlo error.
//!
//! ```bash
//! cargo run --release --example power_table
//! ```

use spline_infer::simharness::{run, Generator, InferenceTask, Scenario};

const REPS: usize = 100;

fn main() {
    println!(
        "linearity-test power, Gaussian responses, {} replications per cell (MC se <= {:.3})\n",
        REPS,
        0.5 / (REPS as f64).sqrt()
    );
    println!("   n \\ c      0.0      0.5      1.5");
    for n in [30usize, 70, 200] {
        print!("  {n:>4}   ");
        for c in [0.0, 0.5, 1.5] {
            let sc = Scenario {
                generator: Generator::LinearityC {
                    omega: 1.0,
                    logistic: false,
                    sigma: 0.05,
                },
                n,
                c,
                reps: REPS,
                seed: 20260810,
                inference: InferenceTask::Power {
                    alpha: 0.05,
                    q: 1,
                    basis: None,
                    lambda_grid: None,
                },
            };
            let report = run(&sc).expect("scenario runs");
            print!("  {:6.3}", report.rejection.unwrap().rate);
        }
        println!();
    }
    println!("\n(c = 0 is the size row; the nominal level is 0.05)");
}
