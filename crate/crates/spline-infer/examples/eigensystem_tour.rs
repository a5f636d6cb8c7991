//! Tour of the eigensystems behind every fit: the closed-form periodic
//! basis, the Galerkin construction for nonperiodic problems, the
//! reproducing-kernel series and the spectral constants used by the tests.
//!
//! ```bash
//! cargo run --release --example eigensystem_tour
//! ```

use spline_infer::eigenbasis::{asymptotic_il, EigenSystem, KernelEval};

fn main() {
    // Periodic trigonometric system, penalty order 2, unit scale.
    let trig = EigenSystem::trig(2, 1.0, 41).unwrap();
    println!("trig system: {} pairs, first eigenvalues:", trig.len());
    println!(
        "  {:?}",
        trig.gammas().iter().take(5).map(|g| g.round()).collect::<Vec<_>>()
    );

    // Nonperiodic system from the weighted eigenproblem; uniform weight
    // here, so the spectrum follows the natural-boundary growth law.
    let galerkin = EigenSystem::galerkin(|_| 1.0, |_| 1.0, 2, 160, 16).unwrap();
    println!(
        "galerkin system: null dimension {}, gamma_nu^(1/4)/pi for nu = 2..8:",
        galerkin.null_dim()
    );
    let freqs: Vec<f64> = (2..8)
        .map(|nu| galerkin.gamma(nu).powf(0.25) / std::f64::consts::PI)
        .collect();
    println!("  {freqs:.3?}   (approaches nu - 1/2)");
    println!(
        "  power-law slope: {:.4} (continuum constant pi = {:.4})",
        galerkin.power_law_slope().unwrap(),
        std::f64::consts::PI
    );

    // Kernel series at a small bandwidth.
    let ks = KernelEval::new(&trig, 1e-6).unwrap();
    println!("\nreproducing kernel at lambda = 1e-6 (h = {:.4}):", ks.h());
    println!(
        "  K(0.3, 0.3) = {:.4},  K(0.3, 0.7) = {:.4}",
        ks.value(0.3, 0.3).unwrap(),
        ks.value(0.3, 0.7).unwrap()
    );
    println!(
        "  restricted kernel pins its point: K*(0.5; 0.5, z) = {:.2e}",
        ks.restricted(0.5, 0.5, 0.31).unwrap()
    );

    // The constants driving the inference procedures.
    let sums = ks.spectral_sums();
    println!("\nspectral constants:");
    println!(
        "  c0 = Q2/Q1 = {:.4}  (limit I2/I1 = {:.4})",
        ks.q_ratio_c0(0.31).unwrap(),
        asymptotic_il(2, 2) / asymptotic_il(2, 1)
    );
    println!(
        "  r_K = {:.4} (limit 4/3), u_n h = {:.4} (limit 0.4714)",
        sums.r_k,
        sums.u_n * ks.h()
    );

    // Systems round-trip through a versioned JSON document.
    let doc = galerkin.to_json().unwrap();
    let back = EigenSystem::from_json(&doc).unwrap();
    println!(
        "\nJSON round trip: {} eigenpairs, document {} bytes",
        back.len(),
        doc.len()
    );
}
