//! Numerical quadrature: Gauss-Legendre rules and adaptive Simpson.

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are the roots of the degree-`n` Legendre polynomial, found by Newton
/// iteration from the Chebyshev initial guess. Exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence: (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let d = 0.5 * (a + b);
    (
        x.iter().map(|&t| c * t + d).collect(),
        w.iter().map(|&v| c * v).collect(),
    )
}

/// Composite Gauss-Legendre integral of `f` over `[a, b]` with `segments`
/// panels of `order` points each.
pub fn composite_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, order: usize, segments: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / segments as f64;
    let mut sum = 0.0;
    for s in 0..segments {
        let lo = a + s as f64 * h;
        let c = 0.5 * h;
        let d = lo + c;
        for (xi, wi) in x.iter().zip(&w) {
            sum += c * wi * f(c * xi + d);
        }
    }
    sum
}

/// Adaptive Simpson integration of `f` over the finite interval `[a, b]`
/// to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Integral of `f` over `[0, inf)` to absolute tolerance `tol`, via the
/// substitution `x = t / (1 - t)` onto the unit interval.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - t;
        f(t / one_minus) / (one_minus * one_minus)
    };
    // Split at t = 1/2 (x = 1), where integrands of the (1 + x^{2m})^{-l}
    // kind change character.
    adaptive_simpson(&g, 0.0, 0.5, 0.5 * tol) + adaptive_simpson(&g, 0.5, 1.0 - 1e-12, 0.5 * tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gl_exact_for_polynomials() {
        // 5-point rule integrates degree-9 polynomials exactly.
        let (x, w) = gauss_legendre_on(0.0, 1.0, 5);
        let val: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(9)).sum();
        assert_abs_diff_eq!(val, 0.1, epsilon = 1e-14);
        let total: f64 = w.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn simpson_hits_known_integral() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn half_line_gaussian_tail() {
        let v = integrate_half_line(|x| (-x * x).exp(), 1e-12);
        assert_abs_diff_eq!(v, 0.5 * std::f64::consts::PI.sqrt(), epsilon = 1e-9);
    }
}
