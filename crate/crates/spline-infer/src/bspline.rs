//! Clamped B-spline bases on [0, 1] with derivative evaluation.
//!
//! Used as the discretization space for the generalized eigenproblem behind
//! nonperiodic eigensystems. Only uniform interior knots are needed there,
//! so the knot vector is always clamped-uniform.

/// A clamped B-spline basis of given degree on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    /// Basis of `degree` with `intervals` uniform knot panels on `[0, 1]`.
    pub fn uniform(degree: usize, intervals: usize) -> Self {
        assert!(intervals >= 1);
        let mut knots = Vec::with_capacity(intervals + 1 + 2 * degree);
        knots.extend(std::iter::repeat_n(0.0, degree));
        for i in 0..=intervals {
            knots.push(i as f64 / intervals as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree));
        Self { knots, degree }
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Breakpoints (unique knots), ascending.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &t in &self.knots {
            if out.last().is_none_or(|&l| t > l) {
                out.push(t);
            }
        }
        out
    }

    fn find_span(&self, z: f64) -> usize {
        let n = self.len() - 1;
        let p = self.degree;
        if z >= self.knots[n + 1] {
            return n;
        }
        if z <= self.knots[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if z < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values and derivatives (orders `0..=nders`) of the `degree + 1` basis
    /// functions that are nonzero at `z`.
    ///
    /// Returns `(start, ders)` where `ders[k][j]` is the k-th derivative of
    /// basis function `start + j` at `z`.
    pub fn eval_nonzero(&self, z: f64, nders: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let i = self.find_span(z);
        let t = &self.knots;
        let d = nders.min(p);

        // Knot-difference triangle (The NURBS Book, A2.3).
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = z - t[i + 1 - j];
            right[j] = t[i + j] - z;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; nders + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let mut s1 = 0;
            let mut s2 = 1;
            a[0][0] = 1.0;
            for k in 1..=d {
                let mut dv = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    dv = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    a[s2][j] =
                        (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    dv += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    dv += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = dv;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=d {
            for j in 0..=p {
                ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        (i - p, ders)
    }

    /// Value at `z` of the spline with coefficient vector `coefs`.
    pub fn spline_value(&self, coefs: &[f64], z: f64) -> f64 {
        debug_assert_eq!(coefs.len(), self.len());
        let (start, ders) = self.eval_nonzero(z, 0);
        ders[0]
            .iter()
            .enumerate()
            .map(|(j, b)| b * coefs[start + j])
            .sum()
    }

    /// Derivative of order `k` at `z` of the spline with coefficients `coefs`.
    pub fn spline_deriv(&self, coefs: &[f64], z: f64, k: usize) -> f64 {
        let (start, ders) = self.eval_nonzero(z, k);
        ders[k]
            .iter()
            .enumerate()
            .map(|(j, b)| b * coefs[start + j])
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn partition_of_unity() {
        let basis = BSplineBasis::uniform(3, 7);
        for i in 0..=50 {
            let z = i as f64 / 50.0;
            let (_, ders) = basis.eval_nonzero(z, 0);
            let sum: f64 = ders[0].iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let basis = BSplineBasis::uniform(3, 5);
        let n = basis.len();
        let coefs: Vec<f64> = (0..n).map(|j| ((j * 7 + 3) % 11) as f64 / 11.0).collect();
        let h = 1e-6;
        for &z in &[0.121, 0.377, 0.5, 0.801] {
            let d1 = basis.spline_deriv(&coefs, z, 1);
            let fd =
                (basis.spline_value(&coefs, z + h) - basis.spline_value(&coefs, z - h)) / (2.0 * h);
            assert_abs_diff_eq!(d1, fd, epsilon = 1e-5);
            let d2 = basis.spline_deriv(&coefs, z, 2);
            let fd2 = (basis.spline_value(&coefs, z + h) - 2.0 * basis.spline_value(&coefs, z)
                + basis.spline_value(&coefs, z - h))
                / (h * h);
            assert_abs_diff_eq!(d2, fd2, epsilon = 1e-3);
        }
    }

    #[test]
    fn reproduces_cubics_exactly() {
        // A clamped cubic basis contains all cubic polynomials; interpolate
        // z^3 at the Greville points and check exact reproduction.
        let basis = BSplineBasis::uniform(3, 4);
        let n = basis.len();
        // Greville abscissae give exact coefficients for linear functions only;
        // for z^3 solve the collocation system instead.
        let pts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut b = nalgebra::DVector::<f64>::zeros(n);
        for (r, &z) in pts.iter().enumerate() {
            let (start, ders) = basis.eval_nonzero(z, 0);
            for (j, &v) in ders[0].iter().enumerate() {
                a[(r, start + j)] = v;
            }
            b[r] = z * z * z;
        }
        let c = a.lu().solve(&b).unwrap();
        let coefs: Vec<f64> = c.iter().copied().collect();
        for i in 0..=20 {
            let z = i as f64 / 20.0;
            assert_abs_diff_eq!(basis.spline_value(&coefs, z), z * z * z, epsilon = 1e-10);
            assert_abs_diff_eq!(basis.spline_deriv(&coefs, z, 2), 6.0 * z, epsilon = 1e-8);
        }
    }
}
