//! Criterion functions `l(y; a)` for the supported regression families,
//! with the first three partial derivatives in `a` and the Fisher
//! information `I(a) = -E[d2 l / da2]` at link value `a`.
//!
//! Every family is concave in `a`, which is what makes the damped-Newton
//! fitter globally convergent.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::adaptive_simpson;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown family name {0:?}")]
    UnknownFamily(String),
    #[error("gaussian variance must be positive, got {0}")]
    BadVariance(f64),
    #[error("gamma shape must be positive, got {0}")]
    BadShape(f64),
    #[error("({y}, {a}) is outside the domain of the {family} criterion")]
    OutOfDomain { family: String, y: f64, a: f64 },
    #[error(
        "derivative check failed for order {order} at (y, a) = ({y}, {a}): \
         analytic {analytic:.12e} vs finite-difference {numeric:.12e}"
    )]
    DerivativeMismatch {
        order: usize,
        y: f64,
        a: f64,
        analytic: f64,
        numeric: f64,
    },
}

/// User-supplied mean link and variance function for quasi-likelihood
/// regression. `dmean` is the derivative of `mean`.
#[derive(Clone)]
pub struct QuasiSpec {
    pub mean: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dmean: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub variance: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for QuasiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("QuasiSpec { .. }")
    }
}

/// A regression family: criterion, derivatives, information and mean link.
#[derive(Debug, Clone)]
pub enum ModelFamily {
    /// `l(y; a) = -(y - a)^2 / (2 sigma^2)`, information `1 / sigma^2`.
    Gaussian { sigma2: f64 },
    /// Bernoulli response: `l(y; a) = y a - log(1 + e^a)`.
    Logistic,
    /// `Y | Z ~ Gamma(shape alpha, rate e^g)`:
    /// `l(y; a) = alpha a + (alpha - 1) log y - y e^a`, information `alpha`.
    Gamma { alpha: f64 },
    /// Quasi-likelihood `Q(y; F(a))` with `Q(y; mu)` integrated from the
    /// mean-variance relation.
    Quasi(QuasiSpec),
}

/// Serializable family specification, as it appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilySpec {
    Gaussian {
        #[serde(default = "default_sigma2")]
        sigma2: f64,
    },
    Logistic,
    Gamma { alpha: f64 },
}

fn default_sigma2() -> f64 {
    1.0
}

/// Builds a family from its serializable spec.
pub fn make_family(spec: &FamilySpec) -> Result<ModelFamily, ModelError> {
    match *spec {
        FamilySpec::Gaussian { sigma2 } => {
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(ModelError::BadVariance(sigma2));
            }
            Ok(ModelFamily::Gaussian { sigma2 })
        }
        FamilySpec::Logistic => Ok(ModelFamily::Logistic),
        FamilySpec::Gamma { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(ModelError::BadShape(alpha));
            }
            Ok(ModelFamily::Gamma { alpha })
        }
    }
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Gaussian { .. } => "gaussian",
            ModelFamily::Logistic => "logistic",
            ModelFamily::Gamma { .. } => "gamma",
            ModelFamily::Quasi(_) => "quasi",
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, ModelFamily::Gaussian { .. })
    }

    /// Criterion value `l(y; a)`.
    pub fn loglik(&self, y: f64, a: f64) -> f64 {
        match self {
            ModelFamily::Gaussian { sigma2 } => -(y - a) * (y - a) / (2.0 * sigma2),
            ModelFamily::Logistic => y * a - softplus(a),
            ModelFamily::Gamma { alpha } => alpha * a + (alpha - 1.0) * y.ln() - y * a.exp(),
            ModelFamily::Quasi(q) => {
                let mu = (q.mean)(a);
                // Q(y; mu) = integral from y to mu of (y - s) / V(s) ds.
                // V may vanish at the response itself (binomial-type
                // variance at y = 0 or 1), where the integrand has a finite
                // limit; nudge that endpoint inward.
                let lo = y + 1e-9 * (mu - y);
                adaptive_simpson(&|s| (y - s) / (q.variance)(s), lo, mu, 1e-10)
            }
        }
    }

    /// First derivative in `a`.
    pub fn d1(&self, y: f64, a: f64) -> f64 {
        match self {
            ModelFamily::Gaussian { sigma2 } => (y - a) / sigma2,
            ModelFamily::Logistic => y - logistic(a),
            ModelFamily::Gamma { alpha } => alpha - y * a.exp(),
            ModelFamily::Quasi(q) => {
                let mu = (q.mean)(a);
                (y - mu) * (q.dmean)(a) / (q.variance)(mu)
            }
        }
    }

    /// Second derivative in `a`; nonpositive everywhere by concavity.
    pub fn d2(&self, y: f64, a: f64) -> f64 {
        match self {
            ModelFamily::Gaussian { sigma2 } => -1.0 / sigma2,
            ModelFamily::Logistic => {
                let p = logistic(a);
                -p * (1.0 - p)
            }
            ModelFamily::Gamma { .. } => -y * a.exp(),
            ModelFamily::Quasi(_) => self.fd_of_d1(y, a),
        }
    }

    /// Third derivative in `a`.
    pub fn d3(&self, y: f64, a: f64) -> f64 {
        match self {
            ModelFamily::Gaussian { .. } => 0.0,
            ModelFamily::Logistic => {
                let p = logistic(a);
                -p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            ModelFamily::Gamma { .. } => -y * a.exp(),
            ModelFamily::Quasi(_) => self.fd_of_d2(y, a),
        }
    }

    fn fd_of_d1(&self, y: f64, a: f64) -> f64 {
        let h = 1e-6;
        (self.d1(y, a + h) - self.d1(y, a - h)) / (2.0 * h)
    }

    fn fd_of_d2(&self, y: f64, a: f64) -> f64 {
        let h = 1e-5;
        (self.d2(y, a + h) - self.d2(y, a - h)) / (2.0 * h)
    }

    /// Fisher information `I(a) = -E[d2 | link value a]`.
    pub fn info(&self, a: f64) -> f64 {
        match self {
            ModelFamily::Gaussian { sigma2 } => 1.0 / sigma2,
            ModelFamily::Logistic => {
                let p = logistic(a);
                p * (1.0 - p)
            }
            // E[Y e^a] = alpha e^{-a} e^a = alpha
            ModelFamily::Gamma { alpha } => *alpha,
            ModelFamily::Quasi(q) => {
                let d = (q.dmean)(a);
                d * d / (q.variance)((q.mean)(a))
            }
        }
    }

    /// Conditional mean `F(a)`.
    pub fn mean(&self, a: f64) -> f64 {
        match self {
            ModelFamily::Gaussian { .. } => a,
            ModelFamily::Logistic => logistic(a),
            ModelFamily::Gamma { alpha } => alpha * (-a).exp(),
            ModelFamily::Quasi(q) => (q.mean)(a),
        }
    }

    /// Whether `(y, a)` lies in the criterion's domain.
    pub fn in_domain(&self, y: f64, _a: f64) -> bool {
        match self {
            ModelFamily::Gaussian { .. } => y.is_finite(),
            ModelFamily::Logistic => y == 0.0 || y == 1.0,
            ModelFamily::Gamma { .. } => y > 0.0,
            ModelFamily::Quasi(_) => y.is_finite(),
        }
    }

    /// Natural-parameter value whose mean matches `ybar`; used to seed the
    /// Newton iteration at the null-space projection of a constant.
    pub fn link_of_mean(&self, ybar: f64) -> f64 {
        match self {
            ModelFamily::Gaussian { .. } => ybar,
            ModelFamily::Logistic => {
                let p = ybar.clamp(0.02, 0.98);
                (p / (1.0 - p)).ln()
            }
            ModelFamily::Gamma { alpha } => (alpha / ybar.max(1e-12)).ln(),
            ModelFamily::Quasi(_) => 0.0,
        }
    }
}

fn logistic(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// `log(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// Report from [`derivatives_check`]: analytic and finite-difference values
/// for the first three derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct DerivReport {
    pub y: f64,
    pub a: f64,
    pub analytic: [f64; 3],
    pub numeric: [f64; 3],
}

/// Central finite differences at step `1e-5`, each order checked against the
/// analytic derivative one level up (`l -> d1`, `d1 -> d2`, `d2 -> d3`), to
/// relative `1e-6` scaled by magnitude.
pub fn derivatives_check(fam: &ModelFamily, y: f64, a: f64) -> Result<DerivReport, ModelError> {
    if !fam.in_domain(y, a) {
        return Err(ModelError::OutOfDomain {
            family: fam.name().to_string(),
            y,
            a,
        });
    }
    let h = 1e-5;
    let numeric = [
        (fam.loglik(y, a + h) - fam.loglik(y, a - h)) / (2.0 * h),
        (fam.d1(y, a + h) - fam.d1(y, a - h)) / (2.0 * h),
        (fam.d2(y, a + h) - fam.d2(y, a - h)) / (2.0 * h),
    ];
    let analytic = [fam.d1(y, a), fam.d2(y, a), fam.d3(y, a)];
    for k in 0..3 {
        let scale = 1.0 + analytic[k].abs().max(numeric[k].abs());
        if (analytic[k] - numeric[k]).abs() > 1e-6 * scale {
            return Err(ModelError::DerivativeMismatch {
                order: k + 1,
                y,
                a,
                analytic: analytic[k],
                numeric: numeric[k],
            });
        }
    }
    Ok(DerivReport {
        y,
        a,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_distr::Distribution;

    #[test]
    fn info_closed_forms() {
        let logistic = ModelFamily::Logistic;
        assert_abs_diff_eq!(logistic.info(0.0), 0.25, epsilon = 1e-15);
        let gaussian = make_family(&FamilySpec::Gaussian { sigma2: 0.05 * 0.05 }).unwrap();
        assert_abs_diff_eq!(gaussian.info(1.7), 400.0, epsilon = 1e-9);
        let gamma = make_family(&FamilySpec::Gamma { alpha: 2.0 }).unwrap();
        assert_abs_diff_eq!(gamma.info(-0.3), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn make_family_rejects_bad_parameters() {
        assert!(make_family(&FamilySpec::Gaussian { sigma2: 0.0 }).is_err());
        assert!(make_family(&FamilySpec::Gamma { alpha: -1.0 }).is_err());
        let text = r#"{"family":"poisson"}"#;
        assert!(serde_json::from_str::<FamilySpec>(text).is_err());
        let text = r#"{"family":"logistic"}"#;
        assert_eq!(
            serde_json::from_str::<FamilySpec>(text).unwrap(),
            FamilySpec::Logistic
        );
    }

    #[test]
    fn score_values_at_reference_points() {
        let logistic = ModelFamily::Logistic;
        assert_abs_diff_eq!(logistic.d1(1.0, 0.0), 0.5, epsilon = 1e-15);
        let gamma = ModelFamily::Gamma { alpha: 2.0 };
        // score zero at y = alpha e^{-g}
        assert_abs_diff_eq!(gamma.d1(2.0, 0.0), 0.0, epsilon = 1e-15);
        let gaussian = ModelFamily::Gaussian { sigma2: 4.0 };
        assert_abs_diff_eq!(gaussian.d1(3.0, 1.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn derivative_check_passes_on_grids() {
        let families = [
            ModelFamily::Gaussian { sigma2: 0.25 },
            ModelFamily::Logistic,
            ModelFamily::Gamma { alpha: 2.0 },
        ];
        for fam in &families {
            for iy in 0..6 {
                for ia in 0..6 {
                    let a = -1.5 + ia as f64 * 0.6;
                    let y = match fam {
                        ModelFamily::Logistic => (iy % 2) as f64,
                        ModelFamily::Gamma { .. } => 0.2 + iy as f64 * 0.8,
                        _ => -2.0 + iy as f64 * 0.8,
                    };
                    derivatives_check(fam, y, a).unwrap();
                }
            }
        }
    }

    #[test]
    fn derivative_check_reports_domain_errors() {
        assert!(matches!(
            derivatives_check(&ModelFamily::Logistic, 0.5, 0.0),
            Err(ModelError::OutOfDomain { .. })
        ));
        assert!(matches!(
            derivatives_check(&ModelFamily::Gamma { alpha: 1.0 }, -1.0, 0.0),
            Err(ModelError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn concavity_on_sampling_grid() {
        let families = [
            ModelFamily::Gaussian { sigma2: 1.0 },
            ModelFamily::Logistic,
            ModelFamily::Gamma { alpha: 1.5 },
        ];
        for fam in &families {
            for iy in 0..100 {
                for ia in 0..100 {
                    let a = -3.0 + 6.0 * ia as f64 / 99.0;
                    let y = match fam {
                        ModelFamily::Logistic => (iy % 2) as f64,
                        ModelFamily::Gamma { .. } => 0.05 + 4.0 * iy as f64 / 99.0,
                        _ => -3.0 + 6.0 * iy as f64 / 99.0,
                    };
                    assert!(fam.d2(y, a) <= 0.0, "{} d2 > 0", fam.name());
                }
            }
        }
    }

    /// Model-error moments: E[d1(Y; g0)] = 0 and E[d1^2] = info(g0),
    /// Monte Carlo at three link values with 1e6 draws, within 3 SE.
    #[test]
    fn score_moments_by_monte_carlo() {
        let n = 1_000_000usize;
        let links = [-0.8, 0.0, 1.1];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);

        for &g in &links {
            // Gaussian
            let fam = ModelFamily::Gaussian { sigma2: 0.09 };
            let normal = rand_distr::Normal::new(g, 0.3).unwrap();
            check_moments(&fam, g, n, || normal.sample(&mut rng));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for &g in &links {
            let fam = ModelFamily::Logistic;
            let p = 1.0 / (1.0 + (-g as f64).exp());
            check_moments(&fam, g, n, || {
                if rand::Rng::random::<f64>(&mut rng) < p {
                    1.0
                } else {
                    0.0
                }
            });
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        for &g in &links {
            let alpha = 2.0;
            let fam = ModelFamily::Gamma { alpha };
            // shape alpha, rate e^g  =>  scale e^{-g}
            let dist = rand_distr::Gamma::new(alpha, (-g as f64).exp()).unwrap();
            check_moments(&fam, g, n, || dist.sample(&mut rng));
        }
    }

    fn check_moments(fam: &ModelFamily, g: f64, n: usize, mut draw: impl FnMut() -> f64) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let eps = fam.d1(draw(), g);
            s1 += eps;
            s2 += eps * eps;
        }
        let mean = s1 / n as f64;
        let mean_sq = s2 / n as f64;
        let info = fam.info(g);
        // Var(eps) = info, so SE(mean) = sqrt(info / n); fourth-moment bound
        // 3 info^2 gives a serviceable SE for the second moment.
        let se1 = (info / n as f64).sqrt();
        let se2 = (3.0 * info * info / n as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se1,
            "{}: E[score] = {mean:.3e} exceeds 3 SE = {:.3e} at g = {g}",
            fam.name(),
            3.0 * se1
        );
        assert_relative_eq!(mean_sq, info, max_relative = 3.0 * se2 / info);
    }

    #[test]
    fn quasi_family_reduces_to_logistic() {
        let quasi = ModelFamily::Quasi(QuasiSpec {
            mean: Arc::new(|a: f64| 1.0 / (1.0 + (-a).exp())),
            dmean: Arc::new(|a: f64| {
                let p = 1.0 / (1.0 + (-a).exp());
                p * (1.0 - p)
            }),
            variance: Arc::new(|mu: f64| mu * (1.0 - mu)),
        });
        let logistic = ModelFamily::Logistic;
        for &(y, a) in &[(1.0, 0.4), (0.0, -0.9), (1.0, 1.3)] {
            assert_abs_diff_eq!(quasi.d1(y, a), logistic.d1(y, a), epsilon = 1e-10);
            assert_abs_diff_eq!(quasi.info(a), logistic.info(a), epsilon = 1e-10);
            // Q(y; mu) differs from log p(y; mu) by a function of y only;
            // differences of criterion values must agree.
            let dq = quasi.loglik(y, a) - quasi.loglik(y, 0.1);
            let dl = logistic.loglik(y, a) - logistic.loglik(y, 0.1);
            assert_abs_diff_eq!(dq, dl, epsilon = 1e-7);
        }
    }
}
