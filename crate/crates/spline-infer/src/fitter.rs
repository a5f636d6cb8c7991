//! Penalized maximum-likelihood fitting in an eigenbasis.
//!
//! With `g = sum_nu c_nu h_nu` the objective becomes
//! `(1/n) sum_i l(y_i; x_i' c) - (lambda/2) sum_nu gamma_nu c_nu^2`,
//! a concave problem solved in one linear solve for the Gaussian family and
//! by damped Newton (penalized IRLS) otherwise. Smoothing-parameter search
//! uses GCV; the Gaussian grid search runs off a single symmetric
//! eigendecomposition so the per-lambda cost is linear in the basis size.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::eigenbasis::{BasisError, EigenSystem};
use crate::models::ModelFamily;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("z and y must have equal positive length (got {nz} and {ny})")]
    ShapeMismatch { nz: usize, ny: usize },
    #[error("covariate out of [0, 1] at row {row}: z = {value}")]
    CovariateOutOfDomain { row: usize, value: f64 },
    #[error("response outside the {family} domain at row {row}: y = {value}")]
    ResponseOutOfDomain {
        family: &'static str,
        row: usize,
        value: f64,
    },
    #[error("need at least {need} observations for this basis, got {n}")]
    TooFewPoints { n: usize, need: usize },
    #[error("smoothing parameter must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error(
        "Newton did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})"
    )]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("coefficients diverged (norm {norm:.3e}); data may be separable")]
    Separation { norm: f64 },
    #[error("normal equations are singular at lambda = {lambda:.3e}")]
    SingularSystem { lambda: f64 },
    #[error("constraint vector vanishes at z0 = {z0}")]
    DegenerateConstraint { z0: f64 },
    #[error("every fit on the lambda grid failed; last error: {last}")]
    AllFitsFailed { last: String },
    #[error("empty lambda grid")]
    EmptyGrid,
    #[error("effective degrees of freedom {trace:.3} reach the sample size {n}")]
    TraceExceedsN { trace: f64, n: usize },
    #[error("residual scale is only defined for the gaussian family")]
    NotGaussian,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Paired observations with covariates in the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(z: Vec<f64>, y: Vec<f64>) -> Result<Self, FitError> {
        if z.is_empty() || z.len() != y.len() {
            return Err(FitError::ShapeMismatch {
                nz: z.len(),
                ny: y.len(),
            });
        }
        for (i, &zi) in z.iter().enumerate() {
            if !(0.0..=1.0).contains(&zi) || !zi.is_finite() {
                return Err(FitError::CovariateOutOfDomain {
                    row: i + 1,
                    value: zi,
                });
            }
        }
        Ok(Self { z, y })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }
}

/// A converged penalized fit.
#[derive(Debug, Clone)]
pub struct FittedSpline {
    es: Arc<EigenSystem>,
    family: ModelFamily,
    coeffs: DVector<f64>,
    lambda: f64,
    h: f64,
    n: usize,
    trace_a: f64,
    sigma2_hat: Option<f64>,
    iterations: usize,
    converged: bool,
    objective: f64,
}

#[derive(Serialize)]
struct FittedSplineDoc<'a> {
    lambda: f64,
    h: f64,
    coeffs: &'a [f64],
    #[serde(rename = "traceA")]
    trace_a: f64,
    sigma2hat: Option<f64>,
    converged: bool,
}

impl FittedSpline {
    pub fn eval(&self, z: f64) -> f64 {
        self.es.expand(&self.coeffs, z)
    }

    pub fn eval_many(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().map(|&z| self.eval(z)).collect()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn eigensystem(&self) -> &Arc<EigenSystem> {
        &self.es
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Bandwidth `h = lambda^{1/(2m)}`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Effective degrees of freedom, the trace of the smoothing matrix.
    pub fn trace_a(&self) -> f64 {
        self.trace_a
    }

    /// Residual variance estimate; `None` outside the gaussian family.
    pub fn sigma2_hat(&self) -> Option<f64> {
        self.sigma2_hat
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Penalized objective value at the optimum.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// The roughness penalty `J(g, g) = sum_nu gamma_nu c_nu^2`.
    pub fn penalty(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.es.gammas())
            .map(|(c, g)| c * c * g)
            .sum()
    }

    pub fn to_json(&self) -> String {
        let doc = FittedSplineDoc {
            lambda: self.lambda,
            h: self.h,
            coeffs: self.coeffs.as_slice(),
            trace_a: self.trace_a,
            sigma2hat: self.sigma2_hat,
            converged: self.converged,
        };
        serde_json::to_string_pretty(&doc).expect("fit serialization cannot fail")
    }
}

/// A fit under the hard restriction `g(z0) = w0`.
#[derive(Debug, Clone)]
pub struct ConstrainedFit {
    pub fit: FittedSpline,
    pub z0: f64,
    pub w0: f64,
}

fn validate(
    data: &Dataset,
    fam: &ModelFamily,
    es: &EigenSystem,
    lambda: f64,
) -> Result<(), FitError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FitError::BadLambda(lambda));
    }
    let need = 2 * es.null_dim().max(1);
    if data.len() < need {
        return Err(FitError::TooFewPoints {
            n: data.len(),
            need,
        });
    }
    for (i, &y) in data.y.iter().enumerate() {
        if !fam.in_domain(y, 0.0) {
            return Err(FitError::ResponseOutOfDomain {
                family: fam.name(),
                row: i + 1,
                value: y,
            });
        }
    }
    Ok(())
}

/// Penalized objective `(1/n) sum l(y_i; a_i) - (lambda/2) sum gamma c^2`.
fn objective(
    fam: &ModelFamily,
    y: &[f64],
    a: &DVector<f64>,
    coeffs: &DVector<f64>,
    gammas: &[f64],
    lambda: f64,
) -> f64 {
    let n = y.len() as f64;
    let mut obj = 0.0;
    for (yi, ai) in y.iter().zip(a.iter()) {
        obj += fam.loglik(*yi, *ai);
    }
    obj /= n;
    let pen: f64 = coeffs.iter().zip(gammas).map(|(c, g)| c * c * g).sum();
    obj - 0.5 * lambda * pen
}

struct NewtonOutcome {
    coeffs: DVector<f64>,
    iterations: usize,
}

/// Damped Newton ascent of the penalized objective over `c = c0 + basis * t`
/// (with `basis` absent for unconstrained fits). The step is halved until
/// the objective stops decreasing, which keeps the iteration monotone on
/// the concave criteria handled here.
fn newton(
    fam: &ModelFamily,
    x: &DMatrix<f64>,
    y: &[f64],
    gammas: &[f64],
    lambda: f64,
    c0: DVector<f64>,
    reduction: Option<&DMatrix<f64>>,
    grad_tol: f64,
) -> Result<NewtonOutcome, FitError> {
    let n = y.len();
    let nf = n as f64;
    let dim = reduction.map_or(x.ncols(), |z| z.ncols());
    let mut t = DVector::<f64>::zeros(dim);
    let coeffs_of = |t: &DVector<f64>| -> DVector<f64> {
        match reduction {
            Some(z) => &c0 + z * t,
            None => &c0 + t,
        }
    };

    let mut c = coeffs_of(&t);
    let mut a = x * &c;
    let mut obj = objective(fam, y, &a, &c, gammas, lambda);
    let mut grad_norm = f64::INFINITY;

    for iter in 0..100 {
        let mut score = DVector::<f64>::zeros(n);
        for i in 0..n {
            score[i] = fam.d1(y[i], a[i]);
        }
        let mut grad_c = x.tr_mul(&score) / nf;
        for (k, g) in gammas.iter().enumerate() {
            grad_c[k] -= lambda * g * c[k];
        }
        let grad = match reduction {
            Some(z) => z.tr_mul(&grad_c),
            None => grad_c,
        };
        grad_norm = grad.amax();
        if grad_norm <= grad_tol {
            return Ok(NewtonOutcome {
                coeffs: c,
                iterations: iter,
            });
        }

        // Hessian of the negative objective: X' W X / n + lambda Gamma.
        let mut xw = x.clone();
        for i in 0..n {
            let w = -fam.d2(y[i], a[i]);
            for j in 0..x.ncols() {
                xw[(i, j)] *= w;
            }
        }
        let mut hess_c = x.tr_mul(&xw) / nf;
        for (k, g) in gammas.iter().enumerate() {
            hess_c[(k, k)] += lambda * g;
        }
        let hess = match reduction {
            Some(z) => z.tr_mul(&(&hess_c * z)),
            None => hess_c,
        };
        let chol = nalgebra::Cholesky::new(hess).ok_or(FitError::SingularSystem { lambda })?;
        let step = chol.solve(&grad);

        // Step halving: never accept a decrease of the objective.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let t_new = &t + &step * scale;
            let c_new = coeffs_of(&t_new);
            let a_new = x * &c_new;
            let obj_new = objective(fam, y, &a_new, &c_new, gammas, lambda);
            if obj_new >= obj || (obj - obj_new) <= 1e-14 * (1.0 + obj.abs()) {
                t = t_new;
                c = c_new;
                a = a_new;
                obj = obj_new.max(obj);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        let norm = c.norm();
        if norm > 1e6 {
            return Err(FitError::Separation { norm });
        }
    }
    Err(FitError::NonConvergence {
        iterations: 100,
        grad_norm,
    })
}

/// Starting point: the null-space least-squares projection of the constant
/// link value matching the sample mean.
fn initial_coeffs(
    fam: &ModelFamily,
    es: &EigenSystem,
    x: &DMatrix<f64>,
    data: &Dataset,
) -> DVector<f64> {
    let p = es.len();
    let mut c = DVector::<f64>::zeros(p);
    let k = es.null_dim();
    if k == 0 {
        return c;
    }
    let a0 = fam.link_of_mean(data.mean_y());
    let xn = x.columns(0, k).clone_owned();
    let rhs = DVector::from_element(data.len(), a0);
    let gram = xn.tr_mul(&xn);
    let b = xn.tr_mul(&rhs);
    if let Some(sol) = gram.lu().solve(&b) {
        for j in 0..k {
            c[j] = sol[j];
        }
    }
    c
}

fn weighted_gram(x: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut xw = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            xw[(i, j)] *= weights[i];
        }
    }
    x.tr_mul(&xw) / n
}

fn trace_smoother(g: &DMatrix<f64>, gammas: &[f64], lambda: f64) -> Result<f64, FitError> {
    let mut h = g.clone();
    for (k, gm) in gammas.iter().enumerate() {
        h[(k, k)] += lambda * gm;
    }
    let chol = nalgebra::Cholesky::new(h).ok_or(FitError::SingularSystem { lambda })?;
    Ok(chol.solve(g).trace())
}

/// Maximizes the penalized likelihood at fixed `lambda`.
///
/// The Gaussian family reduces to one ridge solve; other families run the
/// damped Newton iteration. The returned fit records the smoothing-matrix
/// trace and, for Gaussian data, the residual scale estimate.
pub fn fit(
    data: &Dataset,
    fam: &ModelFamily,
    es: &Arc<EigenSystem>,
    lambda: f64,
) -> Result<FittedSpline, FitError> {
    validate(data, fam, es, lambda)?;
    let x = es.design_matrix(&data.z);
    let n = data.len();
    let nf = n as f64;
    let y_scale = 1.0 + data.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gammas = es.gammas();

    let (coeffs, iterations) = if let ModelFamily::Gaussian { sigma2 } = fam {
        let w = 1.0 / sigma2;
        let g = x.tr_mul(&x) * (w / nf);
        let yv = DVector::from_column_slice(&data.y);
        let b = x.tr_mul(&yv) * (w / nf);
        let mut h = g;
        for (k, gm) in gammas.iter().enumerate() {
            h[(k, k)] += lambda * gm;
        }
        let chol = nalgebra::Cholesky::new(h).ok_or(FitError::SingularSystem { lambda })?;
        (chol.solve(&b), 1)
    } else {
        let start = initial_coeffs(fam, es, &x, data);
        let out = newton(
            fam,
            &x,
            &data.y,
            gammas,
            lambda,
            start,
            None,
            1e-10 * y_scale,
        )?;
        (out.coeffs, out.iterations)
    };

    finish_fit(data, fam, es, lambda, &x, coeffs, iterations, y_scale)
}

#[allow(clippy::too_many_arguments)]
fn finish_fit(
    data: &Dataset,
    fam: &ModelFamily,
    es: &Arc<EigenSystem>,
    lambda: f64,
    x: &DMatrix<f64>,
    coeffs: DVector<f64>,
    iterations: usize,
    y_scale: f64,
) -> Result<FittedSpline, FitError> {
    let n = data.len();
    let nf = n as f64;
    let gammas = es.gammas();
    let a = x * &coeffs;

    // Stationarity of the penalized objective at the returned coefficients.
    let mut score = DVector::<f64>::zeros(n);
    for i in 0..n {
        score[i] = fam.d1(data.y[i], a[i]);
    }
    let mut grad = x.tr_mul(&score) / nf;
    for (k, g) in gammas.iter().enumerate() {
        grad[k] -= lambda * g * coeffs[k];
    }
    let grad_norm = grad.amax();
    if grad_norm > 1e-8 * y_scale {
        return Err(FitError::NonConvergence {
            iterations,
            grad_norm,
        });
    }

    let weights: Vec<f64> = match fam {
        ModelFamily::Gaussian { sigma2 } => vec![1.0 / sigma2; n],
        _ => (0..n).map(|i| -fam.d2(data.y[i], a[i])).collect(),
    };
    let trace_a = trace_smoother(&weighted_gram(x, &weights), gammas, lambda)?;

    let sigma2_hat = if fam.is_gaussian() && nf - trace_a > 1e-8 {
        let rss: f64 = data
            .y
            .iter()
            .zip(a.iter())
            .map(|(yi, ai)| (yi - ai) * (yi - ai))
            .sum();
        Some(rss / (nf - trace_a))
    } else {
        None
    };

    let obj = objective(fam, &data.y, &a, &coeffs, gammas, lambda);
    Ok(FittedSpline {
        es: es.clone(),
        family: fam.clone(),
        coeffs,
        lambda,
        h: lambda.powf(1.0 / (2.0 * es.m() as f64)),
        n,
        trace_a,
        sigma2_hat,
        iterations,
        converged: true,
        objective: obj,
    })
}

/// Maximizes the penalized likelihood subject to `g(z0) = w0`, eliminating
/// one coordinate along the constraint vector `(h_nu(z0))_nu` through a
/// Householder reflection.
pub fn fit_constrained(
    data: &Dataset,
    fam: &ModelFamily,
    es: &Arc<EigenSystem>,
    lambda: f64,
    z0: f64,
    w0: f64,
) -> Result<ConstrainedFit, FitError> {
    validate(data, fam, es, lambda)?;
    if !(0.0..=1.0).contains(&z0) {
        return Err(FitError::CovariateOutOfDomain { row: 0, value: z0 });
    }
    if !w0.is_finite() {
        return Err(FitError::ResponseOutOfDomain {
            family: fam.name(),
            row: 0,
            value: w0,
        });
    }
    let p = es.len();
    let mut a_vec = DVector::<f64>::zeros(p);
    {
        let mut row = vec![0.0; p];
        es.eval_row(z0, &mut row);
        for (j, &v) in row.iter().enumerate() {
            a_vec[j] = v;
        }
    }
    let a_norm = a_vec.norm();
    if a_norm <= 1e-12 {
        return Err(FitError::DegenerateConstraint { z0 });
    }

    // Householder reflector mapping the constraint vector onto a multiple of
    // e1; the trailing p-1 columns of the reflection span its orthogonal
    // complement.
    let mut u = a_vec.clone();
    let sign = if a_vec[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign * a_norm;
    let uu = u.norm_squared();
    let mut reflect = DMatrix::<f64>::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            reflect[(i, j)] -= 2.0 * u[i] * u[j] / uu;
        }
    }
    let z_basis = reflect.columns(1, p - 1).clone_owned();
    let c_part = &a_vec * (w0 / (a_norm * a_norm));

    let x = es.design_matrix(&data.z);
    let y_scale = 1.0 + data.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gammas = es.gammas();
    let nf = data.len() as f64;

    let coeffs = if let ModelFamily::Gaussian { sigma2 } = fam {
        let w = 1.0 / sigma2;
        let g = x.tr_mul(&x) * (w / nf);
        let yv = DVector::from_column_slice(&data.y);
        let b = x.tr_mul(&yv) * (w / nf);
        let mut h = g;
        for (k, gm) in gammas.iter().enumerate() {
            h[(k, k)] += lambda * gm;
        }
        let rhs = z_basis.tr_mul(&(&b - &h * &c_part));
        let hred = z_basis.tr_mul(&(&h * &z_basis));
        let chol = nalgebra::Cholesky::new(hred).ok_or(FitError::SingularSystem { lambda })?;
        let t = chol.solve(&rhs);
        &c_part + &z_basis * t
    } else {
        let out = newton(
            fam,
            &x,
            &data.y,
            gammas,
            lambda,
            c_part.clone(),
            Some(&z_basis),
            1e-10 * y_scale,
        )?;
        out.coeffs
    };

    let fitted_w0 = es.expand(&coeffs, z0);
    debug_assert!(
        (fitted_w0 - w0).abs() <= 1e-10 * (1.0 + w0.abs()),
        "constraint residual {} at z0 = {z0}",
        fitted_w0 - w0
    );

    let n = data.len();
    let a = &x * &coeffs;
    let weights: Vec<f64> = match fam {
        ModelFamily::Gaussian { sigma2 } => vec![1.0 / sigma2; n],
        _ => (0..n).map(|i| -fam.d2(data.y[i], a[i])).collect(),
    };
    // Effective degrees of freedom of the reduced-space smoother.
    let g_full = weighted_gram(&x, &weights);
    let mut h_full = g_full.clone();
    for (k, gm) in gammas.iter().enumerate() {
        h_full[(k, k)] += lambda * gm;
    }
    let g_red = z_basis.tr_mul(&(&g_full * &z_basis));
    let h_red = z_basis.tr_mul(&(&h_full * &z_basis));
    let trace_a = nalgebra::Cholesky::new(h_red)
        .ok_or(FitError::SingularSystem { lambda })?
        .solve(&g_red)
        .trace();

    let sigma2_hat = if fam.is_gaussian() && nf - trace_a > 1e-8 {
        let rss: f64 = data
            .y
            .iter()
            .zip(a.iter())
            .map(|(yi, ai)| (yi - ai) * (yi - ai))
            .sum();
        Some(rss / (nf - trace_a))
    } else {
        None
    };
    let obj = objective(fam, &data.y, &a, &coeffs, gammas, lambda);

    Ok(ConstrainedFit {
        fit: FittedSpline {
            es: es.clone(),
            family: fam.clone(),
            coeffs,
            lambda,
            h: lambda.powf(1.0 / (2.0 * es.m() as f64)),
            n,
            trace_a,
            sigma2_hat,
            iterations: 1,
            converged: true,
            objective: obj,
        },
        z0,
        w0,
    })
}

/// One row of the GCV score table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub gcv: Option<f64>,
    pub trace_a: Option<f64>,
}

/// Result of a grid search; `lambda` attains the minimum of the table,
/// ties broken toward the larger value.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub scores: Vec<LambdaScore>,
}

/// Default search grid: 40 log-spaced points in `[1e-8, 1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-8, 1.0, 40)
}

/// `count` log-spaced points spanning `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// GCV grid search.
///
/// Gaussian: `GCV(lambda) = (1/n) ||(I - A) y||^2 / (1 - tr A / n)^2`,
/// evaluated for the whole grid from one symmetric eigendecomposition.
/// Other families: working-response GCV at the converged IRLS weights,
/// refit per grid point with warm starts from the previous (larger) lambda.
pub fn select_lambda(
    data: &Dataset,
    fam: &ModelFamily,
    es: &Arc<EigenSystem>,
    grid: &[f64],
) -> Result<LambdaSelection, FitError> {
    if grid.is_empty() {
        return Err(FitError::EmptyGrid);
    }
    let mut lambdas: Vec<f64> = grid.to_vec();
    lambdas.sort_by(|a, b| a.total_cmp(b));
    lambdas.dedup();
    for &l in &lambdas {
        if !(l > 0.0 && l.is_finite()) {
            return Err(FitError::BadLambda(l));
        }
    }
    validate(data, fam, es, lambdas[0])?;

    if fam.is_gaussian() {
        select_lambda_gaussian(data, es, &lambdas)
    } else {
        select_lambda_irls(data, fam, es, &lambdas)
    }
}

fn select_lambda_gaussian(
    data: &Dataset,
    es: &Arc<EigenSystem>,
    lambdas: &[f64],
) -> Result<LambdaSelection, FitError> {
    let n = data.len();
    let nf = n as f64;
    let x = es.design_matrix(&data.z);
    let p = x.ncols();
    let yv = DVector::from_column_slice(&data.y);
    let yty = yv.norm_squared();
    let g = x.tr_mul(&x) / nf;
    let b = x.tr_mul(&yv) / nf;

    // One-shot reduction: with G = L L' and L^{-1} Gamma L^{-T} = Q D Q',
    // the solve, the trace and the GCV score all become O(p) per lambda.
    let reduced = nalgebra::Cholesky::new(g.clone()).and_then(|chol| {
        let l = chol.l();
        let gamma_m = DMatrix::from_diagonal(&DVector::from_column_slice(es.gammas()));
        let s1 = l.solve_lower_triangular(&gamma_m)?;
        let s = l.solve_lower_triangular(&s1.transpose())?;
        let s = (&s + s.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::try_new(s, 1e-13, 50_000)?;
        let u = eig.eigenvectors.tr_mul(&l.solve_lower_triangular(&b)?);
        Some((eig.eigenvalues, u))
    });

    let mut scores = Vec::with_capacity(lambdas.len());
    match reduced {
        Some((d, u)) => {
            for &lambda in lambdas {
                let mut trace = 0.0;
                let mut fit_term = 0.0; // 2 v'u - ||v||^2 with v = u / (1 + lambda d)
                for k in 0..p {
                    let denom = 1.0 + lambda * d[k].max(0.0);
                    trace += 1.0 / denom;
                    let v = u[k] / denom;
                    fit_term += 2.0 * v * u[k] - v * v;
                }
                let rss = (yty - nf * fit_term).max(0.0);
                let denom = 1.0 - trace / nf;
                let gcv = if denom > 1e-12 {
                    Some((rss / nf) / (denom * denom))
                } else {
                    None
                };
                scores.push(LambdaScore {
                    lambda,
                    gcv,
                    trace_a: Some(trace),
                });
            }
        }
        None => {
            // Singular Gram matrix: per-lambda direct solves instead.
            for &lambda in lambdas {
                let mut h = g.clone();
                for (k, gm) in es.gammas().iter().enumerate() {
                    h[(k, k)] += lambda * gm;
                }
                let entry = match nalgebra::Cholesky::new(h) {
                    Some(chol) => {
                        let c = chol.solve(&b);
                        let trace = chol.solve(&g).trace();
                        let resid = &yv - &x * &c;
                        let denom = 1.0 - trace / nf;
                        let gcv = if denom > 1e-12 {
                            Some(resid.norm_squared() / nf / (denom * denom))
                        } else {
                            None
                        };
                        LambdaScore {
                            lambda,
                            gcv,
                            trace_a: Some(trace),
                        }
                    }
                    None => LambdaScore {
                        lambda,
                        gcv: None,
                        trace_a: None,
                    },
                };
                scores.push(entry);
            }
        }
    }
    pick_min(scores)
}

fn select_lambda_irls(
    data: &Dataset,
    fam: &ModelFamily,
    es: &Arc<EigenSystem>,
    lambdas: &[f64],
) -> Result<LambdaSelection, FitError> {
    let n = data.len();
    let nf = n as f64;
    let x = es.design_matrix(&data.z);
    let gammas = es.gammas();
    let y_scale = 1.0 + data.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut scores = vec![
        LambdaScore {
            lambda: 0.0,
            gcv: None,
            trace_a: None,
        };
        lambdas.len()
    ];
    let mut warm = initial_coeffs(fam, es, &x, data);
    let mut last_err = String::from("no fit attempted");

    // Descend from the smoothest fit so each solution warm-starts the next.
    for (slot, &lambda) in lambdas.iter().enumerate().rev() {
        scores[slot].lambda = lambda;
        let attempt = newton(
            fam,
            &x,
            &data.y,
            gammas,
            lambda,
            warm.clone(),
            None,
            1e-10 * y_scale,
        );
        match attempt {
            Ok(out) => {
                warm = out.coeffs.clone();
                let a = &x * &out.coeffs;
                let mut num = 0.0;
                let mut w = vec![0.0; n];
                for i in 0..n {
                    let wi = (-fam.d2(data.y[i], a[i])).max(1e-12);
                    let s = fam.d1(data.y[i], a[i]);
                    num += s * s / wi;
                    w[i] = wi;
                }
                let trace = trace_smoother(&weighted_gram(&x, &w), gammas, lambda)?;
                let denom = 1.0 - trace / nf;
                if denom > 1e-12 {
                    scores[slot].gcv = Some((num / nf) / (denom * denom));
                }
                scores[slot].trace_a = Some(trace);
            }
            Err(e) => {
                last_err = e.to_string();
            }
        }
    }
    if scores.iter().all(|s| s.gcv.is_none()) {
        return Err(FitError::AllFitsFailed { last: last_err });
    }
    pick_min(scores)
}

fn pick_min(scores: Vec<LambdaScore>) -> Result<LambdaSelection, FitError> {
    let mut best: Option<(f64, f64)> = None;
    for s in &scores {
        if let Some(g) = s.gcv {
            // <= prefers the later (larger) lambda on exact ties.
            if best.is_none_or(|(_, bg)| g <= bg) {
                best = Some((s.lambda, g));
            }
        }
    }
    match best {
        Some((lambda, _)) => Ok(LambdaSelection { lambda, scores }),
        None => Err(FitError::AllFitsFailed {
            last: "no finite GCV score".into(),
        }),
    }
}

/// Residual variance `sum (y_i - ghat(z_i))^2 / (n - trace A)`.
pub fn sigma_hat(fit: &FittedSpline, data: &Dataset) -> Result<f64, FitError> {
    if !fit.family().is_gaussian() {
        return Err(FitError::NotGaussian);
    }
    let n = data.len();
    if fit.trace_a() >= n as f64 {
        return Err(FitError::TraceExceedsN {
            trace: fit.trace_a(),
            n,
        });
    }
    let rss: f64 = data
        .z
        .iter()
        .zip(&data.y)
        .map(|(&z, &y)| {
            let r = y - fit.eval(z);
            r * r
        })
        .sum();
    Ok(rss / (n as f64 - fit.trace_a()))
}

/// Undersmoothing factor on lambda: shrinks the GCV choice so the bandwidth
/// follows `n^{-1/(2m + 1/2)}` instead of the estimation-optimal
/// `n^{-1/(2m+1)}`, removing the asymptotic bias from intervals and bands.
/// `adjust` scales the exponent gap; 1 is the default calibration.
pub fn undersmooth_lambda(lambda: f64, n: usize, m: usize, adjust: f64) -> f64 {
    let m = m as f64;
    let gap = 1.0 / (2.0 * m + 1.0) - 1.0 / (2.0 * m + 0.5);
    lambda * (n as f64).powf(2.0 * m * adjust * gap)
}

/// How the smoothing parameter of [`fit_gaussian_auto`] is chosen, stated in
/// the raw (`sigma = 1`) parameterization where the penalty weight is
/// `lambda~ = lambda * sigma^2`.
#[derive(Debug, Clone)]
pub enum LambdaChoice {
    Fixed(f64),
    Gcv {
        grid: Vec<f64>,
        /// `Some(adjust)` applies [`undersmooth_lambda`] to the GCV choice.
        undersmooth: Option<f64>,
    },
}

/// A Gaussian fit recalibrated to the estimated noise scale.
#[derive(Debug, Clone)]
pub struct GaussianAutoFit {
    /// Fit in the `sigma_hat`-scaled eigensystem with the matching family
    /// `Gaussian { sigma2 = sigma2_hat }` and the calibrated lambda.
    pub fit: FittedSpline,
    /// Raw penalty weight `lambda~` actually used (after undersmoothing).
    pub raw_lambda: f64,
    /// Raw GCV minimizer before undersmoothing.
    pub raw_lambda_gcv: f64,
    /// Noise variance estimated at the GCV fit.
    pub sigma2: f64,
    pub scores: Option<Vec<LambdaScore>>,
}

/// Fits Gaussian data without a known noise scale.
///
/// The search runs in a scale-1 eigensystem (where lambda plays the role of
/// the raw ridge weight), estimates `sigma2` from the selected fit, then
/// rescales basis and eigenvalues by `sigma_hat` and refits so that
/// downstream inference sees the variance-calibrated parameterization.
pub fn fit_gaussian_auto(
    data: &Dataset,
    es_raw: &Arc<EigenSystem>,
    choice: &LambdaChoice,
) -> Result<GaussianAutoFit, FitError> {
    let unit = ModelFamily::Gaussian { sigma2: 1.0 };
    let (raw_gcv, scores) = match choice {
        LambdaChoice::Fixed(l) => (*l, None),
        LambdaChoice::Gcv { grid, .. } => {
            let sel = select_lambda(data, &unit, es_raw, grid)?;
            (sel.lambda, Some(sel.scores))
        }
    };
    let pilot = fit(data, &unit, es_raw, raw_gcv)?;
    let sigma2 = pilot.sigma2_hat().unwrap_or(0.0);

    let raw_lambda = match choice {
        LambdaChoice::Gcv {
            undersmooth: Some(adjust),
            ..
        } => undersmooth_lambda(raw_gcv, data.len(), es_raw.m(), *adjust),
        _ => raw_gcv,
    };

    if sigma2 <= 0.0 {
        // Noise-free data: keep the raw parameterization; intervals collapse.
        let fitted = if raw_lambda == raw_gcv {
            pilot
        } else {
            fit(data, &unit, es_raw, raw_lambda)?
        };
        return Ok(GaussianAutoFit {
            fit: fitted,
            raw_lambda,
            raw_lambda_gcv: raw_gcv,
            sigma2: 0.0,
            scores,
        });
    }

    let sigma = sigma2.sqrt();
    let es_cal = Arc::new(es_raw.rescaled(sigma)?);
    let lambda_official = raw_lambda / sigma2;
    let fam = ModelFamily::Gaussian { sigma2 };
    let fitted = fit(data, &fam, &es_cal, lambda_official)?;
    Ok(GaussianAutoFit {
        fit: fitted,
        raw_lambda,
        raw_lambda_gcv: raw_gcv,
        sigma2,
        scores,
    })
}
