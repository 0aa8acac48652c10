//! Gaussian-process regression with an anisotropic squared-exponential kernel.
//!
//! The model is fitted by maximizing the log marginal likelihood with a
//! projected Adam ascent on log-hyperparameters, restarted from several
//! starting points. Everything is deterministic for a fixed seed.
//!
//! Per-dimension lengthscales are the load-bearing output: the optimizer uses
//! them to shape its candidate boxes and the sensitivity report is derived
//! from their inverses.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("need at least 2 training points, got {0}")]
    TooFewPoints(usize),
    #[error("dimension mismatch: x has {x_dim} columns, expected {expected}")]
    DimensionMismatch { x_dim: usize, expected: usize },
    #[error("training data contains a non-finite value")]
    NonFiniteData,
    #[error("kernel matrix is not positive definite even with jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("hyperparameter out of range: {0}")]
    BadHyperparameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// One lengthscale per input dimension.
    pub ell: Vec<f64>,
    /// Signal variance.
    pub sf2: f64,
    /// Noise variance.
    pub sn2: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), GpError> {
        if self.ell.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(GpError::BadHyperparameter(format!(
                "lengthscales must be positive and finite, got {:?}",
                self.ell
            )));
        }
        if !self.sf2.is_finite() || self.sf2 <= 0.0 {
            return Err(GpError::BadHyperparameter(format!(
                "signal variance must be positive, got {}",
                self.sf2
            )));
        }
        if !self.sn2.is_finite() || self.sn2 < 0.0 {
            return Err(GpError::BadHyperparameter(format!(
                "noise variance must be non-negative, got {}",
                self.sn2
            )));
        }
        Ok(())
    }
}

/// k(a, b) = sf2 * exp(-1/2 * sum_d (a_d - b_d)^2 / ell_d^2)
pub fn kernel_value(a: &[f64], b: &[f64], hyper: &Hyperparams) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), hyper.ell.len());
    let mut q = 0.0;
    for d in 0..a.len() {
        let r = (a[d] - b[d]) / hyper.ell[d];
        q += r * r;
    }
    hyper.sf2 * (-0.5 * q).exp()
}

/// Squared differences per dimension, one n-by-n matrix per input column.
/// Computed once per dataset and reused across likelihood evaluations.
fn squared_distance_matrices(x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let col = x.column(k);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = col[i] - col[j];
                let v = diff * diff;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        out.push(m);
    }
    out
}

/// Noise-free covariance built from precomputed squared distances.
fn signal_covariance(d2: &[DMatrix<f64>], hyper: &Hyperparams) -> DMatrix<f64> {
    let n = d2.first().map_or(0, DMatrix::nrows);
    let mut q = DMatrix::zeros(n, n);
    for (k, m) in d2.iter().enumerate() {
        let inv2 = 1.0 / (hyper.ell[k] * hyper.ell[k]);
        q.zip_apply(m, |acc, v| *acc += v * inv2);
    }
    q.apply(|v: &mut f64| *v = (-0.5 * *v).exp());
    q *= hyper.sf2;
    q
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Cholesky-factorize `kf + sn2*I`, escalating a diagonal jitter from 1e-8 to
/// 1e-4 in decade steps if the plain factorization fails.
fn cholesky_with_jitter(
    kf: &DMatrix<f64>,
    sn2: f64,
) -> Result<Cholesky<f64, Dyn>, GpError> {
    let n = kf.nrows();
    let mut jitter = 0.0;
    loop {
        let mut k = kf.clone();
        for i in 0..n {
            k[(i, i)] += sn2 + jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Ok(chol);
        }
        jitter = if jitter == 0.0 {
            JITTER_START
        } else {
            jitter * 10.0
        };
        if jitter > JITTER_MAX {
            return Err(GpError::NotPositiveDefinite {
                max_jitter: JITTER_MAX,
            });
        }
    }
}

/// Log marginal likelihood of `y` under the kernel, and its gradient with
/// respect to the log-hyperparameters `[ln ell_1 .. ln ell_d, ln sf2, ln sn2]`.
///
/// `y` is used as-is; callers who want standardized targets must standardize
/// first. Any jitter added for numerical rescue is excluded from the gradient.
pub fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyper: &Hyperparams,
) -> Result<(f64, Vec<f64>), GpError> {
    hyper.validate()?;
    if hyper.ell.len() != x.ncols() {
        return Err(GpError::DimensionMismatch {
            x_dim: x.ncols(),
            expected: hyper.ell.len(),
        });
    }
    let d2 = squared_distance_matrices(x);
    lml_with_grad(&d2, y, hyper)
}

fn lml_with_grad(
    d2: &[DMatrix<f64>],
    y: &DVector<f64>,
    hyper: &Hyperparams,
) -> Result<(f64, Vec<f64>), GpError> {
    let n = y.len();
    let kf = signal_covariance(d2, hyper);
    let chol = cholesky_with_jitter(&kf, hyper.sn2)?;
    let alpha = chol.solve(y);

    let mut log_det_half = 0.0;
    let l = chol.l_dirty();
    for i in 0..n {
        log_det_half += l[(i, i)].ln();
    }
    let lml = -0.5 * y.dot(&alpha)
        - log_det_half
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // S = alpha*alpha^T - K^{-1}; the gradient w.r.t. any kernel parameter t is
    // 0.5 * sum(S .* dK/dt).
    let kinv = chol.inverse();
    let mut s = &alpha * alpha.transpose();
    s -= &kinv;

    let d = d2.len();
    let mut grad = vec![0.0; d + 2];
    for k in 0..d {
        // dK/d(ln ell_k) = Kf .* D2_k / ell_k^2
        let inv2 = 1.0 / (hyper.ell[k] * hyper.ell[k]);
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                acc += s[(i, j)] * kf[(i, j)] * d2[k][(i, j)];
            }
        }
        grad[k] = 0.5 * acc * inv2;
    }
    // dK/d(ln sf2) = Kf
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += s[(i, j)] * kf[(i, j)];
        }
    }
    grad[d] = 0.5 * acc;
    // dK/d(ln sn2) = sn2 * I
    grad[d + 1] = 0.5 * hyper.sn2 * s.trace();

    Ok((lml, grad))
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub ell_bounds: (f64, f64),
    pub sf2_bounds: (f64, f64),
    pub sn2_bounds: (f64, f64),
    /// Number of optimizer starts; the best final likelihood wins.
    pub restarts: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            ell_bounds: (0.005, 2.0),
            sf2_bounds: (1e-4, 1e4),
            sn2_bounds: (1e-8, 1.0),
            restarts: 5,
            max_iters: 60,
            learning_rate: 0.08,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Cheaper settings for refits inside an optimization loop, where the
    /// previous fit makes a decent prior and full restarts are wasted work.
    pub fn light(seed: u64) -> Self {
        FitConfig {
            restarts: 2,
            max_iters: 40,
            seed,
            ..FitConfig::default()
        }
    }
}

/// A fitted model holding its training set and Cholesky factorization.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    hyper: Hyperparams,
    log_marginal: f64,
}

impl GpModel {
    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn train_x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Training targets in standardized units (zero mean, unit variance).
    pub fn train_y_standardized(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.hyper.ell
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_std(&self) -> f64 {
        self.y_std
    }

    /// Posterior mean and variance of the latent function at `x`
    /// (observation noise not added), in the original target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.dims(), "query dimension mismatch");
        let n = self.n_train();
        let mut k = DVector::zeros(n);
        for i in 0..n {
            let row: Vec<f64> = self.x.row(i).iter().copied().collect();
            k[i] = kernel_value(x, &row, &self.hyper);
        }
        let mean_std = k.dot(&self.alpha);
        // var = k(x,x) - k^T K^{-1} k, via the triangular solve L v = k.
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("lower-triangular solve on a valid factorization");
        let var_std = (self.hyper.sf2 - v.norm_squared()).max(1e-12);
        (
            self.y_mean + self.y_std * mean_std,
            self.y_std * self.y_std * var_std,
        )
    }
}

fn standardize(y: &DVector<f64>) -> (DVector<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        (DVector::zeros(y.len()), mean, std)
    } else {
        (y.map(|v| (v - mean) / std), mean, std)
    }
}

/// Fit hyperparameters by maximum marginal likelihood on standardized targets.
///
/// `x` is n-by-d (rows are points, already scaled to comparable ranges by the
/// caller), `y` holds raw objective values. Requires at least two points.
pub fn fit_gp(x: &DMatrix<f64>, y: &DVector<f64>, config: &FitConfig) -> Result<GpModel, GpError> {
    let n = x.nrows();
    if n < 2 {
        return Err(GpError::TooFewPoints(n));
    }
    assert_eq!(n, y.len(), "x and y row counts differ");
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFiniteData);
    }
    let d = x.ncols();
    let (y_std_vec, y_mean, y_std) = standardize(y);

    // Constant targets carry no information about any direction: pin every
    // lengthscale at its upper bound so downstream sensitivities come out
    // uniform, and keep the posterior glued to the constant.
    if y_std < 1e-12 {
        let hyper = Hyperparams {
            ell: vec![config.ell_bounds.1; d],
            sf2: config.sf2_bounds.0,
            sn2: config.sn2_bounds.0,
        };
        let d2 = squared_distance_matrices(x);
        let kf = signal_covariance(&d2, &hyper);
        let chol = cholesky_with_jitter(&kf, hyper.sn2)?;
        let alpha = chol.solve(&y_std_vec);
        return Ok(GpModel {
            x: x.clone(),
            y: y_std_vec,
            y_mean,
            y_std: 1.0,
            alpha,
            chol,
            hyper,
            log_marginal: f64::NEG_INFINITY,
        });
    }

    let d2 = squared_distance_matrices(x);
    let lo: Vec<f64> = (0..d)
        .map(|_| config.ell_bounds.0.ln())
        .chain([config.sf2_bounds.0.ln(), config.sn2_bounds.0.ln()])
        .collect();
    let hi: Vec<f64> = (0..d)
        .map(|_| config.ell_bounds.1.ln())
        .chain([config.sf2_bounds.1.ln(), config.sn2_bounds.1.ln()])
        .collect();

    let clamp_ell = |v: f64| v.clamp(config.ell_bounds.0, config.ell_bounds.1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, Hyperparams)> = None;

    for restart in 0..config.restarts.max(1) {
        let init = if restart == 0 {
            Hyperparams {
                ell: vec![clamp_ell(0.5); d],
                sf2: 1.0f64.clamp(config.sf2_bounds.0, config.sf2_bounds.1),
                sn2: 1e-4f64.clamp(config.sn2_bounds.0, config.sn2_bounds.1),
            }
        } else {
            let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
                (rng.random_range(lo.ln()..hi.ln())).exp()
            };
            Hyperparams {
                ell: (0..d)
                    .map(|_| log_uniform(&mut rng, clamp_ell(0.05), clamp_ell(1.5)))
                    .collect(),
                sf2: log_uniform(
                    &mut rng,
                    0.25f64.max(config.sf2_bounds.0),
                    4.0f64.min(config.sf2_bounds.1),
                ),
                sn2: log_uniform(
                    &mut rng,
                    1e-6f64.max(config.sn2_bounds.0),
                    1e-2f64.min(config.sn2_bounds.1),
                ),
            }
        };

        if let Some((lml, hyper)) =
            adam_ascent(&d2, &y_std_vec, init, &lo, &hi, config)
        {
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, hyper));
            }
        }
    }

    let (lml, hyper) =
        best.ok_or(GpError::NotPositiveDefinite { max_jitter: JITTER_MAX })?;
    let kf = signal_covariance(&d2, &hyper);
    let chol = cholesky_with_jitter(&kf, hyper.sn2)?;
    let alpha = chol.solve(&y_std_vec);
    Ok(GpModel {
        x: x.clone(),
        y: y_std_vec,
        y_mean,
        y_std,
        alpha,
        chol,
        hyper,
        log_marginal: lml,
    })
}

fn theta_from(hyper: &Hyperparams) -> Vec<f64> {
    hyper
        .ell
        .iter()
        .map(|l| l.ln())
        .chain([hyper.sf2.ln(), hyper.sn2.ln()])
        .collect()
}

fn hyper_from(theta: &[f64], d: usize) -> Hyperparams {
    Hyperparams {
        ell: theta[..d].iter().map(|t| t.exp()).collect(),
        sf2: theta[d].exp(),
        sn2: theta[d + 1].exp(),
    }
}

/// Projected Adam ascent on the log marginal likelihood. Returns the best
/// (value, hyperparams) seen along the trajectory, or None if every
/// evaluation failed to factorize.
fn adam_ascent(
    d2: &[DMatrix<f64>],
    y: &DVector<f64>,
    init: Hyperparams,
    lo: &[f64],
    hi: &[f64],
    config: &FitConfig,
) -> Option<(f64, Hyperparams)> {
    let d = d2.len();
    let p = d + 2;
    let mut theta = theta_from(&init);
    for i in 0..p {
        theta[i] = theta[i].clamp(lo[i], hi[i]);
    }
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut best: Option<(f64, Hyperparams)> = None;

    for t in 1..=config.max_iters {
        let hyper = hyper_from(&theta, d);
        let (lml, grad) = match lml_with_grad(d2, y, &hyper) {
            Ok(r) => r,
            Err(_) => break,
        };
        if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
            best = Some((lml, hyper.clone()));
        }
        let b1t = 1.0 - beta1.powi(t as i32);
        let b2t = 1.0 - beta2.powi(t as i32);
        for i in 0..p {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let step = config.learning_rate * (m[i] / b1t) / ((v[i] / b2t).sqrt() + eps);
            theta[i] = (theta[i] + step).clamp(lo[i], hi[i]);
        }
    }
    // Score the final iterate too; Adam's last step is often the best one.
    let hyper = hyper_from(&theta, d);
    if let Ok((lml, _)) = lml_with_grad(d2, y, &hyper) {
        if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
            best = Some((lml, hyper));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn unit_hyper(d: usize) -> Hyperparams {
        Hyperparams {
            ell: vec![1.0; d],
            sf2: 1.0,
            sn2: 0.1,
        }
    }

    #[test]
    fn kernel_unit_distance() {
        let h = unit_hyper(1);
        let k = kernel_value(&[0.0], &[1.0], &h);
        assert_relative_eq!(k, (-0.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(k, 0.606_530_659_712_633_4, epsilon = 1e-12);
    }

    #[test]
    fn kernel_scales_per_dimension() {
        let h = Hyperparams {
            ell: vec![0.5, 2.0],
            sf2: 3.0,
            sn2: 0.0,
        };
        // q = (1/0.5)^2 + (2/2)^2 = 5
        let k = kernel_value(&[0.0, 0.0], &[1.0, 2.0], &h);
        assert_relative_eq!(k, 3.0 * (-2.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn one_point_likelihood_closed_form() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DVector::from_vec(vec![0.0]);
        let h = Hyperparams {
            ell: vec![1.0],
            sf2: 1.0,
            sn2: 1.0,
        };
        let (lml, _) = log_marginal_likelihood(&x, &y, &h).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * 2.0f64.ln();
        assert_abs_diff_eq!(lml, expected, epsilon = 1e-12);
    }

    fn toy_data() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_row_slice(
            6,
            2,
            &[
                0.10, 0.90, //
                0.35, 0.20, //
                0.55, 0.65, //
                0.72, 0.30, //
                0.85, 0.80, //
                0.25, 0.55,
            ],
        );
        let y = DVector::from_fn(6, |i, _| {
            let xi = x.row(i);
            (3.0f64 * xi[0]).sin() + 0.5 * xi[1]
        });
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = toy_data();
        let base = Hyperparams {
            ell: vec![0.7, 0.4],
            sf2: 1.3,
            sn2: 0.05,
        };
        let (_, grad) = log_marginal_likelihood(&x, &y, &base).unwrap();
        let theta0 = theta_from(&base);
        let h = 1e-5;
        for i in 0..theta0.len() {
            let mut tp = theta0.clone();
            let mut tm = theta0.clone();
            tp[i] += h;
            tm[i] -= h;
            let (lp, _) = log_marginal_likelihood(&x, &y, &hyper_from(&tp, 2)).unwrap();
            let (lm, _) = log_marginal_likelihood(&x, &y, &hyper_from(&tm, 2)).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(
                rel < 1e-4,
                "component {i}: analytic {:.10e} vs fd {:.10e} (rel {:.2e})",
                grad[i],
                fd,
                rel
            );
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = toy_data();
        let cfg = FitConfig {
            seed: 7,
            ..FitConfig::default()
        };
        let a = fit_gp(&x, &y, &cfg).unwrap();
        let b = fit_gp(&x, &y, &cfg).unwrap();
        assert_eq!(a.hyperparams().ell, b.hyperparams().ell);
        assert_eq!(a.hyperparams().sf2, b.hyperparams().sf2);
        assert_eq!(a.hyperparams().sn2, b.hyperparams().sn2);
        assert_eq!(a.log_marginal(), b.log_marginal());
    }

    #[test]
    fn fit_interpolates_smooth_data() {
        let (x, y) = toy_data();
        let model = fit_gp(&x, &y, &FitConfig::default()).unwrap();
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let (mean, var) = model.predict(&row);
            assert!(
                (mean - y[i]).abs() < 0.15,
                "point {i}: predicted {mean}, actual {}",
                y[i]
            );
            assert!(var >= 0.0);
        }
    }

    #[test]
    fn prediction_reverts_to_mean_far_away() {
        let (x, y) = toy_data();
        let model = fit_gp(&x, &y, &FitConfig::default()).unwrap();
        let (mean, var) = model.predict(&[50.0, -50.0]);
        assert_abs_diff_eq!(mean, model.y_mean(), epsilon = 1e-6);
        // Far from data the latent variance approaches the full signal variance.
        let sf2_orig = model.hyperparams().sf2 * model.y_std() * model.y_std();
        assert_relative_eq!(var, sf2_orig, max_relative = 1e-6);
    }

    #[test]
    fn constant_targets_pin_lengthscales_at_max() {
        let x = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.4, 0.8, 0.6, 0.3, 0.9, 0.7]);
        let y = DVector::from_vec(vec![2.0; 4]);
        let cfg = FitConfig::default();
        let model = fit_gp(&x, &y, &cfg).unwrap();
        assert_eq!(model.lengthscales(), &[cfg.ell_bounds.1, cfg.ell_bounds.1]);
        let (mean, _) = model.predict(&[0.5, 0.5]);
        assert_abs_diff_eq!(mean, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn fewer_than_two_points_is_an_error() {
        let x = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        let y = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            fit_gp(&x, &y, &FitConfig::default()),
            Err(GpError::TooFewPoints(1))
        ));
    }

    #[test]
    fn duplicate_points_survive_via_jitter() {
        let x = DMatrix::from_row_slice(4, 1, &[0.5, 0.5, 0.5, 0.5]);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let h = Hyperparams {
            ell: vec![1.0],
            sf2: 1.0,
            sn2: 1e-8,
        };
        let (lml, _) = log_marginal_likelihood(&x, &y, &h).unwrap();
        assert!(lml.is_finite());
    }

    #[test]
    fn lengthscales_reflect_relevance() {
        // y depends strongly on x0, not at all on x1: fitted ell_1 should be
        // clearly larger than ell_0.
        let n = 24;
        let mut rows = Vec::with_capacity(n * 2);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let a = (i as f64 + 0.5) / n as f64;
            let b = ((i * 7 + 3) % n) as f64 / n as f64;
            rows.push(a);
            rows.push(b);
            ys.push((6.0 * a).sin());
        }
        let x = DMatrix::from_row_slice(n, 2, &rows);
        let y = DVector::from_vec(ys);
        let model = fit_gp(&x, &y, &FitConfig::default()).unwrap();
        let ell = model.lengthscales();
        assert!(
            ell[1] > 2.0 * ell[0],
            "expected ell for the inert dimension to dominate: {ell:?}"
        );
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric_and_bounded(
            a in prop::collection::vec(-5.0f64..5.0, 3),
            b in prop::collection::vec(-5.0f64..5.0, 3),
            ell in prop::collection::vec(0.05f64..2.0, 3),
            sf2 in 0.1f64..10.0,
        ) {
            let h = Hyperparams { ell, sf2, sn2: 0.0 };
            let kab = kernel_value(&a, &b, &h);
            let kba = kernel_value(&b, &a, &h);
            prop_assert!((kab - kba).abs() < 1e-12);
            // exp underflows to exactly 0 for very distant points.
            prop_assert!(kab >= 0.0 && kab <= sf2 + 1e-12);
            let kaa = kernel_value(&a, &a, &h);
            prop_assert!((kaa - sf2).abs() < 1e-12);
        }
    }
}
