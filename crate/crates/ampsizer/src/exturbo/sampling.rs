//! Space-filling initialization and posterior function sampling.
//!
//! Thompson sampling is done in random-feature space: the squared-exponential
//! kernel is approximated with `m` random cosine features, the Bayesian
//! linear-regression posterior over feature weights is formed once per model,
//! and each batch slot draws one weight vector and minimizes the resulting
//! deterministic function over a candidate pool. This keeps per-draw cost at
//! one matrix-vector product instead of an n-by-n resolve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::gp::{GpError, GpModel};

/// Default number of random Fourier features.
pub const DEFAULT_FEATURES: usize = 256;

/// Latin hypercube sample of `n` points in the `d`-dimensional unit cube:
/// each dimension is split into `n` strata and every stratum is hit exactly
/// once, with uniform jitter inside the stratum.
pub fn latin_hypercube<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    for dim in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        // Fisher-Yates shuffle driven by the caller's rng for determinism.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        for (i, point) in points.iter_mut().enumerate() {
            let offset: f64 = rng.random_range(0.0..1.0);
            point[dim] = (strata[i] as f64 + offset) / n as f64;
        }
    }
    points
}

/// Random cosine feature map approximating the model's kernel:
/// phi_i(x) = sqrt(2*sf2/m) * cos(w_i . x + b_i), with w_i drawn from the
/// kernel's spectral density (independent normals scaled by 1/ell_d).
pub struct FeatureMap {
    /// m-by-d spectral frequencies.
    w: DMatrix<f64>,
    /// m phase offsets.
    b: DVector<f64>,
    scale: f64,
}

impl FeatureMap {
    pub fn new<R: Rng>(model: &GpModel, m: usize, rng: &mut R) -> Self {
        let d = model.dims();
        let hyper = model.hyperparams();
        let w = DMatrix::from_fn(m, d, |_, j| {
            let z: f64 = rng.sample(StandardNormal);
            z / hyper.ell[j]
        });
        let b = DVector::from_fn(m, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
        let scale = (2.0 * hyper.sf2 / m as f64).sqrt();
        FeatureMap { w, b, scale }
    }

    pub fn n_features(&self) -> usize {
        self.w.nrows()
    }

    /// Feature matrix for a set of points, one row per point (p-by-m).
    pub fn features(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let p = points.len();
        let d = self.w.ncols();
        let mut xm = DMatrix::zeros(p, d);
        for (i, pt) in points.iter().enumerate() {
            assert_eq!(pt.len(), d, "point dimension mismatch");
            for (j, v) in pt.iter().enumerate() {
                xm[(i, j)] = *v;
            }
        }
        let mut phi = xm * self.w.transpose();
        for i in 0..p {
            for (j, bj) in self.b.iter().enumerate() {
                phi[(i, j)] = self.scale * (phi[(i, j)] + bj).cos();
            }
        }
        phi
    }
}

/// Posterior over feature weights for one fitted model.
pub struct ThompsonSampler {
    map: FeatureMap,
    theta_mean: DVector<f64>,
    /// Lower Cholesky factor of A = Phi^T Phi + sn2 I.
    a_lower: DMatrix<f64>,
    sn2_sqrt: f64,
    y_mean: f64,
    y_std: f64,
}

impl ThompsonSampler {
    pub fn from_model<R: Rng>(model: &GpModel, m: usize, rng: &mut R) -> Result<Self, GpError> {
        let map = FeatureMap::new(model, m, rng);
        let rows: Vec<Vec<f64>> = (0..model.n_train())
            .map(|i| model.train_x().row(i).iter().copied().collect())
            .collect();
        let phi = map.features(&rows);
        let sn2 = model.hyperparams().sn2.max(1e-10);
        let mut a = phi.transpose() * &phi;
        for i in 0..m {
            a[(i, i)] += sn2;
        }
        let chol: Cholesky<f64, Dyn> = Cholesky::new(a).ok_or(GpError::NotPositiveDefinite {
            max_jitter: 0.0,
        })?;
        let theta_mean = chol.solve(&(phi.transpose() * model.train_y_standardized()));
        let a_lower = chol.l();
        Ok(ThompsonSampler {
            map,
            theta_mean,
            a_lower,
            sn2_sqrt: sn2.sqrt(),
            y_mean: model.y_mean(),
            y_std: model.y_std(),
        })
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    /// One posterior weight draw: theta = mean + sqrt(sn2) * L^-T z.
    /// (The posterior covariance is sn2 * A^-1 = sn2 * L^-T L^-1.)
    pub fn draw_weights<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let m = self.theta_mean.len();
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lt_inv_z = self
            .a_lower
            .tr_solve_lower_triangular(&z)
            .expect("triangular solve on a Cholesky factor");
        &self.theta_mean + lt_inv_z * self.sn2_sqrt
    }

    /// Sampled-function values over a precomputed feature matrix, converted
    /// back to original target units.
    pub fn scores(&self, phi_pool: &DMatrix<f64>, weights: &DVector<f64>) -> DVector<f64> {
        let raw = phi_pool * weights;
        raw.map(|v| self.y_mean + self.y_std * v)
    }

    /// Posterior-mean scores (no sampling), useful for greedy fallbacks.
    pub fn mean_scores(&self, phi_pool: &DMatrix<f64>) -> DVector<f64> {
        self.scores(phi_pool, &self.theta_mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exturbo::gp::{fit_gp, FitConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lhs_hits_every_stratum_once_per_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let pts = latin_hypercube(n, 4, &mut rng);
        assert_eq!(pts.len(), n);
        for dim in 0..4 {
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| {
                    assert!((0.0..1.0).contains(&p[dim]));
                    (p[dim] * n as f64).floor() as usize
                })
                .collect();
            strata.sort_unstable();
            let expected: Vec<usize> = (0..n).collect();
            assert_eq!(strata, expected, "dimension {dim} misses a stratum");
        }
    }

    #[test]
    fn lhs_is_deterministic() {
        let a = latin_hypercube(8, 3, &mut ChaCha8Rng::seed_from_u64(11));
        let b = latin_hypercube(8, 3, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    fn sine_model() -> GpModel {
        let n = 20;
        let rows: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let x = nalgebra::DMatrix::from_row_slice(n, 1, &rows);
        let y = nalgebra::DVector::from_fn(n, |i, _| (rows[i] * std::f64::consts::TAU).sin());
        fit_gp(&x, &y, &FitConfig::default()).unwrap()
    }

    #[test]
    fn sampled_functions_track_the_posterior_mean() {
        let model = sine_model();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sampler = ThompsonSampler::from_model(&model, 512, &mut rng).unwrap();
        let queries: Vec<Vec<f64>> = (0..9).map(|i| vec![0.1 + 0.1 * i as f64]).collect();
        let phi = sampler.feature_map().features(&queries);

        let draws = 200;
        let mut avg = vec![0.0; queries.len()];
        for _ in 0..draws {
            let theta = sampler.draw_weights(&mut rng);
            let s = sampler.scores(&phi, &theta);
            for (a, v) in avg.iter_mut().zip(s.iter()) {
                *a += v / draws as f64;
            }
        }
        for (q, a) in queries.iter().zip(&avg) {
            let (mean, _) = model.predict(q);
            assert!(
                (a - mean).abs() < 0.15,
                "at {q:?}: sampled average {a:.3} vs exact mean {mean:.3}"
            );
        }
    }

    #[test]
    fn draws_are_deterministic_and_distinct() {
        let model = sine_model();
        let sampler = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            ThompsonSampler::from_model(&model, 128, &mut rng).unwrap()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let t1 = sampler.draw_weights(&mut r1);
        let t2 = sampler.draw_weights(&mut r2);
        assert_eq!(t1, t2);
        let t3 = sampler.draw_weights(&mut r1);
        assert_ne!(t1, t3);
    }

    #[test]
    fn argmin_of_mean_scores_sits_near_the_true_minimum() {
        let model = sine_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sampler = ThompsonSampler::from_model(&model, 512, &mut rng).unwrap();
        let pool: Vec<Vec<f64>> = (0..101).map(|i| vec![i as f64 / 100.0]).collect();
        let phi = sampler.feature_map().features(&pool);
        let scores = sampler.mean_scores(&phi);
        let best = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        // sin minimizes at x = 0.75 on [0, 1].
        assert!(
            (pool[best][0] - 0.75).abs() < 0.06,
            "argmin at {}",
            pool[best][0]
        );
    }
}
