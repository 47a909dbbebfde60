//! Sequential Monte Carlo estimator of the target state.
//!
//! The posterior over the target position is carried by N weighted particles.
//! Prediction pushes every particle through the motion model plus isotropic
//! process noise; update reweights by the Gaussian measurement likelihood;
//! resampling fights weight degeneracy. Each particle owns its own position
//! history window so the learned motion model can be evaluated per hypothesis,
//! and remembers the transition mean that produced its newest pose (the
//! one-step kernel mean needed by the entropy estimates).

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{Pose2, Rect, Workspace};
use crate::motion::{HistoryWindow, MotionError, MotionModel};

/// Squared Mahalanobis gate for deciding that a measurement is explained by
/// at least one particle (5 sigma).
const CONSISTENCY_GATE_SQ: f64 = 25.0;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("measurement covariance is not symmetric")]
    Asymmetric,
    #[error("measurement covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("init region has no area")]
    EmptyRegion,
}

/// Known Gaussian measurement model: z ~ N(x, cov).
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    cov: Matrix2<f64>,
    inv: Matrix2<f64>,
    chol: Matrix2<f64>,
    log_norm: f64,
}

impl MeasurementModel {
    pub fn new(cov: Matrix2<f64>) -> Result<Self, FilterError> {
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
            return Err(FilterError::Asymmetric);
        }
        let chol = nalgebra::Cholesky::new(cov).ok_or(FilterError::NotPositiveDefinite)?;
        let det = cov.determinant();
        if !(det > 0.0) || !(cov[(0, 0)] > 0.0) {
            return Err(FilterError::NotPositiveDefinite);
        }
        let inv = cov.try_inverse().ok_or(FilterError::NotPositiveDefinite)?;
        Ok(Self {
            cov,
            inv,
            chol: chol.l(),
            log_norm: -(2.0 * std::f64::consts::PI * det.sqrt()).ln(),
        })
    }

    pub fn isotropic(sigma: f64) -> Self {
        Self::new(Matrix2::new(sigma * sigma, 0.0, 0.0, sigma * sigma)).expect("sigma must be positive")
    }

    pub fn covariance(&self) -> &Matrix2<f64> {
        &self.cov
    }

    pub fn mahalanobis_sq(&self, z: Pose2, x: Pose2) -> f64 {
        let d = Vector2::new(z.x - x.x, z.y - x.y);
        (d.transpose() * self.inv * d)[(0, 0)]
    }

    /// log N(z; x, cov)
    pub fn log_likelihood(&self, z: Pose2, x: Pose2) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(z, x)
    }

    /// Draw z ~ N(x, cov).
    pub fn sample(&self, x: Pose2, rng: &mut ChaCha8Rng) -> Pose2 {
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let e = Vector2::new(std_normal.sample(rng), std_normal.sample(rng));
        let n = self.chol * e;
        Pose2::new(x.x + n[0], x.y + n[1])
    }
}

/// One weighted hypothesis with its position history.
#[derive(Debug, Clone)]
pub struct Particle {
    pub history: HistoryWindow,
    pub weight: f64,
    /// Transition mean that generated the newest pose (equals the pose itself
    /// until the first prediction).
    pub pred_mean: Pose2,
}

impl Particle {
    pub fn position(&self) -> Pose2 {
        self.history.latest()
    }
}

/// The full particle approximation of the target state posterior.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    /// Time index k, incremented by prediction.
    pub step: u64,
    degenerate_update: bool,
    measurement_consistent: bool,
}

impl ParticleSet {
    /// Uniform prior over `region`: equal weights, each history window seeded
    /// by replicating the sampled position.
    pub fn init(
        region: &Rect,
        n: usize,
        k_in: usize,
        dt: f64,
        t_now: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, FilterError> {
        if region.is_degenerate() {
            return Err(FilterError::EmptyRegion);
        }
        assert!(n >= 1, "need at least one particle");
        let w = 1.0 / n as f64;
        let particles = (0..n)
            .map(|_| {
                let pos = Pose2::new(
                    rng.random_range(region.min_x..=region.max_x),
                    rng.random_range(region.min_y..=region.max_y),
                );
                Particle { history: HistoryWindow::replicate(pos, k_in, dt, t_now), weight: w, pred_mean: pos }
            })
            .collect();
        Ok(Self { particles, step: 0, degenerate_update: false, measurement_consistent: false })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn positions(&self) -> Vec<Pose2> {
        self.particles.iter().map(|p| p.position()).collect()
    }

    /// True when the last update hit the all-underflow guard.
    pub fn last_update_degenerate(&self) -> bool {
        self.degenerate_update
    }

    /// True when the last update's measurement was explained by at least one
    /// particle (within the 5-sigma gate).
    pub fn measurement_consistent(&self) -> bool {
        self.measurement_consistent
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.weight_sum() - 1.0).abs() <= WEIGHT_SUM_TOL
    }

    /// N_eff / N with N_eff = 1 / sum of squared weights.
    pub fn effective_sample_ratio(&self) -> f64 {
        let sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        1.0 / (sq * self.len() as f64)
    }

    /// Propagate every particle one step through the motion model plus
    /// isotropic process noise. Weights are untouched.
    pub fn predict(
        &self,
        model: &MotionModel,
        sigma_p: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParticleSet, MotionError> {
        assert!(sigma_p >= 0.0);
        let means: Vec<Pose2> = match model {
            MotionModel::Dmmn(params) => {
                let windows: Vec<&HistoryWindow> = self.particles.iter().map(|p| &p.history).collect();
                crate::motion::forward_batch(params, &windows)?
            }
            MotionModel::ConstantVelocity => {
                let mut v = Vec::with_capacity(self.len());
                for p in &self.particles {
                    v.push(model.sample_transition(&p.history, rng)?);
                }
                v
            }
        };
        let noise = Normal::new(0.0, sigma_p).expect("sigma_p must be non-negative");
        let particles = self
            .particles
            .iter()
            .zip(means)
            .map(|(p, mean)| {
                let pos = Pose2::new(mean.x + noise.sample(rng), mean.y + noise.sample(rng));
                let mut history = p.history.clone();
                let t = history.latest_time() + history.dt;
                history.push(pos, t);
                Particle { history, weight: p.weight, pred_mean: mean }
            })
            .collect();
        Ok(ParticleSet {
            particles,
            step: self.step + 1,
            degenerate_update: self.degenerate_update,
            measurement_consistent: self.measurement_consistent,
        })
    }

    /// Bayes update: multiply weights by the measurement likelihood and
    /// renormalize (computed in log space with max shift). If every
    /// likelihood underflows, weights reset to uniform and the degeneracy
    /// flag is raised.
    pub fn update(&self, z: Pose2, mm: &MeasurementModel) -> ParticleSet {
        assert!(z.is_finite());
        let log_liks: Vec<f64> =
            self.particles.iter().map(|p| mm.log_likelihood(z, p.position())).collect();
        let consistent = self
            .particles
            .iter()
            .any(|p| mm.mahalanobis_sq(z, p.position()) <= CONSISTENCY_GATE_SQ);

        let max_ll = log_liks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = self.clone();
        out.measurement_consistent = consistent;
        if !max_ll.is_finite() {
            // Nothing explains the measurement at any representable scale.
            let w = 1.0 / self.len() as f64;
            for p in out.particles.iter_mut() {
                p.weight = w;
            }
            out.degenerate_update = true;
            return out;
        }

        let mut total = 0.0;
        for (p, ll) in out.particles.iter_mut().zip(&log_liks) {
            p.weight *= (ll - max_ll).exp();
            total += p.weight;
        }
        if total <= 0.0 {
            let w = 1.0 / self.len() as f64;
            for p in out.particles.iter_mut() {
                p.weight = w;
            }
            out.degenerate_update = true;
            return out;
        }
        for p in out.particles.iter_mut() {
            p.weight /= total;
        }
        out.degenerate_update = false;
        out
    }

    /// Degeneracy-triggered resampling on the effective-sample-size ratio
    /// r = N_eff/N: below `b`, reinitialize uniformly over the workspace
    /// (lost-track recovery) unless the last measurement was explained by the
    /// cloud, in which case fall through to multinomial resampling; below
    /// `a`, multinomial resampling; otherwise unchanged.
    pub fn resample(&self, a: f64, b: f64, ws: &Workspace, rng: &mut ChaCha8Rng) -> ParticleSet {
        let r = self.effective_sample_ratio();
        if r < b && !self.measurement_consistent {
            return self.reinit_uniform(ws, rng);
        }
        if r < a {
            return self.resample_multinomial(rng);
        }
        self.clone()
    }

    fn reinit_uniform(&self, ws: &Workspace, rng: &mut ChaCha8Rng) -> ParticleSet {
        let n = self.len();
        let w = 1.0 / n as f64;
        let template = &self.particles[0].history;
        let (k_in, dt, t_now) = (template.len(), template.dt, template.latest_time());
        let particles = (0..n)
            .map(|_| {
                let pos = Pose2::new(
                    rng.random_range(ws.bounds.min_x..=ws.bounds.max_x),
                    rng.random_range(ws.bounds.min_y..=ws.bounds.max_y),
                );
                Particle { history: HistoryWindow::replicate(pos, k_in, dt, t_now), weight: w, pred_mean: pos }
            })
            .collect();
        ParticleSet {
            particles,
            step: self.step,
            degenerate_update: self.degenerate_update,
            measurement_consistent: false,
        }
    }

    fn resample_multinomial(&self, rng: &mut ChaCha8Rng) -> ParticleSet {
        let n = self.len();
        let cdf = self.weight_cdf();
        let w = 1.0 / n as f64;
        let particles = (0..n)
            .map(|_| {
                let idx = cdf_index(&cdf, rng.random::<f64>());
                Particle { weight: w, ..self.particles[idx].clone() }
            })
            .collect();
        ParticleSet { particles, ..self.clone() }
    }

    /// Systematic (low-variance) draw of `n_h` particles proportional to
    /// weight; the result carries uniform weights.
    pub fn subsample(&self, n_h: usize, rng: &mut ChaCha8Rng) -> ParticleSet {
        assert!(n_h >= 1 && n_h <= self.len(), "subsample size out of range");
        let cdf = self.weight_cdf();
        let w = 1.0 / n_h as f64;
        let u0: f64 = rng.random::<f64>() * w;
        let particles = (0..n_h)
            .map(|i| {
                let idx = cdf_index(&cdf, u0 + i as f64 * w);
                Particle { weight: w, ..self.particles[idx].clone() }
            })
            .collect();
        ParticleSet { particles, ..self.clone() }
    }

    fn weight_cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(self.len());
        for p in &self.particles {
            acc += p.weight;
            cdf.push(acc);
        }
        cdf
    }

    /// Weighted mean of the current particle positions.
    pub fn weighted_mean(&self) -> Pose2 {
        let mut x = 0.0;
        let mut y = 0.0;
        for p in &self.particles {
            x += p.weight * p.position().x;
            y += p.weight * p.position().y;
        }
        Pose2::new(x, y)
    }

    /// Weighted covariance of the particle positions around their mean.
    pub fn covariance(&self) -> Matrix2<f64> {
        let mu = self.weighted_mean();
        let mut m = Matrix2::zeros();
        for p in &self.particles {
            let d = Vector2::new(p.position().x - mu.x, p.position().y - mu.y);
            m += p.weight * d * d.transpose();
        }
        m
    }
}

fn cdf_index(cdf: &[f64], u: f64) -> usize {
    // First index whose cumulative weight exceeds u; clamp for u >= total.
    match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) => (i + 1).min(cdf.len() - 1),
        Err(i) => i.min(cdf.len() - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OcclusionZone;
    use crate::rng::{stream, StreamKind};

    fn region() -> Rect {
        Rect::new(0.0, 0.0, 4.0, 2.0)
    }

    fn workspace() -> Workspace {
        Workspace::new(region(), vec![OcclusionZone::new("z", Rect::new(0.5, 0.5, 1.0, 1.0))]).unwrap()
    }

    fn set_from_positions(positions: &[Pose2], weights: &[f64]) -> ParticleSet {
        let particles = positions
            .iter()
            .zip(weights)
            .map(|(p, w)| Particle {
                history: HistoryWindow::replicate(*p, 3, 1.0, 0.0),
                weight: *w,
                pred_mean: *p,
            })
            .collect();
        ParticleSet { particles, step: 0, degenerate_update: false, measurement_consistent: false }
    }

    #[test]
    fn init_uniform_weights_and_bounds() {
        let mut rng = stream(1, StreamKind::Filter);
        let set = ParticleSet::init(&region(), 500, 5, 0.5, 0.0, &mut rng).unwrap();
        assert_eq!(set.len(), 500);
        for p in &set.particles {
            assert!((p.weight - 0.002).abs() < 1e-15);
            assert!(region().contains(p.position()));
            assert!(p.history.is_fresh());
        }
        assert!(set.is_normalized());

        let again = ParticleSet::init(&region(), 500, 5, 0.5, 0.0, &mut stream(1, StreamKind::Filter)).unwrap();
        for (a, b) in set.particles.iter().zip(&again.particles) {
            assert_eq!(a.position().x.to_bits(), b.position().x.to_bits());
        }
    }

    #[test]
    fn predict_zero_noise_zero_displacement_stays() {
        // Constant-velocity on settled stationary windows with no process
        // noise is the identity transition.
        let mut set = set_from_positions(
            &[Pose2::new(1.0, 1.0), Pose2::new(2.0, 1.5)],
            &[0.5, 0.5],
        );
        for p in set.particles.iter_mut() {
            let pos = p.position();
            let t = p.history.latest_time() + 1.0;
            p.history.push(pos, t);
        }
        let mut rng = stream(2, StreamKind::Filter);
        let out = set.predict(&MotionModel::ConstantVelocity, 0.0, &mut rng).unwrap();
        for (a, b) in out.particles.iter().zip(&set.particles) {
            assert_eq!(a.position(), b.position());
            assert_eq!(a.weight, b.weight);
        }
        assert_eq!(out.step, set.step + 1);
    }

    #[test]
    fn predict_mean_displacement_matches_model() {
        // 10^4 particles sliding along x at 0.2 m/step; the sample mean
        // displacement stays within the CLT band around the model mean.
        let n = 10_000;
        let sigma_p = 0.05;
        let positions: Vec<Pose2> = (0..n).map(|i| Pose2::new(i as f64 * 1e-4, 0.0)).collect();
        let weights = vec![1.0 / n as f64; n];
        let mut set = set_from_positions(&positions, &weights);
        for p in set.particles.iter_mut() {
            let pos = p.position();
            let next = Pose2::new(pos.x + 0.2, pos.y);
            let t = p.history.latest_time() + 1.0;
            p.history.push(next, t);
        }
        let mut rng = stream(3, StreamKind::Filter);
        let out = set.predict(&MotionModel::ConstantVelocity, sigma_p, &mut rng).unwrap();
        let mean_dx: f64 = out
            .particles
            .iter()
            .zip(&set.particles)
            .map(|(a, b)| a.position().x - b.position().x)
            .sum::<f64>()
            / n as f64;
        let band = 3.0 * sigma_p / 100.0;
        assert!((mean_dx - 0.2).abs() < band, "mean displacement {mean_dx}");
    }

    #[test]
    fn update_symmetry_and_three_sigma_ratio() {
        let mm = MeasurementModel::isotropic(0.1);
        let z = Pose2::new(1.0, 1.0);
        let sym = set_from_positions(
            &[Pose2::new(0.9, 1.0), Pose2::new(1.1, 1.0)],
            &[0.5, 0.5],
        )
        .update(z, &mm);
        assert!((sym.particles[0].weight - 0.5).abs() < 1e-12);

        let ratio_set = set_from_positions(
            &[Pose2::new(1.0, 1.0), Pose2::new(1.3, 1.0)],
            &[0.5, 0.5],
        )
        .update(z, &mm);
        let ratio = ratio_set.particles[0].weight / ratio_set.particles[1].weight;
        assert!((ratio - 4.5f64.exp()).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn update_matches_hand_bayes_on_three_particles() {
        let mm = MeasurementModel::isotropic(0.2);
        let z = Pose2::new(0.3, -0.1);
        let xs = [Pose2::new(0.0, 0.0), Pose2::new(0.5, 0.2), Pose2::new(-0.4, 0.1)];
        let prior = [0.5, 0.3, 0.2];
        let posterior = set_from_positions(&xs, &prior).update(z, &mm);

        // Independent brute-force normalization in plain likelihood space.
        let lik = |x: &Pose2| {
            let d2 = (z.x - x.x).powi(2) + (z.y - x.y).powi(2);
            (-d2 / (2.0 * 0.04)).exp() / (2.0 * std::f64::consts::PI * 0.04)
        };
        let unnorm: Vec<f64> = xs.iter().zip(&prior).map(|(x, w)| lik(x) * w).collect();
        let total: f64 = unnorm.iter().sum();
        for (p, expect) in posterior.particles.iter().zip(&unnorm) {
            assert!((p.weight - expect / total).abs() < 1e-12);
        }
        assert!(posterior.measurement_consistent());
    }

    #[test]
    fn resample_branches() {
        let ws = workspace();

        // Uniform weights: r = 1, unchanged.
        let uniform = set_from_positions(
            &[Pose2::new(1.0, 1.0), Pose2::new(2.0, 1.0), Pose2::new(3.0, 1.0)],
            &[1.0 / 3.0; 3],
        );
        let out = uniform.resample(0.9, 0.3, &ws, &mut stream(4, StreamKind::Filter));
        for (a, b) in out.particles.iter().zip(&uniform.particles) {
            assert_eq!(a.position(), b.position());
            assert_eq!(a.weight, b.weight);
        }

        // One dominant weight without a consistent measurement: lost track,
        // uniform reinitialization over the workspace.
        let mut collapsed_w = vec![1e-9; 100];
        collapsed_w[7] = 1.0 - 99.0 * 1e-9;
        let positions: Vec<Pose2> = (0..100).map(|i| Pose2::new(0.03 * i as f64, 0.5)).collect();
        let collapsed = set_from_positions(&positions, &collapsed_w);
        assert!(collapsed.effective_sample_ratio() < 0.3);
        let re = collapsed.resample(0.9, 0.3, &ws, &mut stream(5, StreamKind::Filter));
        for p in &re.particles {
            assert!((p.weight - 0.01).abs() < 1e-15);
            assert!(ws.bounds.contains(p.position()));
            assert!(p.history.is_fresh());
        }

        // Same collapse but the measurement was explained: keep the track,
        // multinomial resampling concentrates on the heavy particle.
        let mut explained = collapsed.clone();
        explained.measurement_consistent = true;
        let kept = explained.resample(0.9, 0.3, &ws, &mut stream(6, StreamKind::Filter));
        let near: usize = kept
            .particles
            .iter()
            .filter(|p| p.position().distance(positions[7]) < 1e-12)
            .count();
        assert!(near > 90, "multinomial should concentrate on the dominant particle");
    }

    #[test]
    fn multinomial_frequencies_match_weights() {
        let ws = workspace();
        let positions = [Pose2::new(0.5, 0.5), Pose2::new(1.5, 0.5), Pose2::new(2.5, 0.5)];
        let weights = [0.6, 0.3, 0.1];
        // r = 1/(0.46*3) = 0.725, between b and a: multinomial branch.
        let set = set_from_positions(&positions, &weights);
        let r = set.effective_sample_ratio();
        assert!(r > 0.3 && r < 0.9, "r = {r}");

        let mut rng = stream(7, StreamKind::Filter);
        let mut counts = [0usize; 3];
        let trials = 10_000 / set.len();
        for _ in 0..trials.max(3334) {
            let out = set.resample(0.9, 0.3, &ws, &mut rng);
            for p in &out.particles {
                let idx = positions.iter().position(|q| q.distance(p.position()) < 1e-12).unwrap();
                counts[idx] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        for (c, w) in counts.iter().zip(&weights) {
            let freq = *c as f64 / total as f64;
            assert!((freq - w).abs() < 0.02, "freq {freq} vs weight {w}");
        }
    }

    #[test]
    fn weighted_mean_examples_and_bruteforce() {
        let two = set_from_positions(&[Pose2::new(0.0, 0.0), Pose2::new(2.0, 0.0)], &[0.5, 0.5]);
        assert_eq!(two.weighted_mean(), Pose2::new(1.0, 0.0));

        let one = set_from_positions(&[Pose2::new(0.7, -0.3)], &[1.0]);
        assert_eq!(one.weighted_mean(), Pose2::new(0.7, -0.3));

        let mut rng = stream(8, StreamKind::Filter);
        let positions: Vec<Pose2> =
            (0..5).map(|_| Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut weights: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let set = set_from_positions(&positions, &weights);
        let mu = set.weighted_mean();
        let (mut ex, mut ey) = (0.0, 0.0);
        for (p, w) in positions.iter().zip(&weights) {
            ex += p.x * w;
            ey += p.y * w;
        }
        assert!((mu.x - ex).abs() < 1e-12 && (mu.y - ey).abs() < 1e-12);
    }

    #[test]
    fn covariance_examples_and_psd() {
        let same = set_from_positions(&[Pose2::new(1.0, 2.0); 3], &[1.0 / 3.0; 3]);
        let cz = same.covariance();
        assert_eq!(cz.determinant(), 0.0);
        assert!(cz.norm() < 1e-15);

        let two = set_from_positions(&[Pose2::new(0.0, 0.0), Pose2::new(2.0, 0.0)], &[0.5, 0.5]);
        let c = two.covariance();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-15 && c[(1, 1)].abs() < 1e-15);

        let mut rng = stream(9, StreamKind::Filter);
        let positions: Vec<Pose2> =
            (0..10).map(|_| Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let mut weights: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let set = set_from_positions(&positions, &weights);
        let c = set.covariance();

        // Brute-force two-pass computation.
        let mu = set.weighted_mean();
        let mut bf = [[0.0f64; 2]; 2];
        for (p, w) in positions.iter().zip(&weights) {
            let d = [p.x - mu.x, p.y - mu.y];
            for i in 0..2 {
                for j in 0..2 {
                    bf[i][j] += w * d[i] * d[j];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((c[(i, j)] - bf[i][j]).abs() < 1e-12);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(c);
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12), "covariance not PSD");
    }

    #[test]
    fn subsample_shapes_and_consistency() {
        let mut rng = stream(10, StreamKind::Filter);
        let full = ParticleSet::init(&region(), 500, 3, 0.5, 0.0, &mut rng).unwrap();

        let sub = full.subsample(25, &mut rng);
        assert_eq!(sub.len(), 25);
        for p in &sub.particles {
            assert!((p.weight - 0.04).abs() < 1e-15);
        }

        // Equal weights and n_h = n: systematic resampling visits every index
        // exactly once.
        let perm = full.subsample(500, &mut rng);
        let mut orig: Vec<u64> = full.positions().iter().map(|p| p.x.to_bits()).collect();
        let mut got: Vec<u64> = perm.positions().iter().map(|p| p.x.to_bits()).collect();
        orig.sort_unstable();
        got.sort_unstable();
        assert_eq!(orig, got);

        // Subsample mean tracks the weighted mean over repeated draws.
        let weights: Vec<f64> = (1..=6).map(|i| i as f64 / 21.0).collect();
        let positions: Vec<Pose2> = (0..6).map(|i| Pose2::new(i as f64, 0.0)).collect();
        let set = set_from_positions(&positions, &weights);
        let target = set.weighted_mean();
        let n_h = 4;
        let reps = 4000;
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        for _ in 0..reps {
            let s = set.subsample(n_h, &mut rng);
            let m = s.weighted_mean().x;
            acc += m;
            acc_sq += m * m;
        }
        let mean = acc / reps as f64;
        let std = (acc_sq / reps as f64 - mean * mean).sqrt();
        assert!(
            (mean - target.x).abs() < 3.0 * std / (reps as f64).sqrt() + 1e-3,
            "subsample mean {mean} vs {}",
            target.x
        );
    }

    #[test]
    fn predict_update_contracts_uncertainty() {
        let mut rng = stream(11, StreamKind::Filter);
        let positions: Vec<Pose2> = (0..200)
            .map(|_| Pose2::new(1.0 + rng.random_range(-0.01..0.01), 1.0 + rng.random_range(-0.01..0.01)))
            .collect();
        let weights = vec![1.0 / 200.0; 200];
        let mut set = set_from_positions(&positions, &weights);
        for p in set.particles.iter_mut() {
            let pos = p.position();
            let t = p.history.latest_time() + 1.0;
            p.history.push(pos, t);
        }
        let predicted = set.predict(&MotionModel::ConstantVelocity, 0.05, &mut rng).unwrap();
        let det_before = predicted.covariance().determinant();
        let updated = predicted.update(predicted.weighted_mean(), &MeasurementModel::isotropic(0.05));
        let det_after = updated.covariance().determinant();
        assert!(det_after < det_before, "update must contract uncertainty: {det_before} -> {det_after}");
    }

    #[test]
    fn pipeline_is_deterministic() {
        let ws = workspace();
        let mm = MeasurementModel::isotropic(0.1);
        let run = |seed: u64| -> Vec<u64> {
            let mut rng = stream(seed, StreamKind::Filter);
            let mut set = ParticleSet::init(&region(), 100, 3, 0.5, 0.0, &mut rng).unwrap();
            for k in 0..10 {
                set = set.predict(&MotionModel::ConstantVelocity, 0.05, &mut rng).unwrap();
                set = set.update(Pose2::new(1.0 + 0.05 * k as f64, 1.0), &mm);
                set = set.resample(0.9, 0.3, &ws, &mut rng);
                assert!(set.is_normalized());
            }
            set.positions().iter().flat_map(|p| [p.x.to_bits(), p.y.to_bits()]).collect()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn measurement_model_validation() {
        assert!(matches!(
            MeasurementModel::new(Matrix2::new(1.0, 0.5, 0.2, 1.0)),
            Err(FilterError::Asymmetric)
        ));
        assert!(matches!(
            MeasurementModel::new(Matrix2::new(1.0, 2.0, 2.0, 1.0)),
            Err(FilterError::NotPositiveDefinite)
        ));
        let ok = MeasurementModel::new(Matrix2::new(0.01, 0.002, 0.002, 0.02)).unwrap();
        let empirical_cov_check = {
            let mut rng = stream(12, StreamKind::Measurement);
            let n = 10_000;
            let mut sum = [0.0f64; 2];
            let mut sq = [[0.0f64; 2]; 2];
            for _ in 0..n {
                let z = ok.sample(Pose2::new(0.0, 0.0), &mut rng);
                sum[0] += z.x;
                sum[1] += z.y;
                sq[0][0] += z.x * z.x;
                sq[0][1] += z.x * z.y;
                sq[1][1] += z.y * z.y;
            }
            let mean = [sum[0] / n as f64, sum[1] / n as f64];
            [
                sq[0][0] / n as f64 - mean[0] * mean[0],
                sq[0][1] / n as f64 - mean[0] * mean[1],
                sq[1][1] / n as f64 - mean[1] * mean[1],
            ]
        };
        assert!((empirical_cov_check[0] - 0.01).abs() < 0.01 * 0.05 * 10.0);
        assert!((empirical_cov_check[2] - 0.02).abs() < 0.02 * 0.05 * 10.0);
    }
}
