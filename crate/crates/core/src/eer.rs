//! Particle-based entropy estimates and expected-entropy-reduction waypoint
//! selection.
//!
//! The estimation entropy is approximated from the weighted particles in two
//! forms: one that conditions on a measurement (posterior form) and one for
//! prediction-only steps (prior form). The planner scores each candidate
//! waypoint by the expected drop in entropy a future measurement taken there
//! would produce: a subsample of particles is rolled out to the planning
//! horizon, hypothetical measurements are generated from them, and each
//! hypothetical either lands inside the candidate's footprint (posterior
//! entropy) or misses it (prior entropy). All inner sums run in log space
//! with max-shift.
//!
//! One subsample, one rollout-noise realization, and one set of hypothetical
//! measurements are drawn per planning cycle and shared across candidates, so
//! the argmax compares candidates on identical Monte Carlo noise.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::filter::{MeasurementModel, ParticleSet};
use crate::geometry::{Pose2, SensorFootprint, Workspace};
use crate::motion::mat::Mat;
use crate::motion::{log_gauss_iso, MotionError, MotionModel};

/// A candidate goal position for the agent at `horizon` filter steps ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Pose2,
    pub horizon: usize,
}

/// Planner parameterization.
#[derive(Debug, Clone)]
pub struct EerConfig {
    /// Particles subsampled for entropy evaluation.
    pub n_h: usize,
    /// Hypothetical future measurements per cycle.
    pub n_m: usize,
    /// Planning horizon in filter steps.
    pub horizon: usize,
    /// Process noise per step (meters).
    pub sigma_p: f64,
    /// Measurement model used for hypothetical measurements.
    pub measurement: MeasurementModel,
    /// Candidate grid is grid_n x grid_n over the reachable disc.
    pub grid_n: usize,
    /// Agent top speed (m/s), bounding the reachable disc.
    pub agent_speed: f64,
    /// Filter step period (seconds).
    pub step_dt: f64,
    /// Footprint half extents bound to a candidate position.
    pub fov_half_extents: (f64, f64),
    /// When true the planner also rules out hypothetical measurements inside
    /// known occlusion zones (ablation; the occlusion region is normally
    /// unknown to the agent).
    pub known_occlusion: bool,
}

/// Entropy value in nats plus a flag for the all-underflow guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub nats: f64,
    pub degenerate: bool,
}

impl EntropyEstimate {
    fn finite(nats: f64) -> Self {
        Self { nats, degenerate: false }
    }

    fn degenerate() -> Self {
        Self { nats: f64::INFINITY, degenerate: true }
    }

    /// Replace a degenerate estimate with the uninformative fallback: the
    /// entropy of a uniform density over the workspace.
    pub fn resolve(self, ws: &Workspace) -> f64 {
        if self.degenerate {
            ws.bounds.area().ln()
        } else {
            self.nats
        }
    }
}

/// Scored candidates for one planning cycle.
#[derive(Debug, Clone)]
pub struct EerResult {
    /// Candidate waypoints with their expected entropy reduction, in
    /// construction order (hover first, then the grid row-major).
    pub candidates: Vec<(Waypoint, f64)>,
    /// Argmax index; ties break to the smallest index.
    pub chosen_index: usize,
    /// Entropy of the current estimate (the minuend of the reduction).
    pub prior_entropy: f64,
    /// True when any entropy term hit the uninformative fallback.
    pub degenerate: bool,
    /// Planning wall time in milliseconds (informational; not part of the
    /// deterministic result).
    pub wall_ms: f64,
}

impl EerResult {
    pub fn chosen(&self) -> Waypoint {
        self.candidates[self.chosen_index].0
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn ln_or_neg_inf(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Posterior-form entropy from log-space ingredients.
///
/// `log_lik[i]` is the measurement log-likelihood at particle i,
/// `log_kernel[(i, j)]` the transition log-density of particle i under the
/// transition from previous particle j, `w_prev` the pre-update weights, and
/// `w_post` the post-update weights.
pub fn entropy_posterior_terms(
    log_lik: &[f64],
    log_kernel: &Mat,
    w_prev: &[f64],
    w_post: &[f64],
) -> EntropyEstimate {
    let n = log_lik.len();
    assert_eq!(log_kernel.shape(), (n, n));
    assert_eq!(w_prev.len(), n);
    assert_eq!(w_post.len(), n);

    let ln_w_prev: Vec<f64> = w_prev.iter().map(|&w| ln_or_neg_inf(w)).collect();
    let first = log_sum_exp((0..n).map(|i| log_lik[i] + ln_w_prev[i]));
    if !first.is_finite() {
        return EntropyEstimate::degenerate();
    }

    let mut second = 0.0;
    for i in 0..n {
        if w_post[i] == 0.0 {
            continue;
        }
        let mix = log_sum_exp((0..n).map(|j| log_kernel.get(i, j) + ln_w_prev[j]));
        let term = log_lik[i] + mix;
        if !term.is_finite() {
            return EntropyEstimate::degenerate();
        }
        second += term * w_post[i];
    }
    EntropyEstimate::finite(first - second)
}

/// Prior-form entropy (no measurement) from log-space ingredients.
pub fn entropy_prior_terms(log_kernel: &Mat, w_prev: &[f64]) -> EntropyEstimate {
    let n = w_prev.len();
    assert_eq!(log_kernel.shape(), (n, n));
    let ln_w_prev: Vec<f64> = w_prev.iter().map(|&w| ln_or_neg_inf(w)).collect();
    let mut total = 0.0;
    for i in 0..n {
        if w_prev[i] == 0.0 {
            continue;
        }
        let mix = log_sum_exp((0..n).map(|j| log_kernel.get(i, j) + ln_w_prev[j]));
        if !mix.is_finite() {
            return EntropyEstimate::degenerate();
        }
        total += mix * w_prev[i];
    }
    EntropyEstimate::finite(-total)
}

/// One-step transition log-kernel between two aligned particle sets:
/// entry (i, j) is the log-density of `sub` particle i under the model
/// transition of `prev` particle j.
fn one_step_log_kernel(
    sub: &ParticleSet,
    prev: &ParticleSet,
    model: &MotionModel,
    sigma_p: f64,
) -> Result<Mat, MotionError> {
    let n = sub.len();
    let means: Vec<Pose2> = match model {
        MotionModel::Dmmn(params) => {
            let windows: Vec<&crate::motion::HistoryWindow> =
                prev.particles.iter().map(|p| &p.history).collect();
            crate::motion::forward_batch(params, &windows)?
        }
        MotionModel::ConstantVelocity => prev
            .particles
            .iter()
            .map(|p| model.transition_mean(&p.history))
            .collect::<Result<_, _>>()?,
    };
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        let xi = sub.particles[i].position();
        for j in 0..n {
            k.set(i, j, log_gauss_iso(xi, means[j], sigma_p));
        }
    }
    Ok(k)
}

/// Entropy of the estimate after conditioning on measurement `z`.
///
/// `sub` holds the current particles with their post-update weights; `prev`
/// holds the index-aligned previous particles with pre-update weights (the
/// transition kernel is evaluated from their histories).
pub fn entropy_posterior(
    sub: &ParticleSet,
    prev: &ParticleSet,
    z: Pose2,
    model: &MotionModel,
    mm: &MeasurementModel,
    sigma_p: f64,
) -> Result<EntropyEstimate, MotionError> {
    assert_eq!(sub.len(), prev.len(), "sub and prev must be index-aligned");
    let log_lik: Vec<f64> = sub.particles.iter().map(|p| mm.log_likelihood(z, p.position())).collect();
    let log_kernel = one_step_log_kernel(sub, prev, model, sigma_p)?;
    Ok(entropy_posterior_terms(&log_lik, &log_kernel, &prev.weights(), &sub.weights()))
}

/// Entropy of the predicted estimate when no measurement is available.
pub fn entropy_prior(
    sub: &ParticleSet,
    prev: &ParticleSet,
    model: &MotionModel,
    sigma_p: f64,
) -> Result<EntropyEstimate, MotionError> {
    assert_eq!(sub.len(), prev.len(), "sub and prev must be index-aligned");
    let log_kernel = one_step_log_kernel(sub, prev, model, sigma_p)?;
    Ok(entropy_prior_terms(&log_kernel, &prev.weights()))
}

/// Filter state handed to the planner: the post-update particle set together
/// with what the entropy formulas need about the step that produced it.
#[derive(Debug, Clone)]
pub struct BeliefSnapshot {
    /// Post-update, pre-resample particle set.
    pub posterior: ParticleSet,
    /// Pre-update weights, aligned with `posterior.particles`.
    pub prior_weights: Vec<f64>,
    /// The measurement incorporated at this step, if any.
    pub measurement: Option<Pose2>,
}

impl BeliefSnapshot {
    /// The prior (pre-update) view of the same particles.
    pub fn prior_set(&self) -> ParticleSet {
        let mut set = self.posterior.clone();
        for (p, w) in set.particles.iter_mut().zip(&self.prior_weights) {
            p.weight = *w;
        }
        set
    }
}

/// Everything drawn once per planning cycle and shared across candidates.
struct PlanningDraw {
    /// Posterior-form entropy for each hypothetical measurement.
    hypo: Vec<HypoMeasurement>,
    /// Prior-form entropy of the rolled-out cloud (the no-measurement branch).
    h_rolled_prior: EntropyEstimate,
    /// Entropy of the current estimate (the minuend).
    h_now: EntropyEstimate,
}

struct HypoMeasurement {
    z: Pose2,
    /// Mixture log-likelihood of this hypothetical under the rolled cloud.
    log_mix: f64,
    h_post: EntropyEstimate,
}

impl PlanningDraw {
    fn build(
        belief: &BeliefSnapshot,
        model: &MotionModel,
        cfg: &EerConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, MotionError> {
        let n_h = cfg.n_h;
        let h_now = current_entropy(belief, model, cfg, rng)?;

        // Subsample the posterior and roll each particle to the horizon.
        let sub = belief.posterior.subsample(n_h, rng);
        let mut rolled_means = Vec::with_capacity(n_h);
        for p in &sub.particles {
            rolled_means.push(model.rollout(&p.history, cfg.horizon)?);
        }
        // Independent increments accumulate to horizon * sigma_p^2 per axis.
        let sigma_roll = cfg.sigma_p * (cfg.horizon as f64).sqrt();
        let noise = Normal::new(0.0, sigma_roll).expect("sigma must be non-negative");
        let rolled: Vec<Pose2> = rolled_means
            .iter()
            .map(|m| Pose2::new(m.x + noise.sample(rng), m.y + noise.sample(rng)))
            .collect();

        // Horizon transition kernel between rolled positions and the rollout
        // means of the subsampled particles.
        let mut log_kernel = Mat::zeros(n_h, n_h);
        for i in 0..n_h {
            for j in 0..n_h {
                log_kernel.set(i, j, log_gauss_iso(rolled[i], rolled_means[j], sigma_roll));
            }
        }

        let w_uniform = vec![1.0 / n_h as f64; n_h];
        let h_rolled_prior = entropy_prior_terms(&log_kernel, &w_uniform);

        // Hypothetical measurements: draw a rolled particle, push it through
        // the measurement model. Entropy conditioned on each hypothetical is
        // candidate-independent; only the footprint test depends on the
        // candidate.
        let ln_w = -(n_h as f64).ln();
        let hypo = (0..cfg.n_m)
            .map(|_| {
                let idx = rng.random_range(0..n_h);
                let z = cfg.measurement.sample(rolled[idx], rng);
                let log_lik: Vec<f64> =
                    rolled.iter().map(|x| cfg.measurement.log_likelihood(z, *x)).collect();
                let log_mix = log_sum_exp(log_lik.iter().map(|ll| ll + ln_w));
                let w_post = posterior_weights(&log_lik, &w_uniform);
                let h_post = entropy_posterior_terms(&log_lik, &log_kernel, &w_uniform, &w_post);
                HypoMeasurement { z, log_mix, h_post }
            })
            .collect();

        Ok(Self { hypo, h_rolled_prior, h_now })
    }

    /// Expected entropy reduction for one candidate, reusing the shared draw.
    fn eer_for(&self, wp: &Waypoint, cfg: &EerConfig, ws: &Workspace) -> (f64, bool) {
        let fov = SensorFootprint::new(wp.position, cfg.fov_half_extents);
        // Likelihood-weighted average over the hypothetical measurements.
        let total_log = log_sum_exp(self.hypo.iter().map(|h| h.log_mix));
        let mut expected = 0.0;
        let mut degenerate = self.h_now.degenerate;
        for h in &self.hypo {
            let weight = if total_log.is_finite() {
                (h.log_mix - total_log).exp()
            } else {
                1.0 / self.hypo.len() as f64
            };
            let observable = fov.contains(h.z) && !(cfg.known_occlusion && ws.is_occluded(h.z));
            let entropy = if observable { h.h_post } else { self.h_rolled_prior };
            degenerate |= entropy.degenerate;
            expected += weight * entropy.resolve(ws);
        }
        (self.h_now.resolve(ws) - expected, degenerate)
    }
}

fn posterior_weights(log_lik: &[f64], w_prev: &[f64]) -> Vec<f64> {
    let terms: Vec<f64> =
        log_lik.iter().zip(w_prev).map(|(ll, w)| ll + ln_or_neg_inf(*w)).collect();
    let total = log_sum_exp(terms.iter().copied());
    if !total.is_finite() {
        return w_prev.to_vec();
    }
    terms.iter().map(|t| (t - total).exp()).collect()
}

/// Entropy of the current estimate: the posterior form when this step had a
/// measurement, the prior form otherwise, both on a subsample drawn from the
/// pre-update weights.
fn current_entropy(
    belief: &BeliefSnapshot,
    model: &MotionModel,
    cfg: &EerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EntropyEstimate, MotionError> {
    let _ = model;
    let n_h = cfg.n_h.min(belief.posterior.len());
    let sub = belief.prior_set().subsample(n_h, rng);

    // One-step kernel from the cached transition means of the subsample.
    let mut log_kernel = Mat::zeros(n_h, n_h);
    for i in 0..n_h {
        let xi = sub.particles[i].position();
        for j in 0..n_h {
            log_kernel.set(i, j, log_gauss_iso(xi, sub.particles[j].pred_mean, cfg.sigma_p));
        }
    }
    let w_uniform = vec![1.0 / n_h as f64; n_h];
    match belief.measurement {
        Some(z) => {
            let log_lik: Vec<f64> = sub
                .particles
                .iter()
                .map(|p| cfg.measurement.log_likelihood(z, p.position()))
                .collect();
            let w_post = posterior_weights(&log_lik, &w_uniform);
            Ok(entropy_posterior_terms(&log_lik, &log_kernel, &w_uniform, &w_post))
        }
        None => Ok(entropy_prior_terms(&log_kernel, &w_uniform)),
    }
}

/// Candidate waypoints: the agent's current position (hover) plus a regular
/// grid over the disc reachable within the planning horizon, clipped to the
/// workspace.
pub fn candidate_waypoints(
    agent: Pose2,
    v_max: f64,
    dt: f64,
    cfg: &EerConfig,
    ws: &Workspace,
) -> Vec<Waypoint> {
    assert!(v_max > 0.0, "agent speed must be positive");
    let radius = v_max * cfg.horizon as f64 * dt;
    let mut out = vec![Waypoint { position: ws.bounds.clamp(agent), horizon: cfg.horizon }];
    let n = cfg.grid_n.max(1);
    for gy in 0..n {
        for gx in 0..n {
            let fx = if n == 1 { 0.0 } else { gx as f64 / (n - 1) as f64 * 2.0 - 1.0 };
            let fy = if n == 1 { 0.0 } else { gy as f64 / (n - 1) as f64 * 2.0 - 1.0 };
            let p = Pose2::new(agent.x + fx * radius, agent.y + fy * radius);
            if p.distance(agent) > radius + 1e-12 {
                continue;
            }
            let clipped = ws.bounds.clamp(p);
            if out.iter().any(|w| w.position == clipped) {
                continue;
            }
            out.push(Waypoint { position: clipped, horizon: cfg.horizon });
        }
    }
    out
}

/// Expected entropy reduction of a single waypoint, drawing a fresh planning
/// sample from `rng`. Returns the value in nats and the degeneracy flag.
pub fn expected_entropy_reduction(
    belief: &BeliefSnapshot,
    wp: &Waypoint,
    model: &MotionModel,
    cfg: &EerConfig,
    ws: &Workspace,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, bool), MotionError> {
    let draw = PlanningDraw::build(belief, model, cfg, rng)?;
    Ok(draw.eer_for(wp, cfg, ws))
}

/// Index of the maximum value; ties break to the smallest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Score every candidate waypoint with a shared planning draw and return the
/// argmax. Deterministic for a given rng state.
pub fn best_waypoint(
    belief: &BeliefSnapshot,
    agent: Pose2,
    model: &MotionModel,
    cfg: &EerConfig,
    ws: &Workspace,
    rng: &mut ChaCha8Rng,
) -> Result<EerResult, MotionError> {
    let t0 = Instant::now();
    let draw = PlanningDraw::build(belief, model, cfg, rng)?;
    let candidates = candidate_waypoints(agent, cfg.agent_speed, cfg.step_dt, cfg, ws);
    let mut scored = Vec::with_capacity(candidates.len());
    let mut degenerate = false;
    for wp in candidates {
        let (eer, d) = draw.eer_for(&wp, cfg, ws);
        degenerate |= d;
        scored.push((wp, eer));
    }
    let chosen_index = argmax_first(&scored.iter().map(|(_, e)| *e).collect::<Vec<_>>());
    Ok(EerResult {
        candidates: scored,
        chosen_index,
        prior_entropy: draw.h_now.resolve(ws),
        degenerate,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}
