//! Learned target motion model and baselines.
//!
//! The deep motion model network (DMMN) is a small transformer: a position
//! encoder (linear embedding of centered coordinates plus a sinusoidal
//! encoding of each sample's relative timestamp), a stack of multi-head
//! self-attention encoder layers, and a linear decoder that emits a one-step
//! displacement. Centering every input window on its newest pose makes the
//! prediction translation-invariant by construction.
//!
//! A constant-velocity extrapolator serves as the baseline model, and both
//! share one interface ([`MotionModel`]) so the particle filter can run with
//! either.

pub mod mat;
pub mod tape;
mod io;
mod train;

pub use io::{load_params, save_params, WeightsError};
pub use train::{train, TrainConfig, TrainError, TrainOutcome};

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::Pose2;
use mat::Mat;

/// Speed range (m/s) from which a fresh particle's velocity is drawn.
pub const CV_SPEED_RANGE: (f64, f64) = (0.0, 0.7);

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("window has {got} poses, model needs exactly {need}")]
    WindowLength { need: usize, got: usize },
    #[error("non-finite values produced at stage '{stage}'")]
    NonFinite { stage: String },
}

/// A sliding window of the target's most recent positions with their
/// timestamps. The newest pose is the current state hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    poses: Vec<Pose2>,
    times: Vec<f64>,
    /// Nominal step between samples, seconds.
    pub dt: f64,
    fresh: bool,
}

impl HistoryWindow {
    /// Window for a brand-new hypothesis: the pose replicated `k_in` times at
    /// nominal spacing, marked fresh until a real transition is appended.
    pub fn replicate(pose: Pose2, k_in: usize, dt: f64, t_now: f64) -> Self {
        assert!(k_in >= 2, "window needs at least two entries");
        assert!(dt > 0.0);
        let times = (0..k_in).map(|i| t_now - (k_in - 1 - i) as f64 * dt).collect();
        Self { poses: vec![pose; k_in], times, dt, fresh: true }
    }

    /// Window from an observed series. Panics unless times strictly increase.
    pub fn from_series(poses: Vec<Pose2>, times: Vec<f64>, dt: f64) -> Self {
        assert_eq!(poses.len(), times.len());
        assert!(poses.len() >= 2);
        assert!(times.windows(2).all(|w| w[1] > w[0]), "times must strictly increase");
        assert!(dt > 0.0);
        Self { poses, times, dt, fresh: false }
    }

    /// Append the next pose, dropping the oldest. Clears the fresh flag.
    pub fn push(&mut self, pose: Pose2, time: f64) {
        assert!(time > *self.times.last().unwrap(), "times must strictly increase");
        self.poses.rotate_left(1);
        self.times.rotate_left(1);
        *self.poses.last_mut().unwrap() = pose;
        *self.times.last_mut().unwrap() = time;
        self.fresh = false;
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn latest(&self) -> Pose2 {
        *self.poses.last().unwrap()
    }

    pub fn latest_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn poses(&self) -> &[Pose2] {
        &self.poses
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// True until the first real transition is appended; fresh windows carry
    /// no usable velocity information.
    pub fn is_fresh(&self) -> bool {
        self.fresh
    }

    /// Translate the window so its newest pose is the origin. Returns the
    /// centered window and the offset that was removed.
    pub fn center(&self) -> (HistoryWindow, Pose2) {
        let offset = self.latest();
        let centered = HistoryWindow {
            poses: self.poses.iter().map(|p| Pose2::new(p.x - offset.x, p.y - offset.y)).collect(),
            times: self.times.clone(),
            dt: self.dt,
            fresh: self.fresh,
        };
        (centered, offset)
    }
}

/// Architecture of the DMMN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmmnHyper {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub k_in: usize,
    /// Base of the sinusoidal timestamp encoding.
    pub pe_base: f64,
}

impl Default for DmmnHyper {
    fn default() -> Self {
        Self { d_model: 32, heads: 4, layers: 2, d_ff: 64, k_in: 10, pe_base: 1.0e4 }
    }
}

impl DmmnHyper {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(format!("d_model {} must be positive and even", self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(format!("d_model {} must be divisible by heads {}", self.d_model, self.heads));
        }
        if self.layers == 0 {
            return Err("layers must be >= 1".into());
        }
        if self.d_ff == 0 {
            return Err("d_ff must be >= 1".into());
        }
        if self.k_in < 2 {
            return Err(format!("k_in {} must be >= 2", self.k_in));
        }
        if !(self.pe_base > 1.0) {
            return Err(format!("pe_base {} must exceed 1", self.pe_base));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// One encoder layer: multi-head self-attention and a feed-forward block,
/// each followed by a residual connection and layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub ln1_gain: Mat,
    pub ln1_bias: Mat,
    pub ff_w1: Mat,
    pub ff_b1: Mat,
    pub ff_w2: Mat,
    pub ff_b2: Mat,
    pub ln2_gain: Mat,
    pub ln2_bias: Mat,
}

/// All learned weights of the DMMN plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct DmmnParams {
    pub hyper: DmmnHyper,
    pub embed_w: Mat,
    pub embed_b: Mat,
    pub layers: Vec<EncoderLayer>,
    pub dec_w: Mat,
    pub dec_b: Mat,
}

impl DmmnParams {
    /// Xavier-uniform initialization, deterministic for a given rng state.
    pub fn init(hyper: DmmnHyper, rng: &mut ChaCha8Rng) -> Self {
        hyper.validate().expect("invalid architecture");
        let d = hyper.d_model;
        let xavier = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| -> Mat {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Mat::from_vec(rows, cols, data)
        };
        let layers = (0..hyper.layers)
            .map(|_| EncoderLayer {
                wq: xavier(d, d, rng),
                bq: Mat::zeros(1, d),
                wk: xavier(d, d, rng),
                bk: Mat::zeros(1, d),
                wv: xavier(d, d, rng),
                bv: Mat::zeros(1, d),
                wo: xavier(d, d, rng),
                bo: Mat::zeros(1, d),
                ln1_gain: Mat::from_vec(1, d, vec![1.0; d]),
                ln1_bias: Mat::zeros(1, d),
                ff_w1: xavier(d, hyper.d_ff, rng),
                ff_b1: Mat::zeros(1, hyper.d_ff),
                ff_w2: xavier(hyper.d_ff, d, rng),
                ff_b2: Mat::zeros(1, d),
                ln2_gain: Mat::from_vec(1, d, vec![1.0; d]),
                ln2_bias: Mat::zeros(1, d),
            })
            .collect();
        Self {
            hyper,
            embed_w: xavier(2, d, rng),
            embed_b: Mat::zeros(1, d),
            layers,
            dec_w: xavier(d, 2, rng),
            dec_b: Mat::zeros(1, 2),
        }
    }

    /// All weight tensors in the canonical (persisted) order.
    pub(crate) fn tensors(&self) -> Vec<&Mat> {
        let mut v = vec![&self.embed_w, &self.embed_b];
        for l in &self.layers {
            v.extend([
                &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain, &l.ln1_bias,
                &l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2, &l.ln2_gain, &l.ln2_bias,
            ]);
        }
        v.extend([&self.dec_w, &self.dec_b]);
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v = vec![&mut self.embed_w, &mut self.embed_b];
        for l in &mut self.layers {
            v.extend([
                &mut l.wq, &mut l.bq, &mut l.wk, &mut l.bk, &mut l.wv, &mut l.bv, &mut l.wo,
                &mut l.bo, &mut l.ln1_gain, &mut l.ln1_bias, &mut l.ff_w1, &mut l.ff_b1,
                &mut l.ff_w2, &mut l.ff_b2, &mut l.ln2_gain, &mut l.ln2_bias,
            ]);
        }
        v.extend([&mut self.dec_w, &mut self.dec_b]);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

/// Sinusoidal encoding of the window's relative timestamps, one row per
/// sample. Encoding the timestamp rather than the index keeps irregular gaps
/// (missed detections) distinguishable from regular steps.
fn positional_encoding(times: &[f64], dt: f64, hyper: &DmmnHyper) -> Mat {
    let t_last = *times.last().unwrap();
    let taus: Vec<f64> = times.iter().map(|t| (t - t_last) / dt).collect();
    positional_encoding_taus(&taus, hyper)
}

fn positional_encoding_taus(taus: &[f64], hyper: &DmmnHyper) -> Mat {
    let d = hyper.d_model;
    let freqs: Vec<f64> =
        (0..d / 2).map(|m| hyper.pe_base.powf(-2.0 * m as f64 / d as f64)).collect();
    let mut pe = Mat::zeros(taus.len(), d);
    for (i, &tau) in taus.iter().enumerate() {
        let row = pe.row_mut(i);
        for (m, &freq) in freqs.iter().enumerate() {
            row[2 * m] = (tau * freq).sin();
            row[2 * m + 1] = (tau * freq).cos();
        }
    }
    pe
}

fn check_finite(m: &Mat, stage: &str) -> Result<(), MotionError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(MotionError::NonFinite { stage: stage.to_string() })
    }
}

/// One-step prediction for a batch of windows. All windows must have length
/// `k_in`. Returns the predicted pose (decoder displacement plus the window's
/// own offset) for each window.
pub fn forward_batch(params: &DmmnParams, windows: &[&HistoryWindow]) -> Result<Vec<Pose2>, MotionError> {
    let h = &params.hyper;
    let k = h.k_in;
    for w in windows {
        if w.len() != k {
            return Err(MotionError::WindowLength { need: k, got: w.len() });
        }
    }
    let b = windows.len();
    if b == 0 {
        return Ok(Vec::new());
    }

    // Stack centered coordinates row-wise: (b*k) x 2.
    let mut offsets = Vec::with_capacity(b);
    let mut x0 = Mat::zeros(b * k, 2);
    for (wi, w) in windows.iter().enumerate() {
        let offset = w.latest();
        offsets.push(offset);
        for (i, p) in w.poses().iter().enumerate() {
            x0.set(wi * k + i, 0, p.x - offset.x);
            x0.set(wi * k + i, 1, p.y - offset.y);
        }
    }

    let mut e = mat::add_row_broadcast(&mat::matmul(&x0, &params.embed_w), &params.embed_b);
    // Add the timestamp encoding in place. Particle windows usually advance
    // in lockstep, so consecutive windows share the same relative-time
    // pattern; reuse the encoded block whenever they do.
    let mut prev_taus: Vec<f64> = Vec::new();
    let mut pe_block = Mat::zeros(k, h.d_model);
    for (wi, w) in windows.iter().enumerate() {
        let t_last = *w.times().last().unwrap();
        let taus: Vec<f64> = w.times().iter().map(|t| (t - t_last) / w.dt).collect();
        if taus != prev_taus {
            pe_block = positional_encoding_taus(&taus, h);
            prev_taus = taus;
        }
        for i in 0..k {
            for (ev, pv) in e.row_mut(wi * k + i).iter_mut().zip(pe_block.row(i)) {
                *ev += pv;
            }
        }
    }
    check_finite(&e, "embed")?;

    let dh = h.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    // Scratch reused across every window and head.
    let mut qh = Mat::zeros(k, dh);
    let mut kh = Mat::zeros(k, dh);
    let mut vh = Mat::zeros(k, dh);
    let mut attn = Mat::zeros(k, k);
    let mut oh = Mat::zeros(k, dh);
    for (li, layer) in params.layers.iter().enumerate() {
        let q = mat::add_row_broadcast(&mat::matmul(&e, &layer.wq), &layer.bq);
        let kk = mat::add_row_broadcast(&mat::matmul(&e, &layer.wk), &layer.bk);
        let v = mat::add_row_broadcast(&mat::matmul(&e, &layer.wv), &layer.bv);

        // Self-attention within each window block, one head at a time.
        let mut heads_out = Mat::zeros(b * k, h.d_model);
        for wi in 0..b {
            for head in 0..h.heads {
                let col = head * dh;
                for i in 0..k {
                    qh.row_mut(i).copy_from_slice(&q.row(wi * k + i)[col..col + dh]);
                    kh.row_mut(i).copy_from_slice(&kk.row(wi * k + i)[col..col + dh]);
                    vh.row_mut(i).copy_from_slice(&v.row(wi * k + i)[col..col + dh]);
                }
                mat::matmul_nt_into(&qh, &kh, &mut attn);
                for s in attn.data.iter_mut() {
                    *s *= scale;
                }
                mat::softmax_rows_inplace(&mut attn);
                mat::matmul_into(&attn, &vh, &mut oh);
                for i in 0..k {
                    heads_out.row_mut(wi * k + i)[col..col + dh].copy_from_slice(oh.row(i));
                }
            }
        }
        let projected = mat::add_row_broadcast(&mat::matmul(&heads_out, &layer.wo), &layer.bo);
        e = mat::layer_norm_rows(&mat::add(&e, &projected), &layer.ln1_gain, &layer.ln1_bias);
        check_finite(&e, &format!("layer{li}.attention"))?;

        let f1 = mat::relu(&mat::add_row_broadcast(&mat::matmul(&e, &layer.ff_w1), &layer.ff_b1));
        let f2 = mat::add_row_broadcast(&mat::matmul(&f1, &layer.ff_w2), &layer.ff_b2);
        e = mat::layer_norm_rows(&mat::add(&e, &f2), &layer.ln2_gain, &layer.ln2_bias);
        check_finite(&e, &format!("layer{li}.ffn"))?;
    }

    // Decode the newest token of each window to a displacement.
    let mut lasts = Mat::zeros(b, h.d_model);
    for wi in 0..b {
        lasts.row_mut(wi).copy_from_slice(e.row(wi * k + (k - 1)));
    }
    let disp = mat::add_row_broadcast(&mat::matmul(&lasts, &params.dec_w), &params.dec_b);
    check_finite(&disp, "decoder")?;
    let out = offsets
        .iter()
        .enumerate()
        .map(|(wi, offset)| Pose2::new(offset.x + disp.get(wi, 0), offset.y + disp.get(wi, 1)))
        .collect();
    Ok(out)
}

/// One-step prediction for a single window.
pub fn forward(params: &DmmnParams, window: &HistoryWindow) -> Result<Pose2, MotionError> {
    Ok(forward_batch(params, &[window])?[0])
}

/// Autoregressive `k`-step prediction: each step appends the prediction to
/// the window and re-runs the network. Returns the final predicted pose.
pub fn rollout(params: &DmmnParams, window: &HistoryWindow, k: usize) -> Result<Pose2, MotionError> {
    assert!(k >= 1, "rollout needs at least one step");
    let mut w = window.clone();
    let mut pose = w.latest();
    for _ in 0..k {
        pose = forward(params, &w)?;
        let t = w.latest_time() + w.dt;
        w.push(pose, t);
    }
    Ok(pose)
}

/// Constant-velocity baseline: extrapolate the change between the last two
/// poses. A fresh window carries no velocity, so one is drawn uniformly from
/// the configured speed range with uniform heading.
pub fn cv_predict(window: &HistoryWindow, rng: &mut ChaCha8Rng) -> Pose2 {
    assert!(window.len() >= 2, "constant-velocity needs two poses");
    let last = window.latest();
    if window.is_fresh() {
        let speed = rng.random_range(CV_SPEED_RANGE.0..=CV_SPEED_RANGE.1);
        let heading = rng.random_range(0.0..2.0 * PI);
        let step = speed * window.dt;
        return Pose2::new(last.x + step * heading.cos(), last.y + step * heading.sin());
    }
    cv_extrapolate(window)
}

/// Deterministic constant-velocity extrapolation; a fresh window predicts
/// "stay put" (the mean of the random-velocity draw).
fn cv_extrapolate(window: &HistoryWindow) -> Pose2 {
    let n = window.len();
    let last = window.poses()[n - 1];
    if window.is_fresh() {
        return last;
    }
    let prev = window.poses()[n - 2];
    let dt_obs = window.times()[n - 1] - window.times()[n - 2];
    let vx = (last.x - prev.x) / dt_obs;
    let vy = (last.y - prev.y) / dt_obs;
    Pose2::new(last.x + vx * window.dt, last.y + vy * window.dt)
}

/// The transition model used by the estimator: either the learned network or
/// the constant-velocity baseline.
#[derive(Debug, Clone)]
pub enum MotionModel {
    Dmmn(DmmnParams),
    ConstantVelocity,
}

impl MotionModel {
    /// Deterministic mean of the one-step transition from `window`.
    pub fn transition_mean(&self, window: &HistoryWindow) -> Result<Pose2, MotionError> {
        match self {
            MotionModel::Dmmn(p) => forward(p, window),
            MotionModel::ConstantVelocity => Ok(cv_extrapolate(window)),
        }
    }

    /// Transition means for many windows at once.
    pub fn transition_mean_batch(&self, windows: &[&HistoryWindow]) -> Result<Vec<Pose2>, MotionError> {
        match self {
            MotionModel::Dmmn(p) => forward_batch(p, windows),
            MotionModel::ConstantVelocity => windows.iter().map(|w| Ok(cv_extrapolate(w))).collect(),
        }
    }

    /// Sampled one-step transition (before process noise). Only the
    /// constant-velocity model on fresh windows actually consumes randomness.
    pub fn sample_transition(&self, window: &HistoryWindow, rng: &mut ChaCha8Rng) -> Result<Pose2, MotionError> {
        match self {
            MotionModel::Dmmn(p) => forward(p, window),
            MotionModel::ConstantVelocity => Ok(cv_predict(window, rng)),
        }
    }

    /// Deterministic `k`-step rollout.
    pub fn rollout(&self, window: &HistoryWindow, k: usize) -> Result<Pose2, MotionError> {
        match self {
            MotionModel::Dmmn(p) => rollout(p, window, k),
            MotionModel::ConstantVelocity => {
                assert!(k >= 1);
                let mut w = window.clone();
                let mut pose = w.latest();
                for _ in 0..k {
                    pose = cv_extrapolate(&w);
                    let t = w.latest_time() + w.dt;
                    w.push(pose, t);
                }
                Ok(pose)
            }
        }
    }

    /// Window length the model expects (`None`: any length >= 2).
    pub fn required_window(&self) -> Option<usize> {
        match self {
            MotionModel::Dmmn(p) => Some(p.hyper.k_in),
            MotionModel::ConstantVelocity => None,
        }
    }
}

/// Log-density of an isotropic planar Gaussian.
pub fn log_gauss_iso(at: Pose2, mean: Pose2, sigma: f64) -> f64 {
    let dx = at.x - mean.x;
    let dy = at.y - mean.y;
    -((2.0 * PI * sigma * sigma).ln()) - (dx * dx + dy * dy) / (2.0 * sigma * sigma)
}

/// Transition density `p(x | history)`: an isotropic Gaussian with standard
/// deviation `sigma_p` per axis around the model's one-step mean.
pub fn transition_density(
    model: &MotionModel,
    history: &HistoryWindow,
    at: Pose2,
    sigma_p: f64,
) -> Result<f64, MotionError> {
    Ok(log_transition_density(model, history, at, sigma_p)?.exp())
}

/// Log of [`transition_density`]; preferred inside entropy sums.
pub fn log_transition_density(
    model: &MotionModel,
    history: &HistoryWindow,
    at: Pose2,
    sigma_p: f64,
) -> Result<f64, MotionError> {
    assert!(sigma_p > 0.0, "sigma_p must be positive");
    let mean = model.transition_mean(history)?;
    Ok(log_gauss_iso(at, mean, sigma_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    fn small_hyper() -> DmmnHyper {
        DmmnHyper { d_model: 8, heads: 2, layers: 1, d_ff: 16, k_in: 4, pe_base: 1.0e4 }
    }

    fn window_line(k: usize, dt: f64, speed: f64) -> HistoryWindow {
        let poses = (0..k).map(|i| Pose2::new(i as f64 * speed * dt, 0.0)).collect();
        let times = (0..k).map(|i| i as f64 * dt).collect();
        HistoryWindow::from_series(poses, times, dt)
    }

    #[test]
    fn center_window_examples() {
        let w = HistoryWindow::from_series(
            vec![Pose2::new(3.0, 4.0); 3],
            vec![0.0, 1.0, 2.0],
            1.0,
        );
        let (c, offset) = w.center();
        assert_eq!(offset, Pose2::new(3.0, 4.0));
        assert!(c.poses().iter().all(|p| p.x == 0.0 && p.y == 0.0));

        let w2 = HistoryWindow::from_series(
            vec![Pose2::new(0.0, 0.0), Pose2::new(1.0, 0.0)],
            vec![0.0, 1.0],
            1.0,
        );
        let (c2, off2) = w2.center();
        assert_eq!(off2, Pose2::new(1.0, 0.0));
        assert_eq!(c2.poses()[0], Pose2::new(-1.0, 0.0));
        assert_eq!(c2.poses()[1], Pose2::new(0.0, 0.0));

        // Centering a centered window is the identity.
        let (_, off3) = c2.center();
        assert_eq!(off3, Pose2::new(0.0, 0.0));
    }

    #[test]
    fn zero_decoder_predicts_last_pose() {
        let mut rng = stream(11, StreamKind::Training);
        let mut params = DmmnParams::init(small_hyper(), &mut rng);
        params.dec_w = Mat::zeros(params.hyper.d_model, 2);
        params.dec_b = Mat::zeros(1, 2);
        let w = window_line(4, 0.5, 0.35);
        let pred = forward(&params, &w).unwrap();
        assert_eq!(pred, w.latest());
    }

    #[test]
    fn forward_is_translation_equivariant() {
        let mut rng = stream(12, StreamKind::Training);
        let params = DmmnParams::init(small_hyper(), &mut rng);
        let w = window_line(4, 0.5, 0.35);
        let base = forward(&params, &w).unwrap();
        for shift in [(1.5, -2.5), (100.0, 40.0), (-7.25, 0.125)] {
            let shifted = HistoryWindow::from_series(
                w.poses().iter().map(|p| Pose2::new(p.x + shift.0, p.y + shift.1)).collect(),
                w.times().to_vec(),
                w.dt,
            );
            let pred = forward(&params, &shifted).unwrap();
            assert!((pred.x - (base.x + shift.0)).abs() < 1e-9);
            assert!((pred.y - (base.y + shift.1)).abs() < 1e-9);
        }
    }

    #[test]
    fn rollout_one_step_equals_forward() {
        let mut rng = stream(13, StreamKind::Training);
        let params = DmmnParams::init(small_hyper(), &mut rng);
        let w = window_line(4, 0.5, 0.35);
        let a = forward(&params, &w).unwrap();
        let b = rollout(&params, &w, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_is_translation_equivariant() {
        let mut rng = stream(14, StreamKind::Training);
        let params = DmmnParams::init(small_hyper(), &mut rng);
        let w = window_line(4, 0.5, 0.35);
        let base = rollout(&params, &w, 3).unwrap();
        let shifted = HistoryWindow::from_series(
            w.poses().iter().map(|p| Pose2::new(p.x + 11.0, p.y - 3.0)).collect(),
            w.times().to_vec(),
            w.dt,
        );
        let pred = rollout(&params, &shifted, 3).unwrap();
        assert!((pred.x - (base.x + 11.0)).abs() < 1e-9);
        assert!((pred.y - (base.y - 3.0)).abs() < 1e-9);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = stream(15, StreamKind::Training);
        let params = DmmnParams::init(small_hyper(), &mut rng);
        let w1 = window_line(4, 0.5, 0.35);
        let w2 = HistoryWindow::from_series(
            vec![
                Pose2::new(0.0, 0.0),
                Pose2::new(0.1, 0.2),
                Pose2::new(0.3, 0.1),
                Pose2::new(0.2, 0.4),
            ],
            vec![0.0, 0.5, 1.0, 1.5],
            0.5,
        );
        let batch = forward_batch(&params, &[&w1, &w2]).unwrap();
        let s1 = forward(&params, &w1).unwrap();
        let s2 = forward(&params, &w2).unwrap();
        assert_eq!(batch[0], s1);
        assert_eq!(batch[1], s2);
    }

    #[test]
    fn cv_predict_extrapolates_linearly() {
        let w = HistoryWindow::from_series(
            vec![Pose2::new(0.0, 0.0), Pose2::new(1.0, 0.0)],
            vec![0.0, 1.0],
            1.0,
        );
        let mut rng = stream(16, StreamKind::Filter);
        assert_eq!(cv_predict(&w, &mut rng), Pose2::new(2.0, 0.0));
    }

    #[test]
    fn cv_predict_stationary_window_stays() {
        // A settled (non-fresh) window with no motion predicts no motion.
        let mut w = HistoryWindow::replicate(Pose2::new(2.0, 3.0), 4, 1.0, 0.0);
        w.push(Pose2::new(2.0, 3.0), 1.0);
        let mut rng = stream(17, StreamKind::Filter);
        assert_eq!(cv_predict(&w, &mut rng), Pose2::new(2.0, 3.0));
    }

    #[test]
    fn cv_predict_fresh_window_draws_bounded_speed() {
        let w = HistoryWindow::replicate(Pose2::new(1.0, 1.0), 4, 0.4, 0.0);
        let mut rng = stream(18, StreamKind::Filter);
        for _ in 0..500 {
            let p = cv_predict(&w, &mut rng);
            let step = p.distance(Pose2::new(1.0, 1.0));
            assert!(step <= CV_SPEED_RANGE.1 * w.dt + 1e-12, "step {step} exceeds speed bound");
        }
    }

    #[test]
    fn transition_density_gaussian_values() {
        let w = HistoryWindow::from_series(
            vec![Pose2::new(0.0, 0.0), Pose2::new(1.0, 0.0)],
            vec![0.0, 1.0],
            1.0,
        );
        let model = MotionModel::ConstantVelocity;
        // Mean is (2, 0); peak density of an isotropic Gaussian with sigma 0.1.
        let peak = transition_density(&model, &w, Pose2::new(2.0, 0.0), 0.1).unwrap();
        assert!((peak - 1.0 / (2.0 * PI * 0.01)).abs() < 1e-9);

        let off = transition_density(&model, &w, Pose2::new(2.1, 0.0), 0.1).unwrap();
        assert!((off - peak * (-0.5f64).exp()).abs() < 1e-9);

        let left = transition_density(&model, &w, Pose2::new(1.9, 0.0), 0.1).unwrap();
        assert!((left - off).abs() < 1e-12, "symmetric points have equal density");
    }

    #[test]
    fn transition_density_integrates_to_one() {
        let w = window_line(4, 0.5, 0.35);
        let model = MotionModel::ConstantVelocity;
        let sigma = 0.1;
        let mean = model.transition_mean(&w).unwrap();
        // Midpoint quadrature over a 6-sigma box.
        let half = 6.0 * sigma;
        let cells = 240;
        let hstep = 2.0 * half / cells as f64;
        let mut total = 0.0;
        for i in 0..cells {
            for j in 0..cells {
                let x = mean.x - half + (i as f64 + 0.5) * hstep;
                let y = mean.y - half + (j as f64 + 0.5) * hstep;
                total += transition_density(&model, &w, Pose2::new(x, y), sigma).unwrap();
            }
        }
        total *= hstep * hstep;
        assert!((total - 1.0).abs() < 1e-3, "quadrature total {total}");
    }

    #[test]
    fn forward_reports_nonfinite_layer() {
        let mut rng = stream(19, StreamKind::Training);
        let mut params = DmmnParams::init(small_hyper(), &mut rng);
        params.embed_w.set(0, 0, f64::NAN);
        let w = window_line(4, 0.5, 0.35);
        match forward(&params, &w) {
            Err(MotionError::NonFinite { stage }) => assert_eq!(stage, "embed"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
