//! Offline training of the DMMN on a recorded trajectory.
//!
//! The trajectory is sliced into (window, next pose) pairs, each window is
//! centered, and the mean squared displacement error is minimized with Adam.
//! Gradients come from the reverse-mode tape in [`super::tape`]; the tape and
//! the inference path share their numeric kernels, so the trained network is
//! exactly the one that runs at inference time.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::geometry::Pose2;
use crate::rng::{stream, StreamKind};

use super::mat::Mat;
use super::tape::{Tape, VarId};
use super::{forward_batch, positional_encoding, DmmnHyper, DmmnParams, HistoryWindow};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("trajectory of {got} poses is too short; need more than k_in + 1 = {need}")]
    InsufficientData { need: usize, got: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

/// Training hyperparameters. The architecture travels with the config so a
/// single value fully determines the trained model for a given trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: DmmnHyper,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch. Adam's steady-state
    /// jitter scales with the step size, so decaying it lets long runs settle
    /// well below the initial-rate noise floor.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of samples (taken from the end of the trajectory) held out
    /// for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Adam first/second moment coefficients.
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: DmmnHyper::default(),
            learning_rate: 1e-3,
            lr_decay: 0.97,
            batch_size: 64,
            epochs: 12,
            val_fraction: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        self.hyper.validate().map_err(TrainError::BadConfig)?;
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TrainError::BadConfig("lr decay must be in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::BadConfig("validation fraction must be in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::BadConfig("moment coefficients must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Trained parameters plus the per-epoch loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DmmnParams,
    pub epoch_train_mse: Vec<f64>,
    pub epoch_val_mse: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_train_mse(&self) -> f64 {
        *self.epoch_train_mse.last().unwrap()
    }

    pub fn final_val_mse(&self) -> f64 {
        *self.epoch_val_mse.last().unwrap()
    }
}

/// Slice a trajectory sampled at `dt` into (window, next pose) pairs.
pub fn training_samples(trajectory: &[Pose2], dt: f64, k_in: usize) -> Vec<(HistoryWindow, Pose2)> {
    let mut out = Vec::new();
    if trajectory.len() <= k_in {
        return out;
    }
    for i in k_in..trajectory.len() {
        let poses = trajectory[i - k_in..i].to_vec();
        let times = (i - k_in..i).map(|j| j as f64 * dt).collect();
        out.push((HistoryWindow::from_series(poses, times, dt), trajectory[i]));
    }
    out
}

/// Mean squared displacement error of the inference path over `samples`,
/// in m^2 (squared Euclidean error averaged over samples).
pub fn evaluation_mse(params: &DmmnParams, samples: &[(HistoryWindow, Pose2)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let windows: Vec<&HistoryWindow> = samples.iter().map(|(w, _)| w).collect();
    let preds = forward_batch(params, &windows).expect("evaluation forward failed");
    let total: f64 = preds
        .iter()
        .zip(samples)
        .map(|(pred, (_, target))| {
            let dx = pred.x - target.x;
            let dy = pred.y - target.y;
            dx * dx + dy * dy
        })
        .sum();
    total / samples.len() as f64
}

/// Tape handles for every parameter tensor, in canonical order.
struct ParamVars {
    ids: Vec<VarId>,
}

fn register_params(tape: &mut Tape, params: &DmmnParams) -> ParamVars {
    let ids = params.tensors().iter().map(|m| tape.leaf((*m).clone())).collect();
    ParamVars { ids }
}

/// Forward pass on the tape for one window; mirrors the inference path op for
/// op. Returns the predicted displacement (1x2) in centered coordinates.
fn tape_forward(tape: &mut Tape, vars: &ParamVars, hyper: &DmmnHyper, window: &HistoryWindow) -> VarId {
    let k = hyper.k_in;
    assert_eq!(window.len(), k);
    let (centered, _) = window.center();
    let mut x0 = Mat::zeros(k, 2);
    for (i, p) in centered.poses().iter().enumerate() {
        x0.set(i, 0, p.x);
        x0.set(i, 1, p.y);
    }
    let pe = positional_encoding(window.times(), window.dt, hyper);

    // Canonical tensor order: embed_w, embed_b, then 16 tensors per layer,
    // then dec_w, dec_b.
    let mut it = vars.ids.iter().copied();
    let embed_w = it.next().unwrap();
    let embed_b = it.next().unwrap();

    let x0v = tape.constant(x0);
    let pev = tape.constant(pe);
    let projected = tape.matmul(x0v, embed_w);
    let biased = tape.add_row_broadcast(projected, embed_b);
    let mut e = tape.add(biased, pev);

    let dh = hyper.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    for _ in 0..hyper.layers {
        let [wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, ff_w1, ff_b1, ff_w2, ff_b2, ln2_g, ln2_b] =
            std::array::from_fn(|_| it.next().unwrap());

        let q0 = tape.matmul(e, wq);
        let q = tape.add_row_broadcast(q0, bq);
        let k0 = tape.matmul(e, wk);
        let kk = tape.add_row_broadcast(k0, bk);
        let v0 = tape.matmul(e, wv);
        let v = tape.add_row_broadcast(v0, bv);

        let mut heads = Vec::with_capacity(hyper.heads);
        for head in 0..hyper.heads {
            let col = head * dh;
            let qh = tape.slice_cols(q, col, dh);
            let kh = tape.slice_cols(kk, col, dh);
            let vh = tape.slice_cols(v, col, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            heads.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&heads);
        let proj0 = tape.matmul(merged, wo);
        let projected = tape.add_row_broadcast(proj0, bo);
        let res1 = tape.add(e, projected);
        e = tape.layer_norm(res1, ln1_g, ln1_b);

        let f0 = tape.matmul(e, ff_w1);
        let f0b = tape.add_row_broadcast(f0, ff_b1);
        let f1 = tape.relu(f0b);
        let f2m = tape.matmul(f1, ff_w2);
        let f2 = tape.add_row_broadcast(f2m, ff_b2);
        let res2 = tape.add(e, f2);
        e = tape.layer_norm(res2, ln2_g, ln2_b);
    }

    let dec_w = it.next().unwrap();
    let dec_b = it.next().unwrap();
    let last = tape.take_row(e, k - 1);
    let dm = tape.matmul(last, dec_w);
    tape.add_row_broadcast(dm, dec_b)
}

/// Mean squared displacement loss over `samples` and its gradients with
/// respect to every parameter tensor (canonical order).
pub fn loss_and_grads(params: &DmmnParams, samples: &[(HistoryWindow, Pose2)]) -> (f64, Vec<Mat>) {
    assert!(!samples.is_empty());
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);

    let mut total: Option<VarId> = None;
    for (window, target) in samples {
        let disp = tape_forward(&mut tape, &vars, &params.hyper, window);
        let offset = window.latest();
        let target_disp = Mat::from_vec(1, 2, vec![target.x - offset.x, target.y - offset.y]);
        let l = tape.sq_diff(disp, target_disp);
        total = Some(match total {
            Some(t) => tape.add(t, l),
            None => l,
        });
    }
    let mean = tape.scale(total.unwrap(), 1.0 / samples.len() as f64);
    let loss = tape.value(mean).get(0, 0);
    let grads = tape.backward(mean);
    let out = vars
        .ids
        .iter()
        .map(|&id| grads[id].clone().unwrap_or_else(|| {
            let m = tape.value(id);
            Mat::zeros(m.rows, m.cols)
        }))
        .collect();
    (loss, out)
}

struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &DmmnParams, cfg: &TrainConfig) -> Self {
        let shapes: Vec<Mat> = params.tensors().iter().map(|m| Mat::zeros(m.rows, m.cols)).collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: &mut DmmnParams, grads: &[Mat]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..tensor.data.len() {
                let g = grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                tensor.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Train a DMMN on a trajectory sampled at `dt` seconds per step.
/// Deterministic for a given `(trajectory, dt, cfg)`.
pub fn train(trajectory: &[Pose2], dt: f64, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let k_in = cfg.hyper.k_in;
    if trajectory.len() <= k_in + 1 {
        return Err(TrainError::InsufficientData { need: k_in + 1, got: trajectory.len() });
    }

    let samples = training_samples(trajectory, dt, k_in);
    let n_val = ((samples.len() as f64 * cfg.val_fraction).ceil() as usize).clamp(1, samples.len() - 1);
    let n_train = samples.len() - n_val;
    let (train_set, val_set) = samples.split_at(n_train);

    let mut rng = stream(cfg.seed, StreamKind::Training);
    let mut params = DmmnParams::init(cfg.hyper, &mut rng);
    let mut adam = Adam::new(&params, cfg);

    let mut epoch_train_mse = Vec::with_capacity(cfg.epochs);
    let mut epoch_val_mse = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 0..cfg.epochs {
        adam.lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(HistoryWindow, Pose2)> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = loss_and_grads(&params, &batch);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            adam.step(&mut params, &grads);
            weighted_loss += loss * batch.len() as f64;
        }
        let train_mse = weighted_loss / n_train as f64;
        let val_mse = evaluation_mse(&params, val_set);
        if !val_mse.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        epoch_train_mse.push(train_mse);
        epoch_val_mse.push(val_mse);
    }

    Ok(TrainOutcome { params, epoch_train_mse, epoch_val_mse })
}
