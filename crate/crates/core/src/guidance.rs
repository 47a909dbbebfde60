//! The three waypoint policies behind one decision type.
//!
//! - EER: delegate to the expected-entropy-reduction planner.
//! - LAWN: chase the last measurement; with no measurement, fly a
//!   boustrophedon sweep whose rows are spaced for full footprint coverage.
//! - PFWM: fly to the particle filter's weighted mean.
//!
//! Policies read the filter state, never mutate it.

use rand_chacha::ChaCha8Rng;

use crate::eer::{best_waypoint, BeliefSnapshot, EerConfig, EerResult};
use crate::filter::ParticleSet;
use crate::geometry::{Pose2, Workspace};
use crate::motion::{MotionError, MotionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    Eer,
    Track,
    LawnSweep,
    Pfwm,
    TruthFollow,
}

impl GuidanceMode {
    pub fn label(&self) -> &'static str {
        match self {
            GuidanceMode::Eer => "EER",
            GuidanceMode::Track => "TRACK",
            GuidanceMode::LawnSweep => "LAWN_SWEEP",
            GuidanceMode::Pfwm => "PFWM",
            GuidanceMode::TruthFollow => "TRUTH",
        }
    }
}

/// A waypoint command with its provenance.
#[derive(Debug, Clone)]
pub struct GuidanceDecision {
    pub waypoint: Pose2,
    pub mode: GuidanceMode,
    /// Per-candidate table when the EER planner produced this decision.
    pub eer: Option<EerResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepPhase {
    /// Flying to the far end of the current row.
    Traverse,
    /// Stepping sideways to the next row.
    Step,
}

/// Boustrophedon sweep progress. Rows run along x; spacing is at most the
/// footprint height so a completed sweep sees every workspace point.
#[derive(Debug, Clone)]
pub struct LawnState {
    rows: Vec<f64>,
    row: usize,
    next_row: usize,
    eastbound: bool,
    phase: SweepPhase,
    x_min: f64,
    x_max: f64,
    arrive_tol: f64,
}

impl LawnState {
    /// Rows spaced `spacing_factor` times the footprint height (must be in
    /// (0, 1] for coverage), clamped so end rows still see the walls.
    pub fn new(ws: &Workspace, fov_half_extents: (f64, f64), spacing_factor: f64) -> Self {
        assert!(
            spacing_factor > 0.0 && spacing_factor <= 1.0,
            "row spacing beyond the footprint height leaves gaps"
        );
        let (hx, hy) = fov_half_extents;
        let b = ws.bounds;
        let spacing = spacing_factor * 2.0 * hy;

        let (lo, hi) = (b.min_y + hy, b.max_y - hy);
        let mut rows = Vec::new();
        if lo >= hi {
            rows.push(0.5 * (b.min_y + b.max_y));
        } else {
            let mut y = lo;
            loop {
                rows.push(y);
                if y + hy >= b.max_y {
                    break;
                }
                y = (y + spacing).min(hi);
            }
        }

        let (x_min, x_max) = if b.min_x + hx >= b.max_x - hx {
            let c = 0.5 * (b.min_x + b.max_x);
            (c, c)
        } else {
            (b.min_x + hx, b.max_x - hx)
        };

        Self {
            rows,
            row: 0,
            next_row: 0,
            eastbound: true,
            phase: SweepPhase::Traverse,
            x_min,
            x_max,
            arrive_tol: 0.05,
        }
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    fn far_x(&self) -> f64 {
        if self.eastbound {
            self.x_max
        } else {
            self.x_min
        }
    }

    fn target(&self) -> Pose2 {
        match self.phase {
            SweepPhase::Traverse => Pose2::new(self.far_x(), self.rows[self.row]),
            SweepPhase::Step => Pose2::new(self.far_x(), self.rows[self.next_row]),
        }
    }

    fn advance_if_reached(&mut self, agent: Pose2) {
        if agent.distance(self.target()) > self.arrive_tol {
            return;
        }
        match self.phase {
            SweepPhase::Traverse => {
                self.next_row = (self.row + 1) % self.rows.len();
                self.phase = SweepPhase::Step;
            }
            SweepPhase::Step => {
                self.row = self.next_row;
                self.eastbound = !self.eastbound;
                self.phase = SweepPhase::Traverse;
            }
        }
    }
}

/// EER policy: the waypoint maximizing expected entropy reduction.
pub fn policy_dmmn_eer(
    belief: &BeliefSnapshot,
    agent: Pose2,
    model: &MotionModel,
    cfg: &EerConfig,
    ws: &Workspace,
    rng: &mut ChaCha8Rng,
) -> Result<GuidanceDecision, MotionError> {
    let result = best_waypoint(belief, agent, model, cfg, ws, rng)?;
    Ok(GuidanceDecision { waypoint: result.chosen().position, mode: GuidanceMode::Eer, eer: Some(result) })
}

/// Lawnmower-and-track policy: chase the last measurement when one arrived
/// this step; otherwise advance the sweep (resuming where it left off).
pub fn policy_lawn(
    state: &mut LawnState,
    agent: Pose2,
    last_z: Option<Pose2>,
    ws: &Workspace,
) -> GuidanceDecision {
    if let Some(z) = last_z {
        return GuidanceDecision {
            waypoint: ws.bounds.clamp(z),
            mode: GuidanceMode::Track,
            eer: None,
        };
    }
    state.advance_if_reached(agent);
    GuidanceDecision { waypoint: state.target(), mode: GuidanceMode::LawnSweep, eer: None }
}

/// Weighted-mean policy: fly to the filter's current estimate.
pub fn policy_pfwm(ps: &ParticleSet, ws: &Workspace) -> GuidanceDecision {
    GuidanceDecision {
        waypoint: ws.bounds.clamp(ps.weighted_mean()),
        mode: GuidanceMode::Pfwm,
        eer: None,
    }
}
