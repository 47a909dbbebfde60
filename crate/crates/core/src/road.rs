//! Ground-truth target simulator: a Markov-chain node graph traversed at
//! constant speed with piecewise-linear edges.
//!
//! The chain drives episodes and generates the training trajectories for the
//! learned motion model. The next node is drawn from a per-node categorical
//! distribution whenever the target reaches a node; leftover travel distance
//! within a step carries over onto the sampled edge.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::Pose2;

/// Upper bound on target speed, in m/s.
pub const MAX_TARGET_SPEED: f64 = 0.7;

const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("node '{0}' referenced but not defined")]
    UnknownNode(String),
    #[error("node '{0}' has no outgoing transitions")]
    DeadEnd(String),
    #[error("node '{0}' transition probabilities sum to {1}, expected 1")]
    BadProbabilitySum(String, f64),
    #[error("node '{0}' has a negative transition probability")]
    NegativeProbability(String),
    #[error("target speed {0} m/s outside [0, {MAX_TARGET_SPEED}]")]
    BadSpeed(f64),
    #[error("start node '{0}' not defined")]
    BadStartNode(String),
    #[error("edge from '{0}' to '{1}' has zero length")]
    ZeroLengthEdge(String, String),
}

/// Index of a node within a [`RoadNetwork`].
pub type NodeId = usize;

#[derive(Debug, Clone)]
struct Node {
    name: String,
    position: Pose2,
    /// Successors with cumulative probabilities for categorical sampling.
    transitions: Vec<(NodeId, f64)>,
}

/// Markov-chain road network with constant-speed edge traversal.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    pub target_speed: f64,
    pub start_node: NodeId,
}

impl RoadNetwork {
    /// Build and validate a network from (name, position) nodes and
    /// (from, to, probability) transitions.
    pub fn new(
        nodes: &[(String, Pose2)],
        transitions: &[(String, String, f64)],
        target_speed: f64,
        start_node: &str,
    ) -> Result<Self, NetworkError> {
        // Zero is allowed: a parked target is a useful degenerate case.
        if !(target_speed >= 0.0 && target_speed <= MAX_TARGET_SPEED) {
            return Err(NetworkError::BadSpeed(target_speed));
        }
        let index_of = |name: &str| -> Result<NodeId, NetworkError> {
            nodes
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| NetworkError::UnknownNode(name.to_string()))
        };

        let mut built: Vec<Node> = nodes
            .iter()
            .map(|(name, position)| Node {
                name: name.clone(),
                position: *position,
                transitions: Vec::new(),
            })
            .collect();

        for (from, to, prob) in transitions {
            let f = index_of(from)?;
            let t = index_of(to)?;
            if *prob < 0.0 {
                return Err(NetworkError::NegativeProbability(from.clone()));
            }
            if built[f].position.distance(built[t].position) == 0.0 {
                return Err(NetworkError::ZeroLengthEdge(from.clone(), to.clone()));
            }
            built[f].transitions.push((t, *prob));
        }

        for node in &built {
            if node.transitions.is_empty() {
                return Err(NetworkError::DeadEnd(node.name.clone()));
            }
            let sum: f64 = node.transitions.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(NetworkError::BadProbabilitySum(node.name.clone(), sum));
            }
        }

        let start = index_of(start_node).map_err(|_| NetworkError::BadStartNode(start_node.into()))?;
        Ok(Self { nodes: built, target_speed, start_node: start })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_position(&self, id: NodeId) -> Pose2 {
        self.nodes[id].position
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id].name
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Draw a successor of `at` from its categorical transition distribution.
    pub fn sample_next_node(&self, at: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
        let node = &self.nodes[at];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (succ, p) in &node.transitions {
            acc += p;
            if u < acc {
                return *succ;
            }
        }
        // Guard against the cumulative sum landing a hair under 1.
        node.transitions.last().expect("validated non-empty").0
    }

    /// Axis-aligned bounding box of all nodes.
    pub fn bounding_box(&self) -> (Pose2, Pose2) {
        let mut min = Pose2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Pose2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for n in &self.nodes {
            min.x = min.x.min(n.position.x);
            min.y = min.y.min(n.position.y);
            max.x = max.x.max(n.position.x);
            max.y = max.y.max(n.position.y);
        }
        (min, max)
    }

    /// Distance from `p` to the nearest edge segment, for closure checks.
    pub fn distance_to_edges(&self, p: Pose2) -> f64 {
        let mut best = f64::INFINITY;
        for (from, node) in self.nodes.iter().enumerate() {
            for (to, _) in &node.transitions {
                best = best.min(point_segment_distance(p, self.nodes[from].position, self.nodes[*to].position));
            }
        }
        best
    }

    /// Truth state parked at the start node, heading along a sampled edge.
    pub fn initial_truth(&self, rng: &mut ChaCha8Rng) -> TargetTruth {
        let from = self.start_node;
        let to = self.sample_next_node(from, rng);
        TargetTruth { pose: self.node_position(from), edge: (from, to), progress: 0.0 }
    }

    /// Advance the target by `dt` seconds of constant-speed travel, sampling
    /// new edges at nodes and carrying leftover distance onto them.
    pub fn step_target(&self, truth: &TargetTruth, dt: f64, rng: &mut ChaCha8Rng) -> TargetTruth {
        assert!(dt > 0.0, "dt must be positive");
        let mut edge = truth.edge;
        let mut remaining = self.target_speed * dt;
        let mut len = self.edge_length(edge);
        let mut traveled = truth.progress * len;

        loop {
            let to_node = len - traveled;
            if remaining < to_node || remaining == 0.0 {
                traveled += remaining;
                break;
            }
            remaining -= to_node;
            let at = edge.1;
            let next = self.sample_next_node(at, rng);
            edge = (at, next);
            len = self.edge_length(edge);
            traveled = 0.0;
        }

        let progress = traveled / len;
        TargetTruth { pose: self.interpolate(edge, progress), edge, progress }
    }

    /// Sampled positions at `dt` spacing over `duration` seconds, starting at
    /// the configured start node: `floor(duration/dt) + 1` poses.
    pub fn generate_trajectory(&self, duration: f64, dt: f64, rng: &mut ChaCha8Rng) -> Vec<Pose2> {
        assert!(duration >= dt, "duration must cover at least one step");
        let steps = (duration / dt).floor() as usize;
        let mut truth = self.initial_truth(rng);
        let mut out = Vec::with_capacity(steps + 1);
        out.push(truth.pose);
        for _ in 0..steps {
            truth = self.step_target(&truth, dt, rng);
            out.push(truth.pose);
        }
        out
    }

    fn edge_length(&self, edge: (NodeId, NodeId)) -> f64 {
        self.node_position(edge.0).distance(self.node_position(edge.1))
    }

    fn interpolate(&self, edge: (NodeId, NodeId), progress: f64) -> Pose2 {
        let a = self.node_position(edge.0);
        let b = self.node_position(edge.1);
        Pose2::new(a.x + (b.x - a.x) * progress, a.y + (b.y - a.y) * progress)
    }
}

/// Target state on the network: pose constrained to the current edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTruth {
    pub pose: Pose2,
    pub edge: (NodeId, NodeId),
    /// Fraction of the current edge already traversed, in [0, 1].
    pub progress: f64,
}

fn point_segment_distance(p: Pose2, a: Pose2, b: Pose2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Pose2::new(a.x + t * dx, a.y + t * dy))
}
