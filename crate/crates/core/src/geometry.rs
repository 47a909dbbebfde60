//! Planar workspace geometry: frames, the projected sensor footprint, occlusion
//! regions, and the observability predicate.
//!
//! Everything lives on the ground plane in the inertial frame, in meters. The
//! agent's camera points straight down from a constant height, so its footprint
//! is a fixed-size axis-aligned rectangle centered on the agent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A planar position in the inertial frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Euclidean distance to another pose.
    pub fn distance(&self, other: Pose2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn add(&self, dx: f64, dy: f64) -> Pose2 {
        Pose2::new(self.x + dx, self.y + dy)
    }
}

impl From<Pose2> for nalgebra::Vector2<f64> {
    fn from(p: Pose2) -> Self {
        nalgebra::Vector2::new(p.x, p.y)
    }
}

/// Axis-aligned rectangle, min corner inclusive, max corner inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Boundary counts as inside.
    pub fn contains(&self, p: Pose2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.min_x >= self.min_x
            && other.min_y >= self.min_y
            && other.max_x <= self.max_x
            && other.max_y <= self.max_y
    }

    /// Nearest point of the rectangle to `p` (identity for interior points).
    pub fn clamp(&self, p: Pose2) -> Pose2 {
        Pose2::new(p.x.clamp(self.min_x, self.max_x), p.y.clamp(self.min_y, self.max_y))
    }

    pub fn center(&self) -> Pose2 {
        Pose2::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }
}

/// The camera footprint projected onto the ground plane: an axis-aligned
/// rectangle centered on the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFootprint {
    pub center: Pose2,
    /// Half side lengths along x and y, strictly positive.
    pub half_extents: (f64, f64),
}

impl SensorFootprint {
    pub fn new(center: Pose2, half_extents: (f64, f64)) -> Self {
        assert!(
            half_extents.0 > 0.0 && half_extents.1 > 0.0,
            "footprint half extents must be strictly positive"
        );
        Self { center, half_extents }
    }

    /// Footprint membership. Boundary points count as inside.
    pub fn contains(&self, p: Pose2) -> bool {
        (p.x - self.center.x).abs() <= self.half_extents.0
            && (p.y - self.center.y).abs() <= self.half_extents.1
    }

    pub fn at(&self, center: Pose2) -> SensorFootprint {
        SensorFootprint { center, half_extents: self.half_extents }
    }
}

/// A static region in which the target is invisible even when inside the
/// sensor footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionZone {
    pub id: String,
    pub rect: Rect,
}

impl OcclusionZone {
    pub fn new(id: impl Into<String>, rect: Rect) -> Self {
        Self { id: id.into(), rect }
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("workspace bounds are degenerate: {0:?}")]
    DegenerateBounds(Rect),
    #[error("occlusion zone '{0}' has non-positive area")]
    DegenerateZone(String),
    #[error("occlusion zone '{0}' extends outside workspace bounds")]
    ZoneOutOfBounds(String),
}

/// The bounded planar workspace with its static occlusion zones.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub bounds: Rect,
    pub zones: Vec<OcclusionZone>,
}

impl Workspace {
    pub fn new(bounds: Rect, zones: Vec<OcclusionZone>) -> Result<Self, GeometryError> {
        if bounds.is_degenerate() {
            return Err(GeometryError::DegenerateBounds(bounds));
        }
        for z in &zones {
            if z.rect.is_degenerate() {
                return Err(GeometryError::DegenerateZone(z.id.clone()));
            }
            if !bounds.contains_rect(&z.rect) {
                return Err(GeometryError::ZoneOutOfBounds(z.id.clone()));
            }
        }
        Ok(Self { bounds, zones })
    }

    /// True iff `p` lies inside any occlusion zone (boundary-inclusive).
    pub fn is_occluded(&self, p: Pose2) -> bool {
        self.zones.iter().any(|z| z.rect.contains(p))
    }

    /// The target is observed iff it is inside the footprint and not occluded.
    pub fn is_observable(&self, fov: &SensorFootprint, p: Pose2) -> bool {
        fov.contains(p) && !self.is_occluded(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_fov() -> SensorFootprint {
        SensorFootprint::new(Pose2::new(0.0, 0.0), (1.0, 1.0))
    }

    #[test]
    fn fov_contains_interior_boundary_exterior() {
        let fov = unit_fov();
        assert!(fov.contains(Pose2::new(0.5, 0.5)));
        assert!(fov.contains(Pose2::new(1.0, 1.0)), "boundary counts as inside");
        assert!(!fov.contains(Pose2::new(1.01, 0.0)));
    }

    #[test]
    fn occlusion_membership() {
        let ws = Workspace::new(
            Rect::new(0.0, 0.0, 4.0, 4.0),
            vec![OcclusionZone::new("z", Rect::new(1.0, 1.0, 2.0, 2.0))],
        )
        .unwrap();
        assert!(ws.is_occluded(Pose2::new(1.5, 1.5)));
        assert!(!ws.is_occluded(Pose2::new(0.0, 0.0)));

        let empty = Workspace::new(Rect::new(0.0, 0.0, 4.0, 4.0), vec![]).unwrap();
        assert!(!empty.is_occluded(Pose2::new(1.5, 1.5)));
    }

    #[test]
    fn observability_requires_fov_and_clear_line() {
        let ws = Workspace::new(
            Rect::new(-2.0, -2.0, 2.0, 2.0),
            vec![OcclusionZone::new("z", Rect::new(0.4, 0.4, 0.9, 0.9))],
        )
        .unwrap();
        let fov = unit_fov();
        assert!(ws.is_observable(&fov, Pose2::new(-0.5, -0.5)));
        assert!(!ws.is_observable(&fov, Pose2::new(0.5, 0.5)), "occluded");
        assert!(!ws.is_observable(&fov, Pose2::new(1.5, 0.0)), "outside fov");
    }

    #[test]
    fn workspace_rejects_zone_outside_bounds() {
        let err = Workspace::new(
            Rect::new(0.0, 0.0, 1.0, 1.0),
            vec![OcclusionZone::new("z", Rect::new(0.5, 0.5, 2.0, 2.0))],
        );
        assert!(matches!(err, Err(GeometryError::ZoneOutOfBounds(_))));
    }

    proptest! {
        #[test]
        fn observable_implies_in_fov(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let ws = Workspace::new(
                Rect::new(-3.0, -3.0, 3.0, 3.0),
                vec![OcclusionZone::new("z", Rect::new(-1.0, -1.0, 0.0, 0.0))],
            ).unwrap();
            let fov = unit_fov();
            let p = Pose2::new(x, y);
            if ws.is_observable(&fov, p) {
                prop_assert!(fov.contains(p));
            }
        }

        #[test]
        fn removing_a_zone_never_hides_a_point(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let bounds = Rect::new(-3.0, -3.0, 3.0, 3.0);
            let zones = vec![
                OcclusionZone::new("a", Rect::new(-1.0, -1.0, 0.0, 0.0)),
                OcclusionZone::new("b", Rect::new(0.5, 0.5, 1.5, 1.5)),
            ];
            let full = Workspace::new(bounds, zones.clone()).unwrap();
            let fewer = Workspace::new(bounds, zones[..1].to_vec()).unwrap();
            let fov = unit_fov();
            let p = Pose2::new(x, y);
            if full.is_observable(&fov, p) {
                prop_assert!(fewer.is_observable(&fov, p));
            }
        }
    }
}
