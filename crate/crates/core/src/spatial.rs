//! Spatial colliders: pose reports in, debounced enter/exit transitions out.
//!
//! Entering requires the position to be inside the collider shrunk by the
//! hysteresis half-width `h`; leaving requires it to be outside the
//! collider grown by `h`. Either candidate must hold for the collider's
//! debounce time before the transition is emitted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{ColliderId, DeviceId, Millis};
use crate::script::{ColliderDecl, Role, Shape};

pub type Vec3 = [f64; 3];

/// Closed-set containment with a signed margin (negative shrinks, positive grows).
pub fn point_in_shape(p: Vec3, shape: &Shape, margin: f64) -> bool {
    match shape {
        Shape::Sphere { center, radius } => {
            let reach = radius + margin;
            if reach < 0.0 {
                return false;
            }
            let d2: f64 = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum();
            d2 <= reach * reach
        }
        Shape::Box { min, max } => (0..3).all(|i| p[i] >= min[i] - margin && p[i] <= max[i] + margin),
    }
}

pub fn point_in_collider(p: Vec3, c: &ColliderDecl, margin: f64) -> bool {
    point_in_shape(p, &c.shape, margin)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    Enter,
    Exit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub device: DeviceId,
    pub position: Vec3,
    pub at: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColliderTransition {
    pub collider: ColliderId,
    pub device: DeviceId,
    pub crossing: Crossing,
    pub at: Millis,
}

/// Per (device, collider) tracking state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PairState {
    pub inside: bool,
    /// When the pending opposite condition was first observed.
    pub candidate_since: Option<Millis>,
}

#[derive(Clone, Debug, Default)]
pub struct Tracker {
    pairs: BTreeMap<(DeviceId, ColliderId), PairState>,
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self, device: &DeviceId, collider: &ColliderId) -> PairState {
        self.pairs
            .get(&(device.clone(), collider.clone()))
            .copied()
            .unwrap_or_default()
    }

    /// Forget a device, e.g. after it leaves the show.
    pub fn forget(&mut self, device: &DeviceId) {
        self.pairs.retain(|(d, _), _| d != device);
    }

    /// Feed one pose; returns at most one transition per collider, in
    /// collider declaration order. Non-finite positions are ignored.
    pub fn update_pose(
        &mut self,
        pose: &Pose,
        role: Role,
        colliders: &[ColliderDecl],
        now: Millis,
    ) -> Vec<ColliderTransition> {
        let mut out = Vec::new();
        if !pose.position.iter().all(|v| v.is_finite()) {
            return out;
        }
        for c in colliders {
            if !c.filter.admits(role) {
                continue;
            }
            let key = (pose.device.clone(), c.id.clone());
            let st = self.pairs.entry(key).or_default();
            let h = c.hysteresis_m;
            let wants_flip = if st.inside {
                !point_in_collider(pose.position, c, h)
            } else {
                point_in_collider(pose.position, c, -h)
            };
            if !wants_flip {
                st.candidate_since = None;
                continue;
            }
            let since = *st.candidate_since.get_or_insert(now);
            if now - since >= c.debounce_ms {
                st.inside = !st.inside;
                st.candidate_since = None;
                out.push(ColliderTransition {
                    collider: c.id.clone(),
                    device: pose.device.clone(),
                    crossing: if st.inside { Crossing::Enter } else { Crossing::Exit },
                    at: now,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(radius: f64) -> ColliderDecl {
        ColliderDecl::new("ball", Shape::Sphere { center: [0.0; 3], radius })
    }

    fn unit_box() -> ColliderDecl {
        ColliderDecl::new("crate", Shape::Box { min: [0.0; 3], max: [1.0; 3] })
    }

    fn pose(x: f64, at: Millis) -> Pose {
        Pose { device: "h1".into(), position: [x, 0.0, 0.0], at }
    }

    #[test]
    fn containment_examples() {
        assert!(point_in_collider([0.0; 3], &sphere(1.0), 0.0));
        assert!(point_in_collider([1.0, 0.0, 0.0], &sphere(1.0), 0.0));
        assert!(point_in_collider([0.5; 3], &unit_box(), 0.0));
        assert!(point_in_collider([1.0; 3], &unit_box(), 0.0));
        assert!(!point_in_collider([1.01, 0.5, 0.5], &unit_box(), 0.0));
        assert!(point_in_collider([1.01, 0.5, 0.5], &unit_box(), 0.02));
        assert!(!point_in_collider([0.0; 3], &sphere(0.1), -0.2));
    }

    #[test]
    fn enter_after_debounce() {
        let cs = [sphere(2.0)];
        let mut t = Tracker::new();
        assert!(t.update_pose(&pose(0.0, 0), Role::Hmd, &cs, 0).is_empty());
        assert_eq!(t.state(&"h1".into(), &"ball".into()).candidate_since, Some(0));
        assert!(t.update_pose(&pose(0.1, 100), Role::Hmd, &cs, 100).is_empty());
        let tr = t.update_pose(&pose(0.0, 200), Role::Hmd, &cs, 200);
        assert_eq!(tr.len(), 1);
        assert_eq!(tr[0].crossing, Crossing::Enter);
        assert_eq!(tr[0].at, 200);
    }

    #[test]
    fn band_jitter_emits_nothing() {
        let cs = [sphere(2.0)];
        let mut t = Tracker::new();
        for (i, x) in [1.9, 2.1, 1.95, 2.05, 1.88, 2.12, 1.9].iter().enumerate() {
            let now = i as Millis * 200;
            assert!(t.update_pose(&pose(*x, now), Role::Hmd, &cs, now).is_empty());
        }
    }

    #[test]
    fn candidate_resets_when_condition_lapses() {
        let cs = [sphere(2.0)];
        let mut t = Tracker::new();
        t.update_pose(&pose(0.0, 0), Role::Hmd, &cs, 0);
        t.update_pose(&pose(1.95, 150), Role::Hmd, &cs, 150);
        assert!(t.update_pose(&pose(0.0, 250), Role::Hmd, &cs, 250).is_empty());
        assert_eq!(t.update_pose(&pose(0.0, 450), Role::Hmd, &cs, 450).len(), 1);
    }

    #[test]
    fn filter_blocks_wrong_role() {
        let mut c = sphere(5.0);
        c.filter = crate::script::SubjectFilter::HmdOnly;
        c.debounce_ms = 0;
        let mut t = Tracker::new();
        for now in [0, 200, 400] {
            assert!(t.update_pose(&pose(0.0, now), Role::Wearable, &[c.clone()], now).is_empty());
        }
    }
}
