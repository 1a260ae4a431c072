//! Simulated pick and place. A plan is a descriptive waypoint record; only
//! the final pose is checked for collisions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{grasp_yaw, normalize_angle, pixel_to_world, OrientedBox, Point2};
use crate::scene::{Placement, Pose, Scene, SceneError};

/// Height of the carry segment above the table plane, in meters.
pub const LIFT_HEIGHT_M: f64 = 0.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("plan is for {plan:?} but placement moves {placement:?}")]
    PlanMismatch { plan: String, placement: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointKind {
    PickHover,
    Pick,
    Lift,
    PlaceHover,
    Place,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub kind: WaypointKind,
    /// Projection onto the image plane.
    pub pixel: Point2,
    /// World frame position in meters.
    pub world: [f64; 3],
    /// Jaw-closing direction in the image frame.
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickPlan {
    pub object_id: String,
    pub grasp_point: Point2,
    pub grasp_yaw: f64,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub step: usize,
    pub object: String,
    pub from: Pose,
    pub to: Pose,
    pub waypoints: Vec<Waypoint>,
    pub repaired: bool,
}

pub fn make_pick_plan(scene: &Scene, placement: &Placement) -> Result<PickPlan, ExecError> {
    let obj = scene
        .object(&placement.object_id)
        .ok_or_else(|| SceneError::UnknownObject(placement.object_id.clone()))?;
    if !obj.movable {
        return Err(SceneError::Immovable(obj.id.clone()).into());
    }
    let calib = scene.workspace.calibration();
    let pick_yaw = grasp_yaw(&obj.bbox);
    let place_yaw = normalize_angle(pick_yaw + placement.rotation - obj.bbox.theta);
    let from = obj.centroid();
    let to = Point2::new(placement.x, placement.y);
    let point = |kind, p: Point2, lift: f64, yaw: f64| {
        let (x, y, z) = pixel_to_world(p, &calib);
        Waypoint { kind, pixel: p, world: [x, y, z + lift], yaw }
    };
    let waypoints = vec![
        point(WaypointKind::PickHover, from, LIFT_HEIGHT_M, pick_yaw),
        point(WaypointKind::Pick, from, 0.0, pick_yaw),
        point(WaypointKind::Lift, from, LIFT_HEIGHT_M, pick_yaw),
        point(WaypointKind::PlaceHover, to, LIFT_HEIGHT_M, place_yaw),
        point(WaypointKind::Place, to, 0.0, place_yaw),
    ];
    Ok(PickPlan { object_id: obj.id.clone(), grasp_point: from, grasp_yaw: pick_yaw, waypoints })
}

/// Executes the plan. On failure the input scene is left as it was.
pub fn run_plan(scene: &Scene, plan: &PickPlan, placement: &Placement) -> Result<Scene, ExecError> {
    if plan.object_id != placement.object_id {
        return Err(ExecError::PlanMismatch { plan: plan.object_id.clone(), placement: placement.object_id.clone() });
    }
    Ok(scene.apply_move(placement)?)
}

/// Plans and runs one move, returning the new scene and its log entry.
pub fn execute_move(
    scene: &Scene,
    placement: &Placement,
    step: usize,
    repaired: bool,
) -> Result<(Scene, Transition), ExecError> {
    let plan = make_pick_plan(scene, placement)?;
    let from = scene.object(&placement.object_id).map(|o| o.pose()).expect("plan checked the id");
    let next = run_plan(scene, &plan, placement)?;
    let transition = Transition {
        step,
        object: placement.object_id.clone(),
        from,
        to: placement.pose(),
        waypoints: plan.waypoints,
        repaired,
    };
    Ok((next, transition))
}

/// The box an object would occupy at the plan's place waypoint.
pub fn placed_box(scene: &Scene, placement: &Placement) -> Option<OrientedBox> {
    scene.object(&placement.object_id).map(|o| placement.apply_to(&o.bbox))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectRecord, Workspace};
    use std::f64::consts::FRAC_PI_2;

    fn scene() -> Scene {
        Scene::new(
            Workspace::new(640, 480),
            vec![
                ObjectRecord::new("bar", "bar", OrientedBox::axis_aligned(100.0, 100.0, 120.0, 40.0)),
                ObjectRecord::new("cup", "cup", OrientedBox::axis_aligned(400.0, 300.0, 40.0, 40.0)),
                ObjectRecord::new("table", "table", OrientedBox::axis_aligned(300.0, 100.0, 40.0, 40.0)).fixed(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_plan_is_degenerate() {
        let s = scene();
        let p = Placement::current(s.object("bar").unwrap());
        let plan = make_pick_plan(&s, &p).unwrap();
        assert_eq!(plan.waypoints.len(), 5);
        assert_eq!(plan.waypoints[0].pixel, plan.waypoints[4].pixel);
        assert_eq!(run_plan(&s, &plan, &p).unwrap(), s);
    }

    #[test]
    fn long_box_is_gripped_across() {
        let s = scene();
        let plan = make_pick_plan(&s, &Placement::new("bar", 200.0, 300.0, 0.0)).unwrap();
        // +pi/2 normalizes to -pi/2: the same jaw axis
        assert_eq!(plan.grasp_yaw, -FRAC_PI_2);
        assert_eq!(plan.grasp_point, Point2::new(100.0, 100.0));
        assert_eq!(plan.waypoints.first().unwrap().pixel, Point2::new(100.0, 100.0));
        assert_eq!(plan.waypoints.last().unwrap().pixel, Point2::new(200.0, 300.0));
        assert!((plan.waypoints[2].world[2] - LIFT_HEIGHT_M).abs() < 1e-12);
    }

    #[test]
    fn failures_leave_scene_untouched() {
        let s = scene();
        let before = s.clone();
        let p = Placement::new("bar", 400.0, 300.0, 0.0);
        let plan = make_pick_plan(&s, &p).unwrap();
        assert!(run_plan(&s, &plan, &p).is_err());
        assert_eq!(s, before);
        assert!(make_pick_plan(&s, &Placement::new("table", 1.0, 1.0, 0.0)).is_err());
        assert!(make_pick_plan(&s, &Placement::new("ghost", 1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn disjoint_moves_commute() {
        let s = scene();
        let a = Placement::new("bar", 150.0, 400.0, 0.3);
        let b = Placement::new("cup", 550.0, 60.0, 0.0);
        let ab = execute_move(&execute_move(&s, &a, 0, false).unwrap().0, &b, 0, false).unwrap().0;
        let ba = execute_move(&execute_move(&s, &b, 0, false).unwrap().0, &a, 0, false).unwrap().0;
        assert_eq!(ab, ba);
    }
}
