//! Object-level world state.
//!
//! A [`Scene`] is an immutable value: [`Scene::apply_move`] returns a new,
//! fully re-validated scene and leaves the receiver untouched.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Calibration, OrientedBox, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("malformed scene document: {0}")]
    Parse(String),
    #[error("invalid workspace: {0}")]
    InvalidWorkspace(String),
    #[error("object {0:?}: empty id or category")]
    EmptyField(String),
    #[error("duplicate object id {0:?}")]
    DuplicateId(String),
    #[error("object {0:?} has an invalid box")]
    InvalidBox(String),
    #[error("object {0:?} is outside the workspace")]
    OutOfBounds(String),
    #[error("objects {0:?} and {1:?} overlap")]
    IllegalOverlap(String, String),
    #[error("object {id:?} is stacked on {anchor:?}: {reason}")]
    BadStack {
        id: String,
        anchor: String,
        reason: String,
    },
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("object {0:?} is not movable")]
    Immovable(String),
    #[error("placement for {0:?} is not finite")]
    NonFinitePlacement(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub width_px: u32,
    pub height_px: u32,
    pub px_per_meter: f64,
    pub origin_world: [f64; 2],
    pub table_height_m: f64,
}

impl Workspace {
    pub fn new(width_px: u32, height_px: u32) -> Self {
        Self {
            width_px,
            height_px,
            px_per_meter: 1000.0,
            origin_world: [0.0, 0.0],
            table_height_m: 0.0,
        }
    }

    pub fn width(&self) -> f64 {
        f64::from(self.width_px)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.height_px)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            px_per_meter: self.px_per_meter,
            origin_world: (self.origin_world[0], self.origin_world[1]),
            table_height: self.table_height_m,
        }
    }
}

/// One grounded object. Centroid and rotation are read off the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub movable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stacked_on: Option<String>,
}

impl ObjectRecord {
    pub fn new(id: impl Into<String>, category: impl Into<String>, bbox: OrientedBox) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            bbox,
            movable: true,
            stacked_on: None,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.movable = false;
        self
    }

    pub fn on(mut self, anchor: impl Into<String>) -> Self {
        self.stacked_on = Some(anchor.into());
        self
    }

    pub fn centroid(&self) -> Point2 {
        self.bbox.center()
    }

    pub fn rotation(&self) -> f64 {
        self.bbox.theta
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.bbox.cx,
            y: self.bbox.cy,
            rotation: self.bbox.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub rotation: f64,
}

/// Target pose for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub object_id: String,
    pub x: f64,
    pub y: f64,
    /// Absolute rotation in radians.
    pub rotation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stacked_on: Option<String>,
}

impl Placement {
    pub fn new(object_id: impl Into<String>, x: f64, y: f64, rotation: f64) -> Self {
        Self {
            object_id: object_id.into(),
            x,
            y,
            rotation,
            stacked_on: None,
        }
    }

    /// The object's current pose, stacking included.
    pub fn current(obj: &ObjectRecord) -> Self {
        Self {
            object_id: obj.id.clone(),
            x: obj.bbox.cx,
            y: obj.bbox.cy,
            rotation: obj.bbox.theta,
            stacked_on: obj.stacked_on.clone(),
        }
    }

    pub fn stacked_on(mut self, anchor: impl Into<String>) -> Self {
        self.stacked_on = Some(anchor.into());
        self
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.rotation.is_finite()
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.x,
            y: self.y,
            rotation: self.rotation,
        }
    }

    /// The object's box moved to this placement.
    pub fn apply_to(&self, bbox: &OrientedBox) -> OrientedBox {
        bbox.with_center(self.x, self.y).with_theta(self.rotation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub workspace: Workspace,
    pub objects: Vec<ObjectRecord>,
}

impl Scene {
    pub fn new(workspace: Workspace, objects: Vec<ObjectRecord>) -> Result<Self, SceneError> {
        let scene = Self { workspace, objects };
        scene.validate()?;
        Ok(scene)
    }

    pub fn object(&self, id: &str) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let ws = &self.workspace;
        if ws.width_px == 0 || ws.height_px == 0 {
            return Err(SceneError::InvalidWorkspace("zero-sized workspace".into()));
        }
        if !ws.calibration().is_valid() {
            return Err(SceneError::InvalidWorkspace("invalid calibration".into()));
        }
        let mut seen = HashSet::new();
        for obj in &self.objects {
            if obj.id.is_empty() || obj.category.trim().is_empty() {
                return Err(SceneError::EmptyField(obj.id.clone()));
            }
            if !seen.insert(obj.id.as_str()) {
                return Err(SceneError::DuplicateId(obj.id.clone()));
            }
            if !obj.bbox.is_valid() {
                return Err(SceneError::InvalidBox(obj.id.clone()));
            }
            if !obj.bbox.inside_bounds(ws.width(), ws.height()) {
                return Err(SceneError::OutOfBounds(obj.id.clone()));
            }
        }
        for obj in &self.objects {
            if let Some(anchor_id) = &obj.stacked_on {
                self.check_stack(obj, anchor_id)?;
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if !stacked_pair(a, b) && geometry::overlaps(&a.bbox, &b.bbox) {
                    return Err(SceneError::IllegalOverlap(a.id.clone(), b.id.clone()));
                }
            }
        }
        Ok(())
    }

    fn check_stack(&self, obj: &ObjectRecord, anchor_id: &str) -> Result<(), SceneError> {
        let bad = |reason: &str| SceneError::BadStack {
            id: obj.id.clone(),
            anchor: anchor_id.to_string(),
            reason: reason.to_string(),
        };
        if anchor_id == obj.id {
            return Err(bad("an object cannot be stacked on itself"));
        }
        let anchor = self.object(anchor_id).ok_or_else(|| bad("anchor does not exist"))?;
        if anchor.stacked_on.as_deref() == Some(obj.id.as_str()) {
            return Err(bad("mutual stacking"));
        }
        let (small, large) = if obj.bbox.area() <= anchor.bbox.area() {
            (obj, anchor)
        } else {
            (anchor, obj)
        };
        if !large.bbox.contains_point(small.centroid()) {
            return Err(bad("center of the smaller box is not inside the larger box"));
        }
        Ok(())
    }

    /// Ids of objects the given box would illegally overlap, plus
    /// `"<bounds>"` when it leaves the workspace.
    pub fn blockers(&self, id: &str, bbox: &OrientedBox, stacked_on: Option<&str>) -> Vec<String> {
        let mut out = Vec::new();
        if !bbox.inside_bounds(self.workspace.width(), self.workspace.height()) {
            out.push("<bounds>".to_string());
        }
        for other in &self.objects {
            if other.id == id
                || stacked_on == Some(other.id.as_str())
                || other.stacked_on.as_deref() == Some(id)
            {
                continue;
            }
            if geometry::overlaps(bbox, &other.bbox) {
                out.push(other.id.clone());
            }
        }
        out
    }

    /// Returns a new scene with one object moved. The receiver is unchanged.
    pub fn apply_move(&self, placement: &Placement) -> Result<Scene, SceneError> {
        let idx = self
            .index_of(&placement.object_id)
            .ok_or_else(|| SceneError::UnknownObject(placement.object_id.clone()))?;
        let obj = &self.objects[idx];
        if !obj.movable {
            return Err(SceneError::Immovable(obj.id.clone()));
        }
        if !placement.is_finite() {
            return Err(SceneError::NonFinitePlacement(obj.id.clone()));
        }
        let mut next = self.clone();
        let moved = &mut next.objects[idx];
        moved.bbox = placement.apply_to(&moved.bbox);
        moved.stacked_on = placement.stacked_on.clone();
        next.validate()?;
        Ok(next)
    }

    /// Moves several objects at once and validates only the end state, so
    /// objects may swap places.
    pub fn apply_moves(&self, placements: &[Placement]) -> Result<Scene, SceneError> {
        let mut next = self.clone();
        for placement in placements {
            let idx = next
                .index_of(&placement.object_id)
                .ok_or_else(|| SceneError::UnknownObject(placement.object_id.clone()))?;
            let moved = &mut next.objects[idx];
            if !moved.movable {
                return Err(SceneError::Immovable(moved.id.clone()));
            }
            if !placement.is_finite() {
                return Err(SceneError::NonFinitePlacement(moved.id.clone()));
            }
            moved.bbox = placement.apply_to(&moved.bbox);
            moved.stacked_on = placement.stacked_on.clone();
        }
        next.validate()?;
        Ok(next)
    }

    /// Objects whose category matches one of `categories`
    /// (case-insensitive), in scene order. `"others"` never matches.
    pub fn relevant_objects(&self, categories: &[String]) -> Vec<ObjectRecord> {
        let wanted: Vec<String> = categories
            .iter()
            .map(|c| c.trim().to_lowercase())
            .filter(|c| c != "others")
            .collect();
        self.objects
            .iter()
            .filter(|o| wanted.iter().any(|c| *c == o.category.to_lowercase()))
            .cloned()
            .collect()
    }

    /// Axis-mirrored copy, used by symmetry checks.
    pub fn mirrored(&self, horizontal: bool) -> Scene {
        let (w, h) = (self.workspace.width(), self.workspace.height());
        let mut out = self.clone();
        for o in &mut out.objects {
            let b = o.bbox;
            o.bbox = if horizontal {
                OrientedBox::new(w - b.cx, b.cy, b.w, b.h, -b.theta)
            } else {
                OrientedBox::new(b.cx, h - b.cy, b.w, b.h, -b.theta)
            };
        }
        out
    }
}

fn stacked_pair(a: &ObjectRecord, b: &ObjectRecord) -> bool {
    a.stacked_on.as_deref() == Some(b.id.as_str()) || b.stacked_on.as_deref() == Some(a.id.as_str())
}

/// Parses and validates a scene document. Box angles are normalized.
pub fn load_scene(bytes: &[u8]) -> Result<Scene, SceneError> {
    let mut scene: Scene =
        serde_json::from_slice(bytes).map_err(|e| SceneError::Parse(e.to_string()))?;
    for o in &mut scene.objects {
        o.bbox = o.bbox.normalized();
    }
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(scene).expect("scene serialization is infallible");
    out.push(b'\n');
    out
}
