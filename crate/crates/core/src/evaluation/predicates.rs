//! Geometric truth conditions for each relation kind.
//!
//! With `d` the displacement from the anchor centroid to the subject
//! centroid and `diag` the workspace diagonal:
//!
//! | kind          | condition                                               |
//! |---------------|---------------------------------------------------------|
//! | `right_of`    | `d.x > 0`, boxes disjoint, `|d.y| <= |d.x|`            |
//! | `left_of`     | `d.x < 0`, boxes disjoint, `|d.y| <= |d.x|`            |
//! | `in_front_of` | `d.y > 0` (toward the camera), disjoint, `|d.x| <= |d.y|` |
//! | `behind`      | `d.y < 0`, disjoint, `|d.x| <= |d.y|`                   |
//! | `on`          | subject centroid inside anchor box, smaller area, stacked on anchor |
//! | `beside`      | disjoint and `0 < gap <= beside_ratio * diag`           |
//! | `far_from`    | centroid distance `>= far_ratio * diag`                 |
//! | `together`    | subjects pairwise disjoint with gap `<= beside_ratio * diag` |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{RelationKind, RelationSpec};
use crate::geometry::{min_gap, overlaps};
use crate::scene::{ObjectRecord, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrontAxis {
    /// Front is toward the bottom image edge (`+y`).
    #[default]
    Camera,
    /// Front is toward the top image edge (`-y`).
    Robot,
}

impl FrontAxis {
    fn sign(self) -> f64 {
        match self {
            FrontAxis::Camera => 1.0,
            FrontAxis::Robot => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredicateConfig {
    pub beside_ratio: f64,
    pub far_ratio: f64,
    pub front_axis: FrontAxis,
}

impl Default for PredicateConfig {
    fn default() -> Self {
        Self { beside_ratio: 0.12, far_ratio: 0.4, front_axis: FrontAxis::Camera }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("{0} relation needs an anchor")]
    MissingAnchor(&'static str),
}

fn lookup<'a>(scene: &'a Scene, id: &str) -> Result<&'a ObjectRecord, CheckError> {
    scene.object(id).ok_or_else(|| CheckError::UnknownObject(id.to_string()))
}

fn pair_holds(kind: RelationKind, s: &ObjectRecord, a: &ObjectRecord, diag: f64, cfg: &PredicateConfig) -> bool {
    let dx = s.bbox.cx - a.bbox.cx;
    let dy = s.bbox.cy - a.bbox.cy;
    let disjoint = || !overlaps(&s.bbox, &a.bbox);
    match kind {
        RelationKind::RightOf => dx > 0.0 && dy.abs() <= dx.abs() && disjoint(),
        RelationKind::LeftOf => dx < 0.0 && dy.abs() <= dx.abs() && disjoint(),
        RelationKind::InFrontOf | RelationKind::Behind => {
            let forward = cfg.front_axis.sign() * dy;
            let toward = if kind == RelationKind::InFrontOf { forward > 0.0 } else { forward < 0.0 };
            toward && dx.abs() <= dy.abs() && disjoint()
        }
        RelationKind::On => {
            a.bbox.contains_point(s.centroid())
                && s.bbox.area() < a.bbox.area()
                && s.stacked_on.as_deref() == Some(a.id.as_str())
        }
        RelationKind::Beside | RelationKind::Together => {
            let gap = min_gap(&s.bbox, &a.bbox);
            disjoint() && gap > 0.0 && gap <= cfg.beside_ratio * diag
        }
        RelationKind::FarFrom => s.centroid().distance(&a.centroid()) >= cfg.far_ratio * diag,
    }
}

/// Whether `scene` satisfies `spec`. Multi-subject relations must hold
/// for every subject against every anchor.
pub fn check(scene: &Scene, spec: &RelationSpec, cfg: &PredicateConfig) -> Result<bool, CheckError> {
    let diag = scene.workspace.diagonal();
    let subjects = spec
        .subject_ids
        .iter()
        .map(|id| lookup(scene, id))
        .collect::<Result<Vec<_>, _>>()?;
    let anchors = spec
        .anchor_ids
        .iter()
        .map(|id| lookup(scene, id))
        .collect::<Result<Vec<_>, _>>()?;
    if spec.kind == RelationKind::Together {
        let ok = subjects.iter().enumerate().all(|(i, a)| {
            subjects[i + 1..]
                .iter()
                .all(|b| pair_holds(RelationKind::Together, a, b, diag, cfg))
        });
        return Ok(ok);
    }
    if anchors.is_empty() {
        return Err(CheckError::MissingAnchor(spec.kind.as_str()));
    }
    Ok(subjects
        .iter()
        .all(|s| anchors.iter().all(|a| pair_holds(spec.kind, s, a, diag, cfg))))
}
