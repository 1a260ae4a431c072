//! Constructive solver for relation specs.
//!
//! For each subject, candidate poses are generated in a fixed order (the
//! canonical pose first) and the first one that keeps the scene valid and
//! satisfies the relation is taken. Subjects are placed one at a time
//! against the already-updated scene.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use super::grammar::{RelationKind, RelationSpec};
use super::predicates::{check, CheckError, PredicateConfig};
use crate::geometry::OrientedBox;
use crate::scene::{Placement, Scene};

/// Clearance between the anchor and the subject for directional relations.
pub const DEFAULT_MARGIN_PX: f64 = 20.0;

const MARGINS: [f64; 8] = [DEFAULT_MARGIN_PX, 10.0, 30.0, 40.0, 60.0, 5.0, 80.0, 120.0];
const LATERAL: [f64; 9] = [0.0, 15.0, -15.0, 30.0, -30.0, 45.0, -45.0, 60.0, -60.0];
const BESIDE_GAPS: [f64; 5] = [DEFAULT_MARGIN_PX, 10.0, 30.0, 40.0, 60.0];
const BESIDE_LATERAL: [f64; 5] = [0.0, 20.0, -20.0, 40.0, -40.0];
const TOGETHER_GAPS: [f64; 4] = [10.0, 20.0, 5.0, 30.0];
const GRID_STEP: f64 = 10.0;
const ON_STEP: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no pose satisfies {kind} for {subject:?}")]
    NoSolution { kind: &'static str, subject: String },
    #[error(transparent)]
    Check(#[from] CheckError),
}

#[derive(Clone, Copy)]
enum Side {
    East,
    West,
    South,
    North,
}

const SIDES: [Side; 4] = [Side::East, Side::West, Side::South, Side::North];

/// Center for a box with half extents `sub` placed on `side` of `anchor`
/// with clearance `gap`, shifted by `lateral` along the side.
fn beside_center(anchor: &OrientedBox, sub: (f64, f64), side: Side, gap: f64, lateral: f64) -> (f64, f64) {
    let (ahx, ahy) = anchor.aabb_half_extents();
    match side {
        Side::East => (anchor.cx + ahx + sub.0 + gap, anchor.cy + lateral),
        Side::West => (anchor.cx - ahx - sub.0 - gap, anchor.cy + lateral),
        Side::South => (anchor.cx + lateral, anchor.cy + ahy + sub.1 + gap),
        Side::North => (anchor.cx + lateral, anchor.cy - ahy - sub.1 - gap),
    }
}

fn candidates(
    kind: RelationKind,
    scene: &Scene,
    subject: &OrientedBox,
    anchor: Option<&OrientedBox>,
    group: &[OrientedBox],
    cfg: &PredicateConfig,
) -> Vec<(f64, f64)> {
    let sub = subject.aabb_half_extents();
    let mut out = Vec::new();
    let directional = |side: Side, out: &mut Vec<(f64, f64)>| {
        if let Some(a) = anchor {
            for g in MARGINS {
                for lat in LATERAL {
                    out.push(beside_center(a, sub, side, g, lat));
                }
            }
        }
    };
    let front = match cfg.front_axis {
        super::FrontAxis::Camera => (Side::South, Side::North),
        super::FrontAxis::Robot => (Side::North, Side::South),
    };
    match kind {
        RelationKind::RightOf => directional(Side::East, &mut out),
        RelationKind::LeftOf => directional(Side::West, &mut out),
        RelationKind::InFrontOf => directional(front.0, &mut out),
        RelationKind::Behind => directional(front.1, &mut out),
        RelationKind::Beside => {
            if let Some(a) = anchor {
                for g in BESIDE_GAPS {
                    for side in SIDES {
                        for lat in BESIDE_LATERAL {
                            out.push(beside_center(a, sub, side, g, lat));
                        }
                    }
                }
            }
        }
        RelationKind::Together => {
            for member in group {
                for g in TOGETHER_GAPS {
                    for side in SIDES {
                        for lat in [0.0, 15.0, -15.0, 30.0, -30.0] {
                            out.push(beside_center(member, sub, side, g, lat));
                        }
                    }
                }
            }
        }
        RelationKind::On => {
            if let Some(a) = anchor {
                let (ahx, ahy) = a.aabb_half_extents();
                let (nx, ny) = ((ahx / ON_STEP) as i64, (ahy / ON_STEP) as i64);
                let mut grid: Vec<(f64, f64)> = (-ny..=ny)
                    .flat_map(|j| (-nx..=nx).map(move |i| (i as f64 * ON_STEP, j as f64 * ON_STEP)))
                    .collect();
                grid.sort_by(|p, q| {
                    (p.0.hypot(p.1))
                        .total_cmp(&q.0.hypot(q.1))
                        .then(p.1.total_cmp(&q.1))
                        .then(p.0.total_cmp(&q.0))
                });
                out.extend(grid.into_iter().map(|(dx, dy)| (a.cx + dx, a.cy + dy)));
            }
        }
        RelationKind::FarFrom => {
            if let Some(a) = anchor {
                let (w, h) = (scene.workspace.width(), scene.workspace.height());
                let mut grid = Vec::new();
                let mut y = sub.1;
                while y <= h - sub.1 {
                    let mut x = sub.0;
                    while x <= w - sub.0 {
                        grid.push((x, y));
                        x += GRID_STEP;
                    }
                    y += GRID_STEP;
                }
                let dist = |p: &(f64, f64)| (p.0 - a.cx).hypot(p.1 - a.cy);
                grid.sort_by(|p, q| dist(q).total_cmp(&dist(p)).then(p.1.total_cmp(&q.1)).then(p.0.total_cmp(&q.0)));
                out.extend(grid);
            }
        }
    }
    out
}

fn single(kind: RelationKind, subjects: Vec<String>, anchors: &[String], step_index: usize) -> RelationSpec {
    RelationSpec { kind, subject_ids: subjects, anchor_ids: anchors.to_vec(), step_index }
}

/// Places the subjects of one spec. Returns the placements in application
/// order and the resulting scene.
pub fn solve_relation(
    scene: &Scene,
    spec: &RelationSpec,
    cfg: &PredicateConfig,
) -> Result<(Vec<Placement>, Scene), SolveError> {
    let mut current = scene.clone();
    let mut placements = Vec::new();
    let anchor_box = match spec.anchor_ids.first() {
        Some(id) => Some(
            scene
                .object(id)
                .ok_or_else(|| CheckError::UnknownObject(id.clone()))?
                .bbox,
        ),
        None => None,
    };
    let mut group: Vec<String> = Vec::new();
    for (i, subject_id) in spec.subject_ids.iter().enumerate() {
        let obj = current
            .object(subject_id)
            .ok_or_else(|| CheckError::UnknownObject(subject_id.clone()))?
            .clone();
        if spec.kind == RelationKind::Together && i == 0 {
            group.push(subject_id.clone());
            continue;
        }
        let target = if spec.kind == RelationKind::Together {
            let mut members = group.clone();
            members.push(subject_id.clone());
            single(RelationKind::Together, members, &[], spec.step_index)
        } else {
            single(spec.kind, vec![subject_id.clone()], &spec.anchor_ids, spec.step_index)
        };
        if check(&current, &target, cfg)? {
            group.push(subject_id.clone());
            continue;
        }
        let group_boxes: Vec<OrientedBox> =
            group.iter().filter_map(|id| current.object(id)).map(|o| o.bbox).collect();
        let stacked_on = (spec.kind == RelationKind::On).then(|| spec.anchor_ids[0].clone());
        let mut solved = None;
        'rotations: for turn in [0.0, FRAC_PI_2] {
            let rotated = obj.bbox.rotated(turn);
            for (x, y) in candidates(spec.kind, &current, &rotated, anchor_box.as_ref(), &group_boxes, cfg) {
                let placement = Placement {
                    object_id: subject_id.clone(),
                    x,
                    y,
                    rotation: rotated.theta,
                    stacked_on: stacked_on.clone(),
                };
                let Ok(next) = current.apply_move(&placement) else {
                    continue;
                };
                if check(&next, &target, cfg)? {
                    solved = Some((placement, next));
                    break 'rotations;
                }
            }
        }
        let (placement, next) = solved.ok_or_else(|| SolveError::NoSolution {
            kind: spec.kind.as_str(),
            subject: subject_id.clone(),
        })?;
        placements.push(placement);
        current = next;
        group.push(subject_id.clone());
    }
    Ok((placements, current))
}

/// Solves specs in order, each against the scene left by the previous one.
pub fn solve_relations(
    scene: &Scene,
    specs: &[RelationSpec],
    cfg: &PredicateConfig,
) -> Result<(Vec<Placement>, Scene), SolveError> {
    let mut current = scene.clone();
    let mut all = Vec::new();
    for spec in specs {
        let (placements, next) = solve_relation(&current, spec, cfg)?;
        all.extend(placements);
        current = next;
    }
    Ok((all, current))
}
