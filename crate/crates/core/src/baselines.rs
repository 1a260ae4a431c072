//! Heuristic comparison methods: uniform random placement and a centered
//! horizontal row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scene::{ObjectRecord, Placement, Scene};

pub const MAX_ATTEMPTS: usize = 10_000;
pub const DEFAULT_GAP_PX: f64 = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("object {0:?} is not movable")]
    Immovable(String),
    #[error("no relevant objects")]
    Empty,
    #[error("object {0:?} does not fit inside the workspace")]
    TooLarge(String),
    #[error("no collision-free pose for {id:?} after {attempts} attempts")]
    Exhausted { id: String, attempts: usize },
    #[error("row needs {needed} px but the workspace is {available} px wide")]
    RowTooWide { needed: f64, available: f64 },
}

fn movable<'a>(scene: &'a Scene, id: &str) -> Result<&'a ObjectRecord, BaselineError> {
    let obj = scene.object(id).ok_or_else(|| BaselineError::UnknownObject(id.to_string()))?;
    if !obj.movable {
        return Err(BaselineError::Immovable(id.to_string()));
    }
    Ok(obj)
}

/// Drops each object at a uniformly sampled center, keeping its rotation.
/// Objects are placed one after another, each against the scene left by
/// the previous ones. The margin to the workspace edge is the box's half
/// diagonal.
pub fn random_placement(scene: &Scene, relevant_ids: &[String], seed: u64) -> Result<Vec<Placement>, BaselineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (scene.workspace.width(), scene.workspace.height());
    let mut current = scene.clone();
    let mut out = Vec::with_capacity(relevant_ids.len());
    for id in relevant_ids {
        let obj = movable(&current, id)?.clone();
        let margin = obj.bbox.half_diagonal();
        if 2.0 * margin > w || 2.0 * margin > h {
            return Err(BaselineError::TooLarge(id.clone()));
        }
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let x = rng.random_range(margin..=w - margin);
            let y = rng.random_range(margin..=h - margin);
            let p = Placement::new(id.clone(), x, y, obj.bbox.theta);
            if let Ok(next) = current.apply_move(&p) {
                accepted = Some((p, next));
                break;
            }
        }
        let (p, next) = accepted.ok_or_else(|| BaselineError::Exhausted { id: id.clone(), attempts: MAX_ATTEMPTS })?;
        out.push(p);
        current = next;
    }
    Ok(out)
}

/// Lines the objects up left to right in scene order on `y = H/2`,
/// axis-aligned, with exactly `gap_px` between neighbours and the row
/// centered horizontally.
pub fn geometric_placement(scene: &Scene, relevant_ids: &[String], gap_px: f64) -> Result<Vec<Placement>, BaselineError> {
    for id in relevant_ids {
        movable(scene, id)?;
    }
    let row: Vec<&ObjectRecord> = scene.objects.iter().filter(|o| relevant_ids.contains(&o.id)).collect();
    if row.is_empty() {
        return Err(BaselineError::Empty);
    }
    let (w, h) = (scene.workspace.width(), scene.workspace.height());
    let needed = row.iter().map(|o| o.bbox.w).sum::<f64>() + gap_px * (row.len() - 1) as f64;
    if needed > w {
        return Err(BaselineError::RowTooWide { needed, available: w });
    }
    let mut left = (w - needed) / 2.0;
    let mut out = Vec::with_capacity(row.len());
    for o in row {
        out.push(Placement::new(o.id.clone(), left + o.bbox.w / 2.0, h / 2.0, 0.0));
        left += o.bbox.w + gap_px;
    }
    Ok(out)
}
