//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rearrange_core::geometry::{corners, OrientedBox, Point2};
use rearrange_core::scene::{ObjectRecord, Scene, Workspace};

pub mod cases;

pub const RASTER_STEP: f64 = 0.01;

/// x-extent of a convex polygon along the horizontal line at `y`.
fn row_interval(poly: &[Point2; 4], y: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..4 {
        let (p, q) = (poly[i], poly[(i + 1) % 4]);
        if (p.y - y) * (q.y - y) > 0.0 {
            continue;
        }
        if p.y == q.y {
            lo = lo.min(p.x.min(q.x));
            hi = hi.max(p.x.max(q.x));
        } else {
            let x = p.x + (y - p.y) / (q.y - p.y) * (q.x - p.x);
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// True when some point of the 0.01 px grid lies in both boxes.
pub fn raster_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let (ca, cb) = (corners(a), corners(b));
    let ys = |c: &[Point2; 4]| {
        c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)))
    };
    let ((a0, a1), (b0, b1)) = (ys(&ca), ys(&cb));
    let (y0, y1) = (a0.max(b0), a1.min(b1));
    if y0 > y1 {
        return false;
    }
    let (j0, j1) = ((y0 / RASTER_STEP).ceil() as i64, (y1 / RASTER_STEP).floor() as i64);
    for j in j0..=j1 {
        let y = j as f64 * RASTER_STEP;
        let (Some((l0, h0)), Some((l1, h1))) = (row_interval(&ca, y), row_interval(&cb, y)) else {
            continue;
        };
        let (lo, hi) = (l0.max(l1), h0.min(h1));
        if lo <= hi && (lo / RASTER_STEP).ceil() <= (hi / RASTER_STEP).floor() {
            return true;
        }
    }
    false
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: Point2, q: Point2, r: Point2) -> bool {
    r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
}

fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn point_segment(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) };
    (p.x - (a.x + t * dx)).hypot(p.y - (a.y + t * dy))
}

pub fn segment_distance(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> f64 {
    if segments_intersect(p1, p2, q1, q2) {
        return 0.0;
    }
    point_segment(p1, q1, q2)
        .min(point_segment(p2, q1, q2))
        .min(point_segment(q1, p1, p2))
        .min(point_segment(q2, p1, p2))
}

/// Minimum distance over all 16 edge pairs of the two boxes.
pub fn brute_gap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (ca, cb) = (corners(a), corners(b));
    let mut best = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            best = best.min(segment_distance(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]));
        }
    }
    best
}

pub fn dot_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// `round(100 * Jaccard)` over lowercase alphanumeric word sets.
pub fn jaccard_percent(a: &str, b: &str) -> u8 {
    let words = |s: &str| -> BTreeSet<String> {
        s.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(String::from).collect()
    };
    let (sa, sb) = (words(a), words(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 100;
    }
    (100.0 * sa.intersection(&sb).count() as f64 / union as f64).round() as u8
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut ChaCha8Rng, cx: (f64, f64), cy: (f64, f64), size: (f64, f64)) -> OrientedBox {
    OrientedBox::new(
        rng.random_range(cx.0..cx.1),
        rng.random_range(cy.0..cy.1),
        rng.random_range(size.0..size.1),
        rng.random_range(size.0..size.1),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// A valid scene with up to `max_objects` rejection-sampled objects, some
/// of them stacked on a larger object.
pub fn random_scene(seed: u64, max_objects: usize) -> Scene {
    let mut r = rng(seed);
    let ws = Workspace::new(640, 480);
    let mut scene = Scene::new(ws, Vec::new()).unwrap();
    let target = r.random_range(1..=max_objects);
    let mut attempts = 0;
    while scene.objects.len() < target && attempts < 500 {
        attempts += 1;
        let id = format!("obj-{}", scene.objects.len());
        let stack_on = (!scene.objects.is_empty() && r.random_bool(0.2))
            .then(|| scene.objects[r.random_range(0..scene.objects.len())].clone())
            .filter(|a| a.stacked_on.is_none() && !scene.objects.iter().any(|o| o.stacked_on.as_deref() == Some(a.id.as_str())));
        let candidate = match &stack_on {
            Some(anchor) => {
                let b = anchor.bbox;
                let small = OrientedBox::new(b.cx, b.cy, b.w * 0.4, b.h * 0.4, b.theta + r.random_range(-0.3..0.3));
                ObjectRecord::new(id, "item", small).on(anchor.id.clone())
            }
            None => ObjectRecord::new(id, "item", random_box(&mut r, (20.0, 620.0), (20.0, 460.0), (8.0, 90.0))),
        };
        let mut next = scene.clone();
        next.objects.push(candidate);
        if next.validate().is_ok() {
            scene = next;
        }
    }
    scene
}
