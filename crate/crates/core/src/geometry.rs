//! Oriented-rectangle math in image coordinates.
//!
//! The frame is the workspace image: origin at the top-left corner, `+x`
//! to the right, `+y` toward the bottom edge (closer to the camera).
//! Angles are radians measured from `+x` toward `+y`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Wraps an angle into `[-π/2, π/2)`.
///
/// A rectangle rotated by `π` covers the same region, so this is the
/// canonical range for box orientation.
pub fn normalize_angle(theta: f64) -> f64 {
    if (-FRAC_PI_2..FRAC_PI_2).contains(&theta) {
        return theta;
    }
    let mut r = (theta + FRAC_PI_2).rem_euclid(PI);
    if r >= PI {
        r -= PI;
    }
    r - FRAC_PI_2
}

/// A rectangle given by its center, side lengths and the rotation of its
/// `w` side from `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    /// Builds a box with `theta` normalized.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        }
    }

    pub fn axis_aligned(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx, cy, w, h, 0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.theta.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn normalized(mut self) -> Self {
        self.theta = normalize_angle(self.theta);
        self
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.w.hypot(self.h)
    }

    pub fn with_center(mut self, cx: f64, cy: f64) -> Self {
        self.cx = cx;
        self.cy = cy;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = normalize_angle(theta);
        self
    }

    pub fn translated(self, dx: f64, dy: f64) -> Self {
        self.with_center(self.cx + dx, self.cy + dy)
    }

    /// Rotates the box about its own center.
    pub fn rotated(self, delta: f64) -> Self {
        self.with_theta(self.theta + delta)
    }

    /// Half extents of the axis-aligned box enclosing this one.
    pub fn aabb_half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (0.5 * self.w, 0.5 * self.h);
        (hw * c.abs() + hh * s.abs(), hw * s.abs() + hh * c.abs())
    }

    /// True if `p` lies in the closed rectangle.
    pub fn contains_point(&self, p: Point2) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p.x - self.cx, p.y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= 0.5 * self.w + 1e-9 && v.abs() <= 0.5 * self.h + 1e-9
    }

    /// True if every corner lies in `[0, width] x [0, height]`.
    pub fn inside_bounds(&self, width: f64, height: f64) -> bool {
        const EPS: f64 = 1e-9;
        corners(self)
            .iter()
            .all(|p| p.x >= -EPS && p.x <= width + EPS && p.y >= -EPS && p.y <= height + EPS)
    }
}

/// Pixel-to-world mapping for a fixed table plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub px_per_meter: f64,
    pub origin_world: (f64, f64),
    pub table_height: f64,
}

impl Calibration {
    pub fn is_valid(&self) -> bool {
        self.px_per_meter.is_finite()
            && self.px_per_meter > 0.0
            && self.origin_world.0.is_finite()
            && self.origin_world.1.is_finite()
            && self.table_height.is_finite()
    }
}

/// Corners in counter-clockwise order (in a y-up reading of the local
/// frame) starting at local `(+w/2, +h/2)`.
pub fn corners(b: &OrientedBox) -> [Point2; 4] {
    let (s, c) = b.theta.sin_cos();
    let (hw, hh) = (0.5 * b.w, 0.5 * b.h);
    [(hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)].map(|(lx, ly)| {
        Point2::new(b.cx + lx * c - ly * s, b.cy + lx * s + ly * c)
    })
}

/// Unit normals of the box's two edge directions.
fn edge_axes(b: &OrientedBox) -> [(f64, f64); 2] {
    let (s, c) = b.theta.sin_cos();
    [(c, s), (-s, c)]
}

fn project(pts: &[Point2; 4], axis: (f64, f64)) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.x * axis.0 + p.y * axis.1;
        (lo.min(d), hi.max(d))
    })
}

/// Smallest projected overlap over the four separating-axis candidates.
///
/// Positive when the rectangles intersect (the value is the SAT
/// penetration depth), zero when they touch, negative when some axis
/// separates them.
pub fn penetration_depth(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (ca, cb) = (corners(a), corners(b));
    edge_axes(a)
        .into_iter()
        .chain(edge_axes(b))
        .map(|axis| {
            let (min_a, max_a) = project(&ca, axis);
            let (min_b, max_b) = project(&cb, axis);
            max_a.min(max_b) - min_a.max(min_b)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Closed-rectangle intersection test (touching counts as overlap).
pub fn overlaps(a: &OrientedBox, b: &OrientedBox) -> bool {
    penetration_depth(a, b) >= 0.0
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.x - (a.x + t * abx)).hypot(p.y - (a.y + t * aby))
}

/// Distance between the boundaries of two disjoint rectangles, 0 when
/// they overlap.
///
/// For disjoint convex polygons the closest pair always involves a vertex
/// of one polygon, so vertex-to-edge distances in both directions suffice.
pub fn min_gap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if overlaps(a, b) {
        return 0.0;
    }
    let (ca, cb) = (corners(a), corners(b));
    let one_way = |pts: &[Point2; 4], poly: &[Point2; 4]| {
        pts.iter()
            .flat_map(|&p| (0..4).map(move |i| point_segment_distance(p, poly[i], poly[(i + 1) % 4])))
            .fold(f64::INFINITY, f64::min)
    };
    one_way(&ca, &cb).min(one_way(&cb, &ca))
}

/// Jaw-closing direction for a top-down parallel gripper: perpendicular
/// to the longer side, `h`-side normal on ties.
pub fn grasp_yaw(b: &OrientedBox) -> f64 {
    if b.w >= b.h {
        normalize_angle(b.theta + FRAC_PI_2)
    } else {
        normalize_angle(b.theta)
    }
}

pub fn pixel_to_world(p: Point2, calib: &Calibration) -> (f64, f64, f64) {
    (
        calib.origin_world.0 + p.x / calib.px_per_meter,
        calib.origin_world.1 + p.y / calib.px_per_meter,
        calib.table_height,
    )
}

pub fn world_to_pixel(x_m: f64, y_m: f64, calib: &Calibration) -> Point2 {
    Point2::new(
        (x_m - calib.origin_world.0) * calib.px_per_meter,
        (y_m - calib.origin_world.1) * calib.px_per_meter,
    )
}

/// Minimum-area rectangle enclosing a convex point set given in order.
///
/// Tries every hull edge direction (rotating calipers without the
/// incremental bookkeeping). Returns `None` for fewer than three points or
/// a degenerate set.
pub fn min_area_rect(hull: &[Point2]) -> Option<OrientedBox> {
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, OrientedBox)> = None;
    for i in 0..hull.len() {
        let (p, q) = (hull[i], hull[(i + 1) % hull.len()]);
        let len = (q.x - p.x).hypot(q.y - p.y);
        if len == 0.0 {
            continue;
        }
        let u = ((q.x - p.x) / len, (q.y - p.y) / len);
        let v = (-u.1, u.0);
        let (mut u_lo, mut u_hi, mut v_lo, mut v_hi) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for pt in hull {
            let du = pt.x * u.0 + pt.y * u.1;
            let dv = pt.x * v.0 + pt.y * v.1;
            u_lo = u_lo.min(du);
            u_hi = u_hi.max(du);
            v_lo = v_lo.min(dv);
            v_hi = v_hi.max(dv);
        }
        let (w, h) = (u_hi - u_lo, v_hi - v_lo);
        if w <= 0.0 || h <= 0.0 {
            continue;
        }
        let (mu, mv) = (0.5 * (u_lo + u_hi), 0.5 * (v_lo + v_hi));
        let candidate = OrientedBox::new(
            mu * u.0 + mv * v.0,
            mu * u.1 + mv * v.1,
            w,
            h,
            u.1.atan2(u.0),
        );
        if best.as_ref().is_none_or(|(area, _)| w * h < *area) {
            best = Some((w * h, candidate));
        }
    }
    best.map(|(_, b)| b)
}

/// Canonical representative of the corner set: `w >= h`, theta normalized.
pub fn canonical(b: &OrientedBox) -> OrientedBox {
    if b.w >= b.h {
        b.normalized()
    } else {
        OrientedBox::new(b.cx, b.cy, b.h, b.w, b.theta + FRAC_PI_2)
    }
}
