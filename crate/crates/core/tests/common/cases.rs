//! Shared case generators for the integration tests and the acceptance run.

use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::Rng;
use rearrange_core::evaluation::{FrontAxis, PredicateConfig, RelationKind, RelationSpec};
use rearrange_core::geometry::OrientedBox;
use rearrange_core::llm_client::{ChatBackend, ChatRequest, LlmError, OracleBackend};
use rearrange_core::scene::{ObjectRecord, Scene, Workspace};

use super::{dot_cosine, random_box, random_scene, rng};
use RelationKind::*;

/// Boxes near each other so that roughly half of the pairs intersect.
pub fn random_pairs(seed: u64, n: usize) -> Vec<(OrientedBox, OrientedBox)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let a = random_box(&mut r, (80.0, 120.0), (80.0, 120.0), (2.0, 60.0));
            let b = random_box(&mut r, (a.cx - 50.0, a.cx + 50.0), (a.cy - 50.0, a.cy + 50.0), (2.0, 60.0));
            (a, b)
        })
        .collect()
}

pub fn random_vector(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// Index of the first maximum.
pub fn brute_argmax(obj: &[f64], cats: &[Vec<f64>]) -> usize {
    let mut best = 0;
    for (i, c) in cats.iter().enumerate() {
        if dot_cosine(obj, c) > dot_cosine(obj, &cats[best]) {
            best = i;
        }
    }
    best
}

const VOCAB: &[&str] = &[
    "put", "the", "a", "an", "apple", "banana", "orange", "bowl", "plate", "cup", "knife", "on", "in", "left", "right",
    "of", "front", "behind", "beside", "far", "away", "from", "then", "together", "carrot", "Put", "PLATE", "spoon",
];

pub fn fuzzed(r: &mut impl Rng, seeds: &[String]) -> String {
    if r.random_bool(0.3) {
        // a seed instruction with a few words swapped out
        let mut words: Vec<String> = seeds.choose(r).unwrap().split(' ').map(String::from).collect();
        for _ in 0..r.random_range(0..3) {
            let i = r.random_range(0..words.len());
            words[i] = VOCAB.choose(r).unwrap().to_string();
        }
        words.join(" ")
    } else {
        let n = r.random_range(3..10);
        (0..n).map(|_| *VOCAB.choose(r).unwrap()).collect::<Vec<_>>().join(" ")
    }
}

pub fn spec(kind: RelationKind, s: &[&str], a: &[&str]) -> RelationSpec {
    RelationSpec {
        kind,
        subject_ids: s.iter().map(|x| x.to_string()).collect(),
        anchor_ids: a.iter().map(|x| x.to_string()).collect(),
        step_index: 0,
    }
}

fn plate() -> ObjectRecord {
    ObjectRecord::new("plate", "plate", OrientedBox::axis_aligned(320.0, 240.0, 120.0, 120.0))
}

fn eggplant(x: f64, y: f64) -> ObjectRecord {
    ObjectRecord::new("eggplant", "eggplant", OrientedBox::axis_aligned(x, y, 60.0, 30.0))
}

fn with_plate(mut objects: Vec<ObjectRecord>) -> Scene {
    objects.push(plate());
    Scene::new(Workspace::new(640, 480), objects).unwrap()
}

fn at(x: f64, y: f64) -> Scene {
    with_plate(vec![eggplant(x, y)])
}

pub struct Fixture {
    pub name: &'static str,
    pub scene: Scene,
    pub spec: RelationSpec,
    pub cfg: PredicateConfig,
    pub expected: bool,
}

fn fx(name: &'static str, scene: Scene, spec: RelationSpec, expected: bool) -> Fixture {
    Fixture { name, scene, spec, cfg: PredicateConfig::default(), expected }
}

/// Hand-built scenes with the expected verdict for one relation each.
pub fn battery() -> Vec<Fixture> {
    let e = ["eggplant"];
    let p = ["plate"];
    let potato = |id: &str, x: f64, y: f64| ObjectRecord::new(id, "potato", OrientedBox::axis_aligned(x, y, 45.0, 35.0));
    let robot = PredicateConfig { front_axis: FrontAxis::Robot, ..Default::default() };
    vec![
        fx("right of, level", at(430.0, 240.0), spec(RightOf, &e, &p), true),
        fx("right of, too far down", at(430.0, 360.0), spec(RightOf, &e, &p), false),
        fx("right of, stacked on the anchor", with_plate(vec![eggplant(360.0, 240.0).on("plate")]), spec(RightOf, &e, &p), false),
        fx("right of, diagonal boundary", at(440.0, 360.0), spec(RightOf, &e, &p), true),
        fx("left of, level", at(200.0, 240.0), spec(LeftOf, &e, &p), true),
        fx("left of, wrong side", at(430.0, 240.0), spec(LeftOf, &e, &p), false),
        fx("left of, too far down", at(200.0, 400.0), spec(LeftOf, &e, &p), false),
        fx("in front, below the plate", at(320.0, 350.0), spec(InFrontOf, &e, &p), true),
        fx("in front, above the plate", at(320.0, 130.0), spec(InFrontOf, &e, &p), false),
        fx("behind, above the plate", at(320.0, 130.0), spec(Behind, &e, &p), true),
        fx("behind, mostly sideways", at(180.0, 130.0), spec(Behind, &e, &p), false),
        Fixture { cfg: robot, ..fx("in front, robot axis", at(320.0, 130.0), spec(InFrontOf, &e, &p), true) },
        fx("on, stacked", with_plate(vec![eggplant(320.0, 240.0).on("plate")]), spec(On, &e, &p), true),
        fx("on, anchor is smaller", with_plate(vec![eggplant(320.0, 240.0).on("plate")]), spec(On, &p, &e), false),
        fx("on, resting on the table", at(430.0, 240.0), spec(On, &e, &p), false),
        fx("beside, 20 px gap", at(430.0, 240.0), spec(Beside, &e, &p), true),
        fx("beside, gap at the threshold", at(506.0, 240.0), spec(Beside, &e, &p), true),
        fx("beside, 110 px gap", at(520.0, 240.0), spec(Beside, &e, &p), false),
        fx("beside, stacked on the anchor", with_plate(vec![eggplant(360.0, 240.0).on("plate")]), spec(Beside, &e, &p), false),
        fx("far from, corner", at(40.0, 20.0), spec(FarFrom, &e, &p), true),
        fx("far from, close", at(420.0, 240.0), spec(FarFrom, &e, &p), false),
        fx(
            "together, 20 px apart",
            with_plate(vec![potato("a", 100.0, 100.0), potato("b", 165.0, 100.0)]),
            spec(Together, &["a", "b"], &[]),
            true,
        ),
        fx(
            "together, across the table",
            with_plate(vec![potato("a", 100.0, 100.0), potato("b", 500.0, 400.0)]),
            spec(Together, &["a", "b"], &[]),
            false,
        ),
        fx(
            "left of, only one of two subjects",
            with_plate(vec![potato("a", 150.0, 240.0), potato("b", 500.0, 240.0)]),
            spec(LeftOf, &["a", "b"], &p),
            false,
        ),
        fx(
            "left and right, two subjects",
            with_plate(vec![potato("a", 150.0, 240.0), potato("b", 500.0, 240.0)]),
            spec(RightOf, &["b"], &p),
            true,
        ),
    ]
}

/// Random scenes with at least two objects.
pub fn scenes(n: usize) -> impl Iterator<Item = Scene> {
    (0u64..).map(|seed| random_scene(seed, 8)).filter(|s| s.objects.len() >= 2).take(n)
}

/// Every relation kind between every ordered pair of objects.
pub fn all_specs(scene: &Scene) -> Vec<RelationSpec> {
    let mut out = Vec::new();
    for a in &scene.objects {
        for b in &scene.objects {
            if a.id == b.id {
                continue;
            }
            for kind in RelationKind::ALL {
                let anchors: &[&str] = if kind == Together { &[] } else { &[b.id.as_str()] };
                let subjects: Vec<&str> =
                    if kind == Together { vec![a.id.as_str(), b.id.as_str()] } else { vec![a.id.as_str()] };
                out.push(spec(kind, &subjects, anchors));
            }
        }
    }
    out
}

pub fn mirrored_kind(kind: RelationKind, horizontal: bool) -> RelationKind {
    match (kind, horizontal) {
        (LeftOf, true) => RightOf,
        (RightOf, true) => LeftOf,
        (InFrontOf, false) => Behind,
        (Behind, false) => InFrontOf,
        (k, _) => k,
    }
}

/// `scene` shifted by a random whole-pixel offset that keeps it in bounds,
/// or `None` when the shifted scene is not valid.
pub fn shifted(scene: &Scene, r: &mut impl Rng) -> Option<Scene> {
    let (ww, wh) = (scene.workspace.width_px as f64, scene.workspace.height_px as f64);
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MIN, f64::MAX, f64::MIN, f64::MAX);
    for o in &scene.objects {
        let (hx, hy) = o.bbox.aabb_half_extents();
        lo_x = lo_x.max(hx - o.bbox.cx);
        hi_x = hi_x.min(ww - hx - o.bbox.cx);
        lo_y = lo_y.max(hy - o.bbox.cy);
        hi_y = hi_y.min(wh - hy - o.bbox.cy);
    }
    let dx = if lo_x < hi_x { r.random_range(lo_x..hi_x).round() } else { 0.0 };
    let dy = if lo_y < hi_y { r.random_range(lo_y..hi_y).round() } else { 0.0 };
    let mut moved = scene.clone();
    for o in &mut moved.objects {
        o.bbox = o.bbox.translated(dx, dy);
    }
    moved.validate().is_ok().then_some(moved)
}

/// Two walls leave a 40 px wide vertical corridor around x = 320; the bar
/// only fits in it after a quarter turn.
pub fn corridor() -> Scene {
    Scene::new(
        Workspace::new(640, 480),
        vec![
            ObjectRecord::new("left-wall", "wall", OrientedBox::axis_aligned(150.0, 150.0, 300.0, 300.0)).fixed(),
            ObjectRecord::new("right-wall", "wall", OrientedBox::axis_aligned(490.0, 150.0, 300.0, 300.0)).fixed(),
            ObjectRecord::new("bar", "bar", OrientedBox::axis_aligned(320.0, 400.0, 200.0, 20.0)),
        ],
    )
    .unwrap()
}

/// Oracle backend that records every request it answers.
#[derive(Default)]
pub struct Capturing {
    inner: OracleBackend,
    pub seen: Mutex<Vec<ChatRequest>>,
}

impl ChatBackend for Capturing {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}
