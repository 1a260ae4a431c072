//! Acceptance run: one PASS or FAIL line per criterion, nonzero exit on
//! any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::net::{SocketAddr, TcpListener};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, ExitCode};
use std::time::{Duration, Instant};

use common::cases;
use indexmap::IndexMap;
use rand::Rng;
use rearrange_core::baselines::{geometric_placement, random_placement};
use rearrange_core::evaluation::{
    check, fixture_scene, parse_relation, run_benchmark, BenchConfig, Method, PredicateConfig, RelationKind, SCENARIOS,
};
use rearrange_core::experience_store::{add_experience, retrieve_reference, Experience, Source, Store, EXTENSION, MANIFEST};
use rearrange_core::geometry::{min_gap, overlaps, penetration_depth, OrientedBox};
use rearrange_core::grounding::{assign_categories, EmbeddingVector, ScriptedEmbedder};
use rearrange_core::llm_client::{OracleBackend, RequestTag, ScriptedBackend};
use rearrange_core::reasoner::{validate_and_repair, Pipeline, Placement, ReferenceMode};
use rearrange_core::scene::{ObjectRecord, Scene, Workspace};
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Result<f64, String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {:.2} s, limit {} s", took.as_secs_f64(), limit.as_secs());
    Ok(took.as_secs_f64())
}

fn geometry() -> Outcome {
    let start = Instant::now();
    let pairs = cases::random_pairs(11, 1000);
    let (mut hits, mut boundary) = (0, 0);
    for (a, b) in &pairs {
        let sat = overlaps(a, b);
        hits += sat as usize;
        if sat != common::raster_overlap(a, b) {
            let depth = penetration_depth(a, b);
            ensure!(depth.abs() < 0.02 || common::brute_gap(a, b) < 0.02, "disagreement at depth {depth}: {a:?} {b:?}");
            boundary += 1;
        }
    }
    ensure!(hits > 200 && hits < 800, "unbalanced sample: {hits} of 1000 overlap");
    let mut worst: f64 = 0.0;
    for (a, b) in cases::random_pairs(12, 1000) {
        let g = min_gap(&a, &b);
        if overlaps(&a, &b) {
            ensure!(g == 0.0, "overlapping pair with gap {g}");
        } else {
            worst = worst.max((g - common::brute_gap(&a, &b)).abs());
        }
    }
    ensure!(worst < 1e-6, "gap error {worst:e}");
    let secs = within(start, Duration::from_secs(30))?;
    Ok(format!("1000 pairs, {hits} overlapping, {boundary} boundary disagreements, gap error {worst:.1e}, {secs:.2} s"))
}

fn grounding() -> Outcome {
    let mut r = common::rng(21);
    for _ in 0..100 {
        let dim = r.random_range(2..16);
        let cats: Vec<Vec<f64>> = (0..4).map(|_| cases::random_vector(&mut r, dim)).collect();
        let objs: Vec<Vec<f64>> = (0..5).map(|_| cases::random_vector(&mut r, dim)).collect();
        let embed = |vs: &[Vec<f64>], prefix: &str| -> IndexMap<String, EmbeddingVector> {
            vs.iter().enumerate().map(|(i, v)| (format!("{prefix}{i}"), EmbeddingVector::new(v.clone()).unwrap())).collect()
        };
        let (cat_map, obj_map) = (embed(&cats, "c"), embed(&objs, "o"));
        let got = assign_categories(&obj_map, &cat_map).map_err(|e| e.to_string())?;
        for (i, o) in objs.iter().enumerate() {
            let want = format!("c{}", cases::brute_argmax(o, &cats));
            ensure!(got[&format!("o{i}")] == want, "object o{i}: {} vs {want}", got[&format!("o{i}")]);
        }
        let k: Vec<f64> = (0..9).map(|_| 10f64.powf(r.random_range(-2.0..2.0))).collect();
        let scaled_cats = cat_map.iter().zip(&k).map(|((id, v), &s)| (id.clone(), v.scaled(s))).collect();
        let scaled_objs = obj_map.iter().zip(&k[4..]).map(|((id, v), &s)| (id.clone(), v.scaled(s))).collect();
        ensure!(assign_categories(&scaled_objs, &scaled_cats).map_err(|e| e.to_string())? == got, "rescaling changed the assignment");
    }
    Ok("100 instances match the brute-force argmax, rescaling invariant".into())
}

fn retrieval() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_or_seed(dir.path()).map_err(|e| e.to_string())?;
    ensure!(store.len() == 10, "seed store holds {}", store.len());
    let llm = ScriptedBackend::new();
    let items = store.list();
    let seeds: Vec<String> = items.iter().map(|e| e.instruction.clone()).collect();
    let mut r = common::rng(31);
    for _ in 0..50 {
        let q = cases::fuzzed(&mut r, &seeds);
        let scores: Vec<u8> = items.iter().map(|e| common::jaccard_percent(&q, &e.instruction)).collect();
        let best = *scores.iter().max().unwrap();
        let first = scores.iter().position(|&s| s == best).unwrap();
        let got = retrieve_reference(&store, &q, &llm).map_err(|e| e.to_string())?;
        ensure!(got.experience.id == items[first].id && got.score == best, "{q:?}: got {} ({})", got.experience.id, got.score);
    }

    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let scene = fixture_scene("scene1").unwrap();
    let a = add_experience(&store, "put the eggplant on the plate", &scene, Source::Human).map_err(|e| e.to_string())?;
    add_experience(&store, "put the eggplant on the plate", &scene, Source::Robot).map_err(|e| e.to_string())?;
    let got = retrieve_reference(&store, "put the eggplant on the plate", &llm).map_err(|e| e.to_string())?;
    ensure!(got.experience.id == a.id, "tie went to {}", got.experience.id);
    Ok("50 fuzzed instructions match independent rescoring, ties go to the earliest".into())
}

fn pipeline() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_or_seed(dir.path()).map_err(|e| e.to_string())?;
    let (oracle, embedder) = (OracleBackend::default(), ScriptedEmbedder::default());
    let pipeline = Pipeline::new(&oracle, &embedder, Some(&store));
    let cfg = PredicateConfig::default();
    let (mut count, mut sequential) = (0, 0);
    for scenario in SCENARIOS {
        let scene = fixture_scene(scenario.fixture).unwrap();
        for instruction in scenario.instructions {
            let log = pipeline.execute(&scene, instruction, ReferenceMode::WithReference).map_err(|e| format!("{instruction}: {e}"))?;
            for (i, step) in log.steps.iter().enumerate() {
                step.scene.validate().map_err(|e| format!("{instruction}, step {i}: {e}"))?;
            }
            let specs = parse_relation(instruction, &scene).map_err(|e| e.to_string())?;
            for spec in &specs {
                let at = &log.steps.get(spec.step_index).ok_or(format!("{instruction}: missing step"))?.scene;
                ensure!(check(at, spec, &cfg).map_err(|e| e.to_string())?, "{instruction}: {spec:?} not satisfied");
            }
            sequential += (log.steps.len() > 1) as usize;
            count += 1;
        }
    }
    ensure!(count == 15 && sequential == 5, "{count} instructions, {sequential} sequential");
    let bench = BenchConfig { methods: vec![Method::OursWithRef], ..Default::default() };
    let report = run_benchmark(&bench, &oracle, &embedder, Some(&store)).map_err(|e| e.to_string())?;
    let rate = report.success_rate(Method::OursWithRef).unwrap_or(0.0);
    ensure!(rate == 1.0, "benchmark success rate {rate}");
    let secs = within(start, Duration::from_secs(10))?;
    Ok(format!("15/15 instructions, 5 sequential, every scene valid, success rate {rate:.2}, {secs:.2} s"))
}

/// Random baseline success rate with seed 0 on the bundled scenarios.
const RANDOM_SEED0_RATE: f64 = 1.0 / 15.0;

fn baselines() -> Outcome {
    let mut r = common::rng(51);
    for _ in 0..200 {
        let n = r.random_range(1..6);
        let dims: Vec<(f64, f64)> = (0..n).map(|_| (r.random_range(10.0..120.0), r.random_range(10.0..100.0))).collect();
        let gap = r.random_range(0.0..80.0);
        let mut x = 10.0;
        let objects = dims
            .iter()
            .enumerate()
            .map(|(i, &(w, h))| {
                let y = if i % 2 == 0 { 60.0 } else { 420.0 };
                let o = ObjectRecord::new(format!("o{i}"), "thing", OrientedBox::axis_aligned(x + w / 2.0, y, w, h));
                x += w + 5.0;
                o
            })
            .collect();
        let scene = Scene::new(Workspace::new(1600, 480), objects).unwrap();
        let relevant: Vec<String> = scene.objects.iter().map(|o| o.id.clone()).collect();
        let moves = geometric_placement(&scene, &relevant, gap).map_err(|e| e.to_string())?;
        ensure!(moves.iter().all(|p| p.y == moves[0].y), "centers at different y");
        for (pair, w) in moves.windows(2).zip(dims.windows(2)) {
            let between = (pair[1].x - w[1].0 / 2.0) - (pair[0].x + w[0].0 / 2.0);
            ensure!((between - gap).abs() < 1e-9, "gap {between} instead of {gap}");
        }
    }

    let scene = fixture_scene("scene3").unwrap();
    let relevant: Vec<String> = ["carrot", "potato", "eggplant"].map(String::from).to_vec();
    for seed in 0..1000u64 {
        let moves = random_placement(&scene, &relevant, seed).map_err(|e| e.to_string())?;
        let next = scene.apply_moves(&moves).map_err(|e| format!("seed {seed}: {e}"))?;
        next.validate().map_err(|e| format!("seed {seed}: {e}"))?;
        for (before, after) in scene.objects.iter().zip(&next.objects) {
            let kept = if relevant.contains(&before.id) { before.bbox.theta == after.bbox.theta } else { before == after };
            ensure!(kept, "seed {seed} changed {} beyond its move", before.id);
        }
        let again = random_placement(&scene, &relevant, seed).map_err(|e| e.to_string())?;
        let bits = |m: &[Placement]| m.iter().map(|p| (p.x.to_bits(), p.y.to_bits(), p.rotation.to_bits())).collect::<Vec<_>>();
        ensure!(bits(&moves) == bits(&again), "seed {seed} is not reproducible");
    }

    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_or_seed(dir.path()).map_err(|e| e.to_string())?;
    let report = run_benchmark(&BenchConfig::default(), &OracleBackend::default(), &ScriptedEmbedder::default(), Some(&store))
        .map_err(|e| e.to_string())?;
    ensure!(report.summaries.len() == 4, "{} methods", report.summaries.len());
    ensure!(report.summaries.iter().all(|s| s.scenarios.len() == 3), "scenario columns missing");
    ensure!(report.to_table().contains("Mean"), "no mean column");
    let random = report.success_rate(Method::Random).unwrap_or(1.0);
    let ours = report.success_rate(Method::OursWithRef).unwrap_or(0.0);
    ensure!(random < ours, "random {random} is not below {ours}");
    ensure!((random - RANDOM_SEED0_RATE).abs() < 1e-12, "random rate {random} moved from {RANDOM_SEED0_RATE}");
    Ok(format!("200 exact rows, 1000 clean random runs, random {random:.3} < ours {ours:.2}"))
}

fn rotation_repair() -> Outcome {
    let scene = cases::corridor();
    let target = Placement::new("bar", 320.0, 150.0, 0.0);
    let r = validate_and_repair(&scene, &target).map_err(|e| e.to_string())?;
    ensure!(r.repaired, "the colliding pose was not repaired");
    ensure!((r.placement.x, r.placement.y) == (320.0, 150.0), "center moved to ({}, {})", r.placement.x, r.placement.y);
    let placed = r.placement.apply_to(&scene.object("bar").unwrap().bbox);
    for wall in ["left-wall", "right-wall"] {
        ensure!(!overlaps(&placed, &scene.object(wall).unwrap().bbox), "repaired pose hits {wall}");
    }
    let free = Placement::new("bar", 320.0, 420.0, 0.0);
    let kept = validate_and_repair(&scene, &free).map_err(|e| e.to_string())?;
    ensure!(kept.placement == free && !kept.repaired, "a free pose was changed");
    Ok(format!("corridor pose turned to {:.4} rad in place, free pose untouched", r.placement.rotation))
}

fn predicates() -> Outcome {
    let fixtures = cases::battery();
    let mut covered = std::collections::HashSet::new();
    for f in &fixtures {
        ensure!(check(&f.scene, &f.spec, &f.cfg).map_err(|e| e.to_string())? == f.expected, "fixture {:?}", f.name);
        covered.insert((f.spec.kind, f.expected));
    }
    for kind in RelationKind::ALL {
        ensure!(covered.contains(&(kind, true)) && covered.contains(&(kind, false)), "{kind:?} not covered both ways");
    }
    let cfg = PredicateConfig::default();
    let mut r = common::rng(41);
    let mut shifted = 0;
    for scene in cases::scenes(100) {
        for horizontal in [true, false] {
            let m = scene.mirrored(horizontal);
            for s in cases::all_specs(&scene) {
                let mut flipped = s.clone();
                flipped.kind = cases::mirrored_kind(s.kind, horizontal);
                let (a, b) = (check(&scene, &s, &cfg), check(&m, &flipped, &cfg));
                ensure!(a.is_ok() && a == b, "mirror breaks {s:?}");
            }
        }
        if let Some(moved) = cases::shifted(&scene, &mut r) {
            shifted += 1;
            for s in cases::all_specs(&scene) {
                ensure!(check(&scene, &s, &cfg) == check(&moved, &s, &cfg), "translation breaks {s:?}");
            }
        }
    }
    ensure!(shifted > 90, "only {shifted} scenes could be translated");
    Ok(format!("{} fixtures, mirror on 100 scenes, translation on {shifted}", fixtures.len()))
}

fn ablation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_or_seed(dir.path()).map_err(|e| e.to_string())?;
    let embedder = ScriptedEmbedder::default();
    let scene = fixture_scene("scene3").unwrap();
    let instruction = "put the eggplant beside the carrot, then far away from the carrot";
    let (with, without) = (cases::Capturing::default(), cases::Capturing::default());
    let a = Pipeline::new(&with, &embedder, Some(&store))
        .execute(&scene, instruction, ReferenceMode::WithReference)
        .map_err(|e| e.to_string())?;
    let b = Pipeline::new(&without, &embedder, Some(&store))
        .execute(&scene, instruction, ReferenceMode::WithoutReference)
        .map_err(|e| e.to_string())?;
    let tags = |c: &cases::Capturing| {
        c.seen.lock().unwrap().iter().map(|r| r.tag).filter(|t| *t != RequestTag::Similarity).collect::<Vec<_>>()
    };
    ensure!(tags(&with) == tags(&without), "request sequences differ");
    ensure!(a.steps.len() == b.steps.len(), "step counts differ");
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        let reference = sa.prompt.reference.as_ref().ok_or("no reference block")?;
        ensure!(sb.prompt.reference.is_none(), "reference block without a reference");
        let stripped = sa.prompt.user_text().replace(&format!("{reference}\n\n"), "");
        ensure!(stripped == sb.prompt.user_text() && sa.prompt.system == sb.prompt.system, "prompts differ outside the reference");
        ensure!(sa.placements == sb.placements && sa.transitions == sb.transitions, "control flow differs");
    }
    Ok(format!("{} steps, prompts differ only in the reference block", a.steps.len()))
}

fn rearrange(store: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rearrange"))
        .args(args)
        .arg("--store-dir")
        .arg(store)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "rearrange {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        files.push((path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(store: &Path) -> Result<(Server, String), String> {
    let addr: SocketAddr = TcpListener::bind("127.0.0.1:0").and_then(|l| l.local_addr()).map_err(|e| e.to_string())?;
    let child = Command::new(env!("CARGO_BIN_EXE_rearrange"))
        .args(["serve", "--listen", &addr.to_string(), "--store-dir"])
        .arg(store)
        .spawn()
        .map_err(|e| e.to_string())?;
    let server = Server(child);
    let base = format!("http://{addr}");
    let deadline = Instant::now() + Duration::from_secs(20);
    while reqwest::blocking::get(format!("{base}/config")).is_err() {
        ensure!(Instant::now() < deadline, "service did not come up on {addr}");
        std::thread::sleep(Duration::from_millis(50));
    }
    Ok((server, base))
}

fn durability() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut ids = Vec::new();
    for (i, scene) in ["scene1", "scene2", "scene3", "scene1", "scene2"].iter().enumerate() {
        ids.push(rearrange(dir.path(), &["store", "add", "--scene", scene, "--instruction", &format!("arrangement number {i}")])?.trim().to_string());
    }
    let files = snapshot(dir.path())?;
    ensure!(files.iter().any(|(n, _)| n == MANIFEST), "no manifest");
    ensure!(files.len() == 16, "{} files on disk", files.len());
    let exported: Vec<Experience> = serde_json::from_str(&rearrange(dir.path(), &["store", "export"])?).map_err(|e| e.to_string())?;
    let loaded = Store::load(dir.path()).map_err(|e| e.to_string())?;
    ensure!(loaded.list() == exported, "export and reload disagree");
    ensure!(exported[10..].iter().map(|e| e.id.clone()).collect::<Vec<_>>() == ids, "added ids out of order");
    for e in &exported[10..] {
        let on_disk = std::fs::read(dir.path().join(format!("{}.{EXTENSION}", e.id))).map_err(|e| e.to_string())?;
        ensure!(on_disk == e.to_bytes(), "{} does not round-trip", e.id);
    }
    ensure!(snapshot(dir.path())? == files, "reading the store changed it");

    let sdir = tempfile::tempdir().unwrap();
    let client = reqwest::blocking::Client::new();
    let before: Value = {
        let (_server, base) = start_server(sdir.path())?;
        let resp = client
            .post(format!("{base}/experience/accept"))
            .json(&json!({"instruction": "kept across restarts"}))
            .send()
            .map_err(|e| e.to_string())?;
        ensure!(resp.status().is_success(), "accept returned {}", resp.status());
        client.get(format!("{base}/experiences")).send().and_then(|r| r.json()).map_err(|e| e.to_string())?
    };
    let (_server, base) = start_server(sdir.path())?;
    let after: Value = client.get(format!("{base}/experiences")).send().and_then(|r| r.json()).map_err(|e| e.to_string())?;
    ensure!(before.as_array().map(Vec::len) == Some(11), "service list has {before}");
    ensure!(before == after, "service restart changed the store");
    Ok("5 experiences added by separate processes reload identically, service restart keeps the store".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("geometry oracle equivalence", geometry),
        ("grounding argmax equivalence", grounding),
        ("retrieval contract", retrieval),
        ("oracle pipeline end to end", pipeline),
        ("baseline contracts", baselines),
        ("rotation repair", rotation_repair),
        ("relation predicate battery", predicates),
        ("ablation plumbing", ablation),
        ("durability", durability),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
