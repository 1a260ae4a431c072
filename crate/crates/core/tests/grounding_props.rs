mod common;

use common::cases::{brute_argmax, random_vector};

use indexmap::IndexMap;
use proptest::prelude::*;
use rand::Rng;
use rearrange_core::evaluation::fixture_scene;
use rearrange_core::grounding::{
    assign_categories, extract_relevant_objects, ground_scene, EmbeddingVector, ScriptedEmbedder, OTHERS,
};
use rearrange_core::llm_client::{ChatBackend, ChatRequest, LlmError, ScriptedBackend};

#[test]
fn assignment_matches_brute_force_argmax() {
    let mut r = common::rng(21);
    for _ in 0..100 {
        let dim = r.random_range(2..16);
        let cats: Vec<Vec<f64>> = (0..4).map(|_| random_vector(&mut r, dim)).collect();
        let objs: Vec<Vec<f64>> = (0..5).map(|_| random_vector(&mut r, dim)).collect();
        let cat_map: IndexMap<String, EmbeddingVector> =
            cats.iter().enumerate().map(|(i, v)| (format!("c{i}"), EmbeddingVector::new(v.clone()).unwrap())).collect();
        let obj_map: IndexMap<String, EmbeddingVector> =
            objs.iter().enumerate().map(|(i, v)| (format!("o{i}"), EmbeddingVector::new(v.clone()).unwrap())).collect();
        let got = assign_categories(&obj_map, &cat_map).unwrap();
        for (i, o) in objs.iter().enumerate() {
            assert_eq!(got[&format!("o{i}")], format!("c{}", brute_argmax(o, &cats)));
        }

        // positive rescaling of either side leaves the assignment unchanged
        let k: Vec<f64> = (0..9).map(|_| 10f64.powf(r.random_range(-2.0..2.0))).collect();
        let scaled_cats = cat_map.iter().zip(&k).map(|((id, v), &s)| (id.clone(), v.scaled(s))).collect();
        let scaled_objs = obj_map.iter().zip(&k[4..]).map(|((id, v), &s)| (id.clone(), v.scaled(s))).collect();
        assert_eq!(assign_categories(&scaled_objs, &scaled_cats).unwrap(), got);
    }
}

#[test]
fn fixtures_ground_to_their_categories() {
    let embedder = ScriptedEmbedder::new(64, 0.05);
    let llm = ScriptedBackend::new();
    let scene = fixture_scene("scene3").unwrap();
    let cats = extract_relevant_objects("put the carrot to the left of the potato", &llm).unwrap();
    assert_eq!(cats, ["carrot", "potato", OTHERS]);
    let g = ground_scene(&scene, &cats, &embedder).unwrap();
    assert_eq!(g.relevant_ids, ["carrot", "potato"]);
    assert_eq!(g.assignments["pineapple"], OTHERS);
    assert_eq!(g.assignments["plate"], OTHERS);
}

struct Fixed(String);

impl ChatBackend for Fixed {
    fn complete(&self, _: &ChatRequest) -> Result<String, LlmError> {
        Ok(self.0.clone())
    }
}

proptest! {
    #[test]
    fn extraction_appends_others_once(names in prop::collection::vec("[a-zA-Z]{1,8}|others|OTHERS", 0..8)) {
        let reply = serde_json::to_string(&names).unwrap();
        let got = extract_relevant_objects("move it", &Fixed(reply)).unwrap();
        prop_assert_eq!(got.last().map(String::as_str), Some(OTHERS));
        prop_assert_eq!(got.iter().filter(|c| *c == OTHERS).count(), 1);
        let mut seen = std::collections::HashSet::new();
        prop_assert!(got.iter().all(|c| seen.insert(c.clone())));
        prop_assert!(got.iter().all(|c| *c == c.to_lowercase()));
    }

    #[test]
    fn cosine_is_scale_invariant(seed in any::<u64>(), k in 0.001..1000.0f64) {
        let mut r = common::rng(seed);
        let u = EmbeddingVector::new(random_vector(&mut r, 8)).unwrap();
        let v = EmbeddingVector::new(random_vector(&mut r, 8)).unwrap();
        let a = rearrange_core::grounding::cosine_similarity(&u, &v).unwrap();
        let b = rearrange_core::grounding::cosine_similarity(&u.scaled(k), &v).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }
}
