use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmError, PlacementRecord, RequestTag};
use crate::evaluation::split_steps;
use crate::scene::Scene;

/// Object nouns the scripted extractor recognizes.
pub const LEXICON: &[&str] = &[
    "apple", "banana", "orange", "lemon", "pear", "peach", "grape", "strawberry", "tomato", "potato",
    "carrot", "eggplant", "pineapple", "cucumber", "onion", "pepper", "broccoli", "corn", "bread",
    "plate", "bowl", "cup", "mug", "glass", "bottle", "can", "knife", "fork", "spoon", "pan", "pot",
    "sponge", "cube", "block", "box", "basket", "tray", "napkin",
];

/// Lexicon entry for a word, accepting regular and a few irregular plurals.
pub(crate) fn lexicon_entry(word: &str) -> Option<&'static str> {
    let word = word.to_lowercase();
    LEXICON.iter().copied().find(|&noun| {
        word == noun
            || word.strip_suffix('s') == Some(noun)
            || word.strip_suffix("es") == Some(noun)
            || (noun.ends_with('y') && word == format!("{}ies", &noun[..noun.len() - 1]))
            || (noun.ends_with("fe") && word == format!("{}ves", &noun[..noun.len() - 2]))
    })
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// `round(100 * |A ∩ B| / |A ∪ B|)` over lowercase word sets, halves
/// rounded up. Two empty instructions score 100.
pub fn jaccard_score(a: &str, b: &str) -> u8 {
    let sa: BTreeSet<String> = words(a).collect();
    let sb: BTreeSet<String> = words(b).collect();
    let union = sa.union(&sb).count() as u64;
    if union == 0 {
        return 100;
    }
    let inter = sa.intersection(&sb).count() as u64;
    ((200 * inter + union) / (2 * union)) as u8
}

/// One entry of a canned-reply file: fires when the request has `tag` and
/// its concatenated content contains every string in `contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedRule {
    pub tag: RequestTag,
    #[serde(default)]
    pub contains: Vec<String>,
    pub reply: String,
}

/// Deterministic rule-based stand-in for a language model.
///
/// Lookup order: exact request fingerprints, canned rules top-down, then the
/// built-in rule for the request's tag.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    fingerprints: HashMap<u64, String>,
    rules: Vec<CannedRule>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rules(mut self, rules: Vec<CannedRule>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn with_fingerprint_reply(mut self, fingerprint: u64, reply: impl Into<String>) -> Self {
        self.fingerprints.insert(fingerprint, reply.into());
        self
    }

    pub fn load_rules(path: &Path) -> Result<Vec<CannedRule>, LlmError> {
        let bytes = std::fs::read(path)
            .map_err(|e| LlmError::InvalidRequest(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| LlmError::InvalidRequest(format!("{}: {e}", path.display())))
    }

    fn canned(&self, request: &ChatRequest) -> Option<String> {
        if let Some(reply) = self.fingerprints.get(&request.fingerprint()) {
            return Some(reply.clone());
        }
        let content = request.joined_content();
        self.rules
            .iter()
            .find(|r| r.tag == request.tag && r.contains.iter().all(|s| content.contains(s.as_str())))
            .map(|r| r.reply.clone())
    }

    /// Built-in answer for a request, ignoring canned replies.
    pub(crate) fn rule_reply(request: &ChatRequest) -> Result<String, LlmError> {
        let data = request.data().ok_or(LlmError::NoRule(request.tag))?;
        let text = |key: &str| {
            data.get(key)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| LlmError::InvalidRequest(format!("data field {key:?} missing")))
        };
        match request.tag {
            RequestTag::ObjectExtraction => {
                let instruction = text("instruction")?;
                let mut found: Vec<&str> = Vec::new();
                for w in words(&instruction) {
                    if let Some(noun) = lexicon_entry(&w) {
                        if !found.contains(&noun) {
                            found.push(noun);
                        }
                    }
                }
                found.push("others");
                Ok(json!(found).to_string())
            }
            RequestTag::Similarity => {
                let score = jaccard_score(&text("new_instruction")?, &text("past_instruction")?);
                Ok(score.to_string())
            }
            RequestTag::StepPlanning => Ok(json!(split_steps(&text("instruction")?)).to_string()),
            RequestTag::Placement => {
                // No spatial reasoning here: every relevant object stays put.
                let scene: Scene = serde_json::from_value(data.get("scene").cloned().unwrap_or(Value::Null))
                    .map_err(|e| LlmError::InvalidRequest(format!("data field \"scene\": {e}")))?;
                let relevant: Vec<String> = data
                    .get("relevant")
                    .and_then(|v| serde_json::from_value(v.clone()).ok())
                    .unwrap_or_default();
                let records: Vec<Value> = scene
                    .objects
                    .iter()
                    .filter(|o| relevant.contains(&o.id) && o.movable)
                    .map(|o| {
                        let r = PlacementRecord {
                            id: Some(o.id.clone()),
                            x: o.bbox.cx,
                            y: o.bbox.cy,
                            rotation: None,
                            stacked_on: o.stacked_on.clone(),
                        };
                        serde_json::to_value(r).expect("record serializes")
                    })
                    .collect();
                Ok(Value::Array(records).to_string())
            }
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        match self.canned(request) {
            Some(reply) => Ok(reply),
            None => Self::rule_reply(request),
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_client::{data_line, ChatMessage};

    fn request(tag: RequestTag, data: Value) -> ChatRequest {
        ChatRequest::new(tag, vec![ChatMessage::user(format!("prompt\n{}", data_line(&data)))])
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_score("put the apple on a plate", "put the apple on a plate"), 100);
        // {the} / {put,the,apple,on,a,plate,stack,red,cube}
        assert_eq!(jaccard_score("put the apple on a plate", "stack the red cube"), 11);
        // {an,a} / {place,an,apple,on,a,plate,put,orange,in,bowl}
        assert_eq!(jaccard_score("place an apple on a plate", "put an orange in a bowl"), 20);
        assert_eq!(jaccard_score("Put THE apple.", "put the apple"), 100);
        // 1/8 = 12.5 rounds up
        assert_eq!(jaccard_score("a b c d e", "a f g h"), 13);
    }

    #[test]
    fn similarity_rule() {
        let b = ScriptedBackend::new();
        let r = request(RequestTag::Similarity, json!({"new_instruction": "put the cup on the plate", "past_instruction": "put the cup on the plate"}));
        assert_eq!(b.complete(&r).unwrap(), "100");
    }

    #[test]
    fn extraction_rule_uses_lexicon_and_singularizes() {
        let b = ScriptedBackend::new();
        let r = request(RequestTag::ObjectExtraction, json!({"instruction": "put the potatoes next to the Plate"}));
        assert_eq!(b.complete(&r).unwrap(), r#"["potato","plate","others"]"#);
        assert_eq!(lexicon_entry("knives"), Some("knife"));
        assert_eq!(lexicon_entry("strawberries"), Some("strawberry"));
        assert_eq!(lexicon_entry("tomatoes"), Some("tomato"));
        assert_eq!(lexicon_entry("the"), None);
    }

    #[test]
    fn canned_replies_take_precedence() {
        let r = request(RequestTag::Similarity, json!({"new_instruction": "a", "past_instruction": "b"}));
        let b = ScriptedBackend::new()
            .with_rules(vec![CannedRule { tag: RequestTag::Similarity, contains: vec!["\"a\"".into()], reply: "42".into() }]);
        assert_eq!(b.complete(&r).unwrap(), "42");
        let b = b.with_fingerprint_reply(r.fingerprint(), "Score: 7");
        assert_eq!(b.complete(&r).unwrap(), "Score: 7");
        // rules are tag-scoped
        let other = request(RequestTag::StepPlanning, json!({"instruction": "\"a\""}));
        assert_ne!(b.complete(&other).unwrap(), "42");
    }

    #[test]
    fn byte_identical_output() {
        let b = ScriptedBackend::new();
        let r = request(RequestTag::StepPlanning, json!({"instruction": "put the eggplant on the plate, then beside the plate"}));
        let first = b.complete(&r).unwrap();
        assert_eq!(first, b.complete(&r.clone()).unwrap());
        assert_eq!(first, r#"["put the eggplant on the plate","put the eggplant beside the plate"]"#);
    }

    #[test]
    fn missing_trailer_has_no_rule() {
        let b = ScriptedBackend::new();
        let r = ChatRequest::new(RequestTag::Placement, vec![ChatMessage::user("free text")]);
        assert_eq!(b.complete(&r).unwrap_err(), LlmError::NoRule(RequestTag::Placement));
    }
}
