//! Rule-based grammar for rearrangement instructions:
//! `verb subject(s) relation-phrase anchor`, with `then` separating
//! sequential steps and `and the other ...` distributing over identical
//! objects.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_client::lexicon_entry;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    On,
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    Beside,
    FarFrom,
    Together,
}

impl RelationKind {
    pub const ALL: [RelationKind; 8] = [
        RelationKind::On,
        RelationKind::LeftOf,
        RelationKind::RightOf,
        RelationKind::InFrontOf,
        RelationKind::Behind,
        RelationKind::Beside,
        RelationKind::FarFrom,
        RelationKind::Together,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::On => "on",
            RelationKind::LeftOf => "left_of",
            RelationKind::RightOf => "right_of",
            RelationKind::InFrontOf => "in_front_of",
            RelationKind::Behind => "behind",
            RelationKind::Beside => "beside",
            RelationKind::FarFrom => "far_from",
            RelationKind::Together => "together",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub kind: RelationKind,
    pub subject_ids: Vec<String>,
    pub anchor_ids: Vec<String>,
    pub step_index: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrammarError {
    #[error("no spatial relation recognized in {0:?}")]
    UnrecognizedRelation(String),
    #[error("no object in the scene matches {0:?}")]
    UnknownObject(String),
    #[error("relation in {0:?} needs an anchor object")]
    MissingAnchor(String),
    #[error("object {0:?} cannot be related to itself")]
    SelfRelation(String),
    #[error("empty instruction")]
    Empty,
}

struct Phrase {
    text: &'static str,
    kind: RelationKind,
    /// The anchor may be omitted and inherited from a sibling clause.
    open: bool,
}

const fn phrase(text: &'static str, kind: RelationKind) -> Phrase {
    Phrase { text, kind, open: false }
}

const fn open_phrase(text: &'static str, kind: RelationKind) -> Phrase {
    Phrase { text, kind, open: true }
}

static PHRASES: &[Phrase] = &[
    phrase("on the right side of", RelationKind::RightOf),
    phrase("on the right of", RelationKind::RightOf),
    phrase("to the right of", RelationKind::RightOf),
    phrase("right of", RelationKind::RightOf),
    open_phrase("on the right", RelationKind::RightOf),
    open_phrase("to the right", RelationKind::RightOf),
    phrase("on the left side of", RelationKind::LeftOf),
    phrase("on the left of", RelationKind::LeftOf),
    phrase("to the left of", RelationKind::LeftOf),
    phrase("left of", RelationKind::LeftOf),
    open_phrase("on the left", RelationKind::LeftOf),
    open_phrase("to the left", RelationKind::LeftOf),
    phrase("in front of", RelationKind::InFrontOf),
    phrase("behind", RelationKind::Behind),
    phrase("in back of", RelationKind::Behind),
    phrase("far away from", RelationKind::FarFrom),
    phrase("far from", RelationKind::FarFrom),
    phrase("away from", RelationKind::FarFrom),
    phrase("next to", RelationKind::Beside),
    phrase("beside", RelationKind::Beside),
    phrase("close to", RelationKind::Beside),
    phrase("near", RelationKind::Beside),
    phrase("on top of", RelationKind::On),
    phrase("onto", RelationKind::On),
    phrase("on", RelationKind::On),
    phrase("into", RelationKind::On),
    phrase("inside", RelationKind::On),
    phrase("in", RelationKind::On),
    phrase("together", RelationKind::Together),
];

const VERBS: &[&str] = &["put", "place", "move", "set", "stack", "bring", "arrange", "position", "leave", "lay"];
const DETERMINERS: &[&str] = &["the", "a", "an", "one", "both", "all", "two", "three", "some"];

static STEP_SPLIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\s*,?\s+(?:and\s+)?then\s+").expect("valid regex"));
static DISTRIBUTIVE_SPLIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\s*,?\s+and\s+(the other|the second|another)\b").expect("valid regex"));

fn is_word_boundary(text: &str, idx: usize) -> bool {
    text[..idx].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
}

/// Earliest relation phrase in `text` (longest match at that position).
/// Returns (start, end, phrase).
fn find_phrase(text: &str) -> Option<(usize, usize, &'static Phrase)> {
    let lower = text.to_ascii_lowercase();
    let mut best: Option<(usize, usize, &'static Phrase)> = None;
    for p in PHRASES {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(p.text).map(|i| i + from) {
            let end = pos + p.text.len();
            let after_ok = lower[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
            if is_word_boundary(&lower, pos) && after_ok {
                let better = match best {
                    None => true,
                    Some((bs, be, _)) => pos < bs || (pos == bs && end > be),
                };
                if better {
                    best = Some((pos, end, p));
                }
                break;
            }
            from = pos + 1;
        }
    }
    best
}

fn starts_with_verb(clause: &str) -> bool {
    clause
        .split_whitespace()
        .next()
        .is_some_and(|w| VERBS.contains(&w.to_lowercase().as_str()))
}

fn clean(instruction: &str) -> String {
    instruction
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(|c: char| c == '.' || c == '!' || c == '"' || c.is_whitespace())
        .to_string()
}

/// Splits a sequential instruction into single-relation steps and
/// re-attaches the verb and subject to continuations that lack them.
pub fn split_steps(instruction: &str) -> Vec<String> {
    let text = clean(instruction);
    if text.is_empty() {
        return Vec::new();
    }
    let mut steps: Vec<String> = Vec::new();
    let mut lead = String::new();
    for clause in STEP_SPLIT.split(&text) {
        let clause = clause.trim().trim_end_matches(',').trim();
        if clause.is_empty() {
            continue;
        }
        let step = if steps.is_empty() || starts_with_verb(clause) || lead.is_empty() {
            clause.to_string()
        } else {
            format!("{lead} {clause}")
        };
        if let Some((start, _, _)) = find_phrase(&step) {
            lead = step[..start].trim().to_string();
        }
        steps.push(step);
    }
    steps
}

fn singular_matches(word: &str, category: &str) -> bool {
    let (word, category) = (word.to_lowercase(), category.to_lowercase());
    word == category
        || word.strip_suffix('s') == Some(category.as_str())
        || word.strip_suffix("es") == Some(category.as_str())
        || lexicon_entry(&word).is_some_and(|e| e == category)
}

#[derive(Debug)]
struct NounPhrase {
    category: Option<String>,
    plural: bool,
    other: bool,
    text: String,
}

fn noun_phrase(text: &str, scene: &Scene) -> NounPhrase {
    let mut words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    if words.first().is_some_and(|w| VERBS.contains(&w.as_str())) {
        words.remove(0);
    }
    let other = words.iter().any(|w| w == "other" || w == "another" || w == "second");
    let quantifier = words.iter().any(|w| matches!(w.as_str(), "both" | "all" | "two" | "three"));
    let mut category = None;
    let mut plural = false;
    for w in words.iter().rev() {
        if DETERMINERS.contains(&w.as_str()) || w == "other" {
            continue;
        }
        if let Some(obj) = scene.objects.iter().find(|o| singular_matches(w, &o.category)) {
            plural = w.to_lowercase() != obj.category.to_lowercase();
            category = Some(obj.category.to_lowercase());
            break;
        }
    }
    NounPhrase { category, plural: plural || quantifier, other, text: text.trim().to_string() }
}

fn ids_of(scene: &Scene, category: &str) -> Vec<String> {
    scene
        .objects
        .iter()
        .filter(|o| o.category.to_lowercase() == category)
        .map(|o| o.id.clone())
        .collect()
}

struct Clause {
    kind: RelationKind,
    subjects: Vec<String>,
    anchors: Vec<String>,
    subject_category: Option<String>,
}

fn parse_clause(
    clause: &str,
    scene: &Scene,
    used: &mut Vec<String>,
    inherited: Option<&Clause>,
) -> Result<Clause, GrammarError> {
    let (start, end, p) =
        find_phrase(clause).ok_or_else(|| GrammarError::UnrecognizedRelation(clause.to_string()))?;
    let subject_text = &clause[..start];
    let anchor_text = clause[end..].trim();

    let mut subjects = Vec::new();
    let mut subject_category = None;
    for part in subject_text.split(" and ").filter(|s| !s.trim().is_empty()) {
        let np = noun_phrase(part, scene);
        let category = match (&np.category, inherited) {
            (Some(c), _) => c.clone(),
            (None, Some(prev)) if np.other => prev
                .subject_category
                .clone()
                .ok_or_else(|| GrammarError::UnknownObject(np.text.clone()))?,
            _ => return Err(GrammarError::UnknownObject(np.text.clone())),
        };
        let candidates = ids_of(scene, &category);
        if np.plural {
            subjects.extend(candidates);
        } else {
            let pick = candidates
                .iter()
                .find(|id| !used.contains(id) && !subjects.contains(*id))
                .or_else(|| candidates.first())
                .cloned()
                .ok_or_else(|| GrammarError::UnknownObject(np.text.clone()))?;
            subjects.push(pick);
        }
        subject_category = Some(category);
    }
    if subjects.is_empty() {
        return Err(GrammarError::UnknownObject(subject_text.trim().to_string()));
    }
    used.extend(subjects.iter().cloned());

    let anchors = if p.kind == RelationKind::Together {
        Vec::new()
    } else if anchor_text.is_empty() {
        match inherited {
            Some(prev) if p.open || !prev.anchors.is_empty() => prev.anchors.clone(),
            _ => return Err(GrammarError::MissingAnchor(clause.to_string())),
        }
    } else {
        let np = noun_phrase(anchor_text, scene);
        let category = np.category.ok_or_else(|| GrammarError::UnknownObject(np.text.clone()))?;
        let ids = ids_of(scene, &category);
        let pick = ids
            .iter()
            .find(|id| !subjects.contains(*id))
            .cloned()
            .ok_or_else(|| GrammarError::SelfRelation(anchor_text.to_string()))?;
        vec![pick]
    };
    if let Some(id) = anchors.iter().find(|a| subjects.contains(*a)) {
        return Err(GrammarError::SelfRelation(id.clone()));
    }
    Ok(Clause { kind: p.kind, subjects, anchors, subject_category })
}

/// Parses an instruction into relation specs bound to scene object ids.
pub fn parse_relation(instruction: &str, scene: &Scene) -> Result<Vec<RelationSpec>, GrammarError> {
    let steps = split_steps(instruction);
    if steps.is_empty() {
        return Err(GrammarError::Empty);
    }
    let mut out = Vec::new();
    for (step_index, step) in steps.iter().enumerate() {
        let mut used = Vec::new();
        let mut pieces: Vec<String> = Vec::new();
        let mut last = 0;
        for m in DISTRIBUTIVE_SPLIT.captures_iter(step) {
            let whole = m.get(0).expect("match");
            let word = m.get(1).expect("group");
            pieces.push(step[last..whole.start()].to_string());
            last = word.start();
        }
        pieces.push(step[last..].to_string());

        let mut previous: Option<Clause> = None;
        for piece in &pieces {
            let clause = parse_clause(piece, scene, &mut used, previous.as_ref())?;
            out.push(RelationSpec {
                kind: clause.kind,
                subject_ids: clause.subjects.clone(),
                anchor_ids: clause.anchors.clone(),
                step_index,
            });
            previous = Some(clause);
        }
    }
    Ok(out)
}
