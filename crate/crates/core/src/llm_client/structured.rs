//! Tolerant extraction of machine-readable values from free-form replies.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    Int,
    StringList,
    PlacementRecord,
}

impl Expected {
    fn label(self) -> &'static str {
        match self {
            Expected::Int => "integer",
            Expected::StringList => "string list",
            Expected::PlacementRecord => "placement record",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StructuredValue {
    Int(i64),
    StringList(Vec<String>),
    Placement(PlacementRecord),
}

/// A goal pose as written by a model. `rotation` is in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stacked_on: Option<String>,
}

impl PlacementRecord {
    /// Canonical single-line JSON form.
    pub fn render(&self) -> String {
        serde_json::to_string(self).expect("placement record serialization is infallible")
    }

    fn from_object(obj: &Map<String, Value>) -> Option<Self> {
        let x = number(obj.get("x")?)?;
        let y = number(obj.get("y")?)?;
        let rotation = match obj.get("rotation") {
            None | Some(Value::Null) => None,
            Some(v) => Some(number(v)?),
        };
        let text = |key: &str| obj.get(key).and_then(Value::as_str).map(str::to_string);
        Some(Self {
            id: text("id").or_else(|| text("object_id")).or_else(|| text("object")),
            x,
            y,
            rotation,
            stacked_on: text("stacked_on"),
        })
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|f: &f64| f.is_finite())
}

static NUMBER_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"));

fn unparseable(expected: Expected, text: &str) -> LlmError {
    LlmError::Unparseable { expected: expected.label().to_string(), text: text.to_string() }
}

pub fn parse_structured(text: &str, expected: Expected) -> Result<StructuredValue, LlmError> {
    match expected {
        Expected::Int => parse_int(text).map(StructuredValue::Int),
        Expected::StringList => parse_string_list(text).map(StructuredValue::StringList),
        Expected::PlacementRecord => parse_placement_record(text).map(StructuredValue::Placement),
    }
}

/// First numeric token, rounded to the nearest integer.
pub fn parse_int(text: &str) -> Result<i64, LlmError> {
    let m = NUMBER_TOKEN.find(text).ok_or_else(|| unparseable(Expected::Int, text))?;
    let v: f64 = m.as_str().parse().map_err(|_| unparseable(Expected::Int, text))?;
    Ok(v.round() as i64)
}

/// First bracketed list. JSON string arrays are read as such; otherwise
/// the items are split on commas and stripped of quotes.
pub fn parse_string_list(text: &str) -> Result<Vec<String>, LlmError> {
    let mut from = 0;
    while let Some(open) = text[from..].find('[').map(|i| i + from) {
        let Some(close) = text[open..].find(']').map(|i| i + open) else {
            break;
        };
        let slice = &text[open..=close];
        if let Ok(items) = serde_json::from_str::<Vec<String>>(slice) {
            return Ok(items);
        }
        let inner = &text[open + 1..close];
        if !inner.contains('[') {
            let items: Vec<String> = inner
                .split(',')
                .map(|s| s.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            return Ok(items);
        }
        from = open + 1;
    }
    Err(unparseable(Expected::StringList, text))
}

/// End index (inclusive) of the JSON object opening at `open`.
fn matching_brace(text: &str, open: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Every placement record in reading order. Objects lacking numeric `x`
/// and `y` are skipped, and their contents are searched instead.
pub fn parse_placement_records(text: &str) -> Vec<PlacementRecord> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(open) = text[from..].find('{').map(|i| i + from) {
        let record = matching_brace(text, open).and_then(|close| {
            serde_json::from_str::<Map<String, Value>>(&text[open..=close])
                .ok()
                .and_then(|obj| PlacementRecord::from_object(&obj))
                .map(|r| (r, close))
        });
        match record {
            Some((r, close)) => {
                out.push(r);
                from = close + 1;
            }
            None => from = open + 1,
        }
    }
    out
}

pub fn parse_placement_record(text: &str) -> Result<PlacementRecord, LlmError> {
    parse_placement_records(text)
        .into_iter()
        .next()
        .ok_or_else(|| unparseable(Expected::PlacementRecord, text))
}
