use serde_json::Value;

use super::{ChatBackend, ChatRequest, LlmError, PlacementRecord, RequestTag, ScriptedBackend};
use crate::evaluation::{parse_relation, solve_relations, PredicateConfig};
use crate::scene::Scene;

/// Answers placement requests by solving the instruction's spatial
/// relations geometrically; other requests use the scripted rules.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    predicates: PredicateConfig,
    fallback: ScriptedBackend,
}

impl OracleBackend {
    pub fn new(predicates: PredicateConfig) -> Self {
        Self { predicates, fallback: ScriptedBackend::new() }
    }

    pub fn with_fallback(mut self, fallback: ScriptedBackend) -> Self {
        self.fallback = fallback;
        self
    }

    fn place(&self, data: &Value) -> Result<String, LlmError> {
        let instruction = data
            .get("instruction")
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::InvalidRequest("data field \"instruction\" missing".into()))?;
        let scene: Scene = serde_json::from_value(data.get("scene").cloned().unwrap_or(Value::Null))
            .map_err(|e| LlmError::InvalidRequest(format!("data field \"scene\": {e}")))?;
        let specs = parse_relation(instruction, &scene).map_err(|e| LlmError::Oracle(e.to_string()))?;
        let (placements, _) =
            solve_relations(&scene, &specs, &self.predicates).map_err(|e| LlmError::Oracle(e.to_string()))?;
        let records: Vec<PlacementRecord> = placements
            .into_iter()
            .map(|p| {
                let current = scene.object(&p.object_id).map(|o| o.rotation());
                PlacementRecord {
                    rotation: (current != Some(p.rotation)).then(|| p.rotation.to_degrees()),
                    id: Some(p.object_id),
                    x: p.x,
                    y: p.y,
                    stacked_on: p.stacked_on,
                }
            })
            .collect();
        Ok(serde_json::to_string(&records).expect("records serialize"))
    }
}

impl ChatBackend for OracleBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        if request.tag != RequestTag::Placement {
            return self.fallback.complete(request);
        }
        let data = request.data().ok_or(LlmError::NoRule(request.tag))?;
        self.place(&data)
    }

    fn name(&self) -> &str {
        "oracle"
    }
}
