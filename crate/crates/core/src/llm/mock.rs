use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, ChatBackend, GenerationRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    pub response: String,
}

/// Canned responses for the scripted backend.
///
/// The plain form is an array of `{"response": ...}` objects. The keyed form
/// `{"default": [...], "sessions": {"<key>": [...]}}` lets a benchmark give
/// each prompt its own script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockScript {
    Plain(Vec<ScriptedTurn>),
    Keyed {
        #[serde(default)]
        default: Vec<ScriptedTurn>,
        #[serde(default)]
        sessions: BTreeMap<String, Vec<ScriptedTurn>>,
    },
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript::Plain(Vec::new())
    }
}

impl MockScript {
    pub fn plain<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        MockScript::Plain(turns(responses))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidBackend(format!("cannot read mock script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::InvalidBackend(format!("invalid mock script {}: {e}", path.display())))
    }

    pub fn responses_for(&self, key: Option<&str>) -> &[ScriptedTurn] {
        match self {
            MockScript::Plain(t) => t,
            MockScript::Keyed { default, sessions } => key.and_then(|k| sessions.get(k)).unwrap_or(default),
        }
    }
}

pub fn turns<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Vec<ScriptedTurn> {
    responses
        .into_iter()
        .map(|r| ScriptedTurn { response: r.into() })
        .collect()
}

/// Replays a script, one response per call.
#[derive(Debug, Clone)]
pub struct ScriptedMock {
    script: Vec<ScriptedTurn>,
    cursor: usize,
    descriptor: BackendDescriptor,
    seen: Vec<GenerationRequest>,
}

impl ScriptedMock {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::with_descriptor(turns(responses), BackendDescriptor::mock())
    }

    pub fn with_descriptor(script: Vec<ScriptedTurn>, descriptor: BackendDescriptor) -> Self {
        Self {
            script,
            cursor: 0,
            descriptor,
            seen: Vec::new(),
        }
    }

    /// Requests received so far.
    pub fn requests(&self) -> &[GenerationRequest] {
        &self.seen
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - self.cursor
    }
}

impl ChatBackend for ScriptedMock {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&mut self, req: &GenerationRequest) -> Result<String, LlmError> {
        let turn = self
            .script
            .get(self.cursor)
            .ok_or(LlmError::ScriptExhausted { consumed: self.cursor })?;
        self.cursor += 1;
        self.seen.push(req.clone());
        Ok(turn.response.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_script_shapes_parse() {
        let plain: MockScript = serde_json::from_str(r#"[{"response":"a"},{"response":"b"}]"#).unwrap();
        assert_eq!(plain.responses_for(Some("x")).len(), 2);
        let keyed: MockScript =
            serde_json::from_str(r#"{"default":[{"response":"d"}],"sessions":{"p1":[{"response":"a"},{"response":"b"}]}}"#)
                .unwrap();
        assert_eq!(keyed.responses_for(Some("p1")).len(), 2);
        assert_eq!(keyed.responses_for(Some("p2"))[0].response, "d");
        assert_eq!(keyed.responses_for(None)[0].response, "d");
    }

    #[test]
    fn cursor_is_per_instance() {
        let script = MockScript::plain(["one", "two"]);
        let mut a = ScriptedMock::with_descriptor(script.responses_for(None).to_vec(), BackendDescriptor::mock());
        let mut b = a.clone();
        let req = GenerationRequest::new(vec![], 0.0, "m");
        assert_eq!(a.complete(&req).unwrap(), "one");
        assert_eq!(a.complete(&req).unwrap(), "two");
        assert_eq!(b.complete(&req).unwrap(), "one");
        assert_eq!(a.remaining(), 0);
        assert_eq!(a.requests().len(), 2);
    }
}
