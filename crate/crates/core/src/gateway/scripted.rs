use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    count_prompt_tokens, count_text_tokens, Backend, GatewayError, GenerationRequest,
    GenerationResponse,
};

pub const SCRIPT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub fingerprint: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Recorded transcript: request fingerprint to canned response. Entries are
/// kept sorted by fingerprint so saved files are stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    entries: BTreeMap<String, ScriptEntry>,
}

#[derive(Serialize, Deserialize)]
struct ScriptFile {
    format_version: u32,
    entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fingerprint: String, response: String, note: Option<String>) {
        self.entries.insert(
            fingerprint.clone(),
            ScriptEntry {
                fingerprint,
                response,
                note,
            },
        );
    }

    pub fn get(&self, fingerprint: &str) -> Option<&ScriptEntry> {
        self.entries.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ScriptEntry> {
        self.entries.values()
    }

    pub fn to_json(&self) -> String {
        let file = ScriptFile {
            format_version: SCRIPT_FORMAT_VERSION,
            entries: self.entries.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("script serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: ScriptFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.format_version != SCRIPT_FORMAT_VERSION {
            return Err(format!(
                "unsupported script format_version {}",
                file.format_version
            ));
        }
        let mut script = Script::new();
        for e in file.entries {
            if script.entries.contains_key(&e.fingerprint) {
                return Err(format!("duplicate fingerprint {}", e.fingerprint));
            }
            script.entries.insert(e.fingerprint.clone(), e);
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let err = |message: String| GatewayError::Script {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(err)
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        std::fs::write(path, self.to_json()).map_err(|e| GatewayError::Script {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Replays recorded responses. Pure lookup; no locking.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self { script }
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let fp = request.fingerprint();
        let entry = self
            .script
            .get(&fp)
            .ok_or(GatewayError::MissingScript(fp))?;
        Ok(GenerationResponse {
            text: entry.response.clone(),
            prompt_tokens: count_prompt_tokens(request),
            completion_tokens: count_text_tokens(&entry.response),
            backend_id: self.id().to_string(),
            truncated: false,
        })
    }
}

/// Wraps another backend and records every successful exchange into a
/// [`Script`] that a [`ScriptedBackend`] can replay.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    recorded: Mutex<Script>,
    note: Mutex<Option<String>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Script::new()),
            note: Mutex::new(None),
        }
    }

    /// Note attached to subsequently recorded entries.
    pub fn set_note(&self, note: Option<String>) {
        *self.note.lock().unwrap_or_else(|p| p.into_inner()) = note;
    }

    pub fn script(&self) -> Script {
        self.recorded
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }
}

impl Backend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let response = self.inner.generate(request)?;
        let note = self.note.lock().unwrap_or_else(|p| p.into_inner()).clone();
        self.recorded
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(request.fingerprint(), response.text.clone(), note);
        Ok(response)
    }
}
