use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Detector,
    Reasoner,
    Verificator,
}

impl PromptRole {
    pub const ALL: [PromptRole; 3] = [
        PromptRole::Detector,
        PromptRole::Reasoner,
        PromptRole::Verificator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptRole::Detector => "detector",
            PromptRole::Reasoner => "reasoner",
            PromptRole::Verificator => "verificator",
        }
    }

    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptRole::Detector => &["code"],
            PromptRole::Reasoner => &["code", "verdict"],
            PromptRole::Verificator => &["code", "reasons", "context"],
        }
    }

    /// Fixed system message sent ahead of every prompt for this role.
    pub fn system_message(self) -> &'static str {
        match self {
            PromptRole::Detector => {
                "You are the Detector in a smart-contract audit workflow. Classify contracts as vulnerable (Y) or non-vulnerable (N)."
            }
            PromptRole::Reasoner => {
                "You are the Reasoner in a smart-contract audit workflow. Explain the reasons that support a given classification."
            }
            PromptRole::Verificator => {
                "You are the Verificator in a smart-contract audit workflow. Check the Reasoner's findings against ERC-20 reference material before the final classification is issued."
            }
        }
    }
}

impl std::str::FromStr for PromptRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detector" => Ok(Self::Detector),
            "reasoner" => Ok(Self::Reasoner),
            "verificator" => Ok(Self::Verificator),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

const PLACEHOLDERS: [&str; 4] = ["code", "context", "reasons", "verdict"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: PromptRole,
    pub template: String,
}

impl PromptTemplate {
    pub fn new(role: PromptRole, template: impl Into<String>) -> Result<Self, PipelineError> {
        let t = Self {
            role,
            template: template.into(),
        };
        for p in role.required_placeholders() {
            if !t.template.contains(&format!("{{{p}}}")) {
                return Err(PipelineError::Template(format!(
                    "{} template is missing placeholder {{{p}}}",
                    role.name()
                )));
            }
        }
        Ok(t)
    }

    /// Single-pass substitution: placeholder text inside substituted values
    /// is left alone.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.template.len() + 256);
        let mut rest = self.template.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = PLACEHOLDERS.iter().find(|p| {
                after.starts_with(**p) && after[p.len()..].starts_with('}')
            });
            match hit {
                Some(p) => {
                    let value = vars.iter().find(|(k, _)| k == p).map_or("", |(_, v)| *v);
                    out.push_str(value);
                    rest = &after[p.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// All prompts the pipeline issues: `m` detector variants plus one reasoner
/// and one verificator template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub detectors: Vec<PromptTemplate>,
    pub reasoner: PromptTemplate,
    pub verificator: PromptTemplate,
}

const BUILTIN_DETECTORS: [&str; 3] = [
    include_str!("../../assets/templates/detector_1_direct.txt"),
    include_str!("../../assets/templates/detector_2_checklist.txt"),
    include_str!("../../assets/templates/detector_3_auditor.txt"),
];
const BUILTIN_REASONER: &str = include_str!("../../assets/templates/reasoner.txt");
const BUILTIN_VERIFICATOR: &str = include_str!("../../assets/templates/verificator.txt");

impl TemplateSet {
    /// The three shipped detector phrasings (direct question, checklist,
    /// role-played auditor) with the default reasoner and verificator.
    pub fn builtin() -> Self {
        Self {
            detectors: BUILTIN_DETECTORS
                .iter()
                .map(|t| PromptTemplate::new(PromptRole::Detector, *t).expect("builtin template"))
                .collect(),
            reasoner: PromptTemplate::new(PromptRole::Reasoner, BUILTIN_REASONER)
                .expect("builtin template"),
            verificator: PromptTemplate::new(PromptRole::Verificator, BUILTIN_VERIFICATOR)
                .expect("builtin template"),
        }
    }

    /// Loads `detector*.txt` (sorted by file name), `reasoner.txt` and
    /// `verificator.txt` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, PipelineError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Template(format!("{}: {e}", p.display())))
        };
        let entries = std::fs::read_dir(dir)
            .map_err(|e| PipelineError::Template(format!("{}: {e}", dir.display())))?;
        let mut detector_files: Vec<_> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.extension().is_some_and(|e| e == "txt")
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("detector"))
            })
            .collect();
        detector_files.sort();
        if detector_files.is_empty() {
            return Err(PipelineError::Template(format!(
                "no detector*.txt templates in {}",
                dir.display()
            )));
        }
        let detectors = detector_files
            .iter()
            .map(|p| PromptTemplate::new(PromptRole::Detector, read(p)?))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            detectors,
            reasoner: PromptTemplate::new(PromptRole::Reasoner, read(&dir.join("reasoner.txt"))?)?,
            verificator: PromptTemplate::new(
                PromptRole::Verificator,
                read(&dir.join("verificator.txt"))?,
            )?,
        })
    }

    /// Keeps the first `m` detector variants.
    pub fn with_detector_count(mut self, m: usize) -> Result<Self, PipelineError> {
        if m == 0 || m > self.detectors.len() {
            return Err(PipelineError::Template(format!(
                "requested {m} detector prompts but {} templates are available",
                self.detectors.len()
            )));
        }
        self.detectors.truncate(m);
        Ok(self)
    }
}
