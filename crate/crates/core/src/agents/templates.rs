use std::fs;
use std::path::Path;

use super::AgentError;

/// Prompt templates, one text file per agent plus a shared language guide.
///
/// `{{name}}` placeholders are filled at render time; every placeholder
/// must be supplied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub abstraction: String,
    pub generate: String,
    pub debug: String,
    pub decompose: String,
    pub generalize: String,
    pub language: String,
}

pub const TEMPLATE_FILES: [&str; 6] =
    ["abstract.txt", "generate.txt", "debug.txt", "decompose.txt", "generalize.txt", "language.txt"];

impl Templates {
    pub fn bundled() -> Self {
        Self {
            abstraction: include_str!("../../templates/abstract.txt").into(),
            generate: include_str!("../../templates/generate.txt").into(),
            debug: include_str!("../../templates/debug.txt").into(),
            decompose: include_str!("../../templates/decompose.txt").into(),
            generalize: include_str!("../../templates/generalize.txt").into(),
            language: include_str!("../../templates/language.txt").into(),
        }
    }

    /// Reads a template directory; files that are absent fall back to the
    /// bundled text.
    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        let mut t = Self::bundled();
        let slots: [&mut String; 6] =
            [&mut t.abstraction, &mut t.generate, &mut t.debug, &mut t.decompose, &mut t.generalize, &mut t.language];
        for (file, slot) in TEMPLATE_FILES.iter().zip(slots) {
            let path = dir.join(file);
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|e| AgentError::Template(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(t)
    }
}

/// Fills `{{key}}` placeholders. Unknown or unfilled placeholders are errors.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, AgentError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| AgentError::Template("unclosed `{{`".into()))?;
        let key = after[..end].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| AgentError::Template(format!("no value for placeholder `{key}`")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
