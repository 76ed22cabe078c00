//! Prompt templates with `{{slot}}` placeholders and optional few-shot
//! demonstration files.
//!
//! Built-in Chinese prompts for explanation and judging ship with the crate;
//! a prompts directory can override any of them by name (`<name>.tmpl`,
//! `<name>.demos.jsonl`). The `{{schema}}` slot is bound once at registry
//! construction with the error-type listing; all other slots bind at render
//! time and every one of them must be supplied.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{sha256_hex, Demonstration, LlmError};

const EXPLAIN: &str = include_str!("../../prompts/explain.tmpl");
const EXPLAIN_GOLD: &str = include_str!("../../prompts/explain_gold.tmpl");
const EXPLAIN_SYSTEM: &str = include_str!("../../prompts/explain_system.tmpl");
const EVALUATE: &str = include_str!("../../prompts/evaluate.tmpl");
const EVALUATE_EXPL: &str = include_str!("../../prompts/evaluate_expl.tmpl");
const EVALUATE_SYSTEM: &str = include_str!("../../prompts/evaluate_system.tmpl");
const REPAIR: &str = include_str!("../../prompts/repair.tmpl");
const EXPLAIN_DEMOS: &str = include_str!("../../prompts/explain.demos.jsonl");
const EVALUATE_DEMOS: &str = include_str!("../../prompts/evaluate.demos.jsonl");

/// The slot bound at construction instead of render time.
const SCHEMA_SLOT: &str = "schema";

#[derive(Debug, Clone)]
pub struct Template {
    name: String,
    text: String,
    schema_block: String,
    slots: BTreeSet<String>,
    demonstrations: Vec<Demonstration>,
}

impl Template {
    fn compile(name: &str, text: &str, schema_block: &str) -> Result<Self, LlmError> {
        let mut slots = scan_slots(name, text)?;
        slots.remove(SCHEMA_SLOT);
        Ok(Template {
            name: name.to_string(),
            text: text.to_string(),
            schema_block: schema_block.to_string(),
            slots,
            demonstrations: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Render-time slots, sorted; `{{schema}}` is excluded.
    pub fn slots(&self) -> &BTreeSet<String> {
        &self.slots
    }

    pub fn demonstrations(&self) -> &[Demonstration] {
        &self.demonstrations
    }

    /// SHA-256 of the raw template text, for run fingerprints.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.text.as_bytes())
    }

    /// Substitutes every placeholder in one pass. Bound values are emitted
    /// verbatim and never rescanned, so braces inside values are inert.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").expect("validated at compile time");
            let slot = &after[..close];
            if slot == SCHEMA_SLOT {
                out.push_str(&self.schema_block);
            } else {
                let value = bindings
                    .iter()
                    .find(|(name, _)| *name == slot)
                    .map(|(_, value)| *value)
                    .ok_or_else(|| LlmError::Template {
                        name: self.name.clone(),
                        slot: slot.to_string(),
                    })?;
                out.push_str(value);
            }
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn scan_slots(name: &str, text: &str) -> Result<BTreeSet<String>, LlmError> {
    let mut slots = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| {
            LlmError::Config(format!("template {name:?}: unclosed '{{{{' placeholder"))
        })?;
        let slot = &after[..close];
        let valid = !slot.is_empty()
            && slot
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(LlmError::Config(format!(
                "template {name:?}: malformed placeholder {{{{{slot}}}}}"
            )));
        }
        slots.insert(slot.to_string());
        rest = &after[close + 2..];
    }
    Ok(slots)
}

fn parse_demos(name: &str, text: &str) -> Result<Vec<Demonstration>, LlmError> {
    let mut demos = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration = serde_json::from_str(line).map_err(|e| {
            LlmError::Config(format!("demos for {name:?}, line {}: {e}", index + 1))
        })?;
        demos.push(demo);
    }
    Ok(demos)
}

#[derive(Debug)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, Template>,
}

impl TemplateRegistry {
    /// The embedded default prompts with `{{schema}}` bound to
    /// `schema_block`.
    pub fn builtin(schema_block: &str) -> Self {
        let mut registry = TemplateRegistry {
            templates: BTreeMap::new(),
        };
        let sources = [
            ("explain", EXPLAIN, Some(EXPLAIN_DEMOS)),
            ("explain_gold", EXPLAIN_GOLD, Some(EXPLAIN_DEMOS)),
            ("explain_system", EXPLAIN_SYSTEM, None),
            ("evaluate", EVALUATE, Some(EVALUATE_DEMOS)),
            ("evaluate_expl", EVALUATE_EXPL, Some(EVALUATE_DEMOS)),
            ("evaluate_system", EVALUATE_SYSTEM, None),
            ("repair", REPAIR, None),
        ];
        for (name, text, demos) in sources {
            let mut template =
                Template::compile(name, text, schema_block).expect("builtin templates compile");
            if let Some(demos) = demos {
                template.demonstrations =
                    parse_demos(name, demos).expect("builtin demos parse");
            }
            registry.templates.insert(name.to_string(), template);
        }
        registry
    }

    /// Builtin templates with any `<name>.tmpl` / `<name>.demos.jsonl`
    /// found in `dir` layered on top. Files with new names register new
    /// templates.
    pub fn with_overrides(dir: Option<&Path>, schema_block: &str) -> Result<Self, LlmError> {
        let mut registry = Self::builtin(schema_block);
        let Some(dir) = dir else {
            return Ok(registry);
        };
        let entries = std::fs::read_dir(dir)
            .map_err(|e| LlmError::io(format!("reading prompts dir {}", dir.display()), e))?
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LlmError::io(format!("reading prompts dir {}", dir.display()), e))?;

        let mut template_files = Vec::new();
        let mut demo_files = Vec::new();
        for entry in entries {
            let path = entry.path();
            let Some(file_name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(name) = file_name.strip_suffix(".demos.jsonl") {
                demo_files.push((name.to_string(), path));
            } else if let Some(name) = file_name.strip_suffix(".tmpl") {
                template_files.push((name.to_string(), path));
            }
        }

        for (name, path) in template_files {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| LlmError::io(format!("reading template {}", path.display()), e))?;
            let demos = registry
                .templates
                .remove(&name)
                .map(|t| t.demonstrations)
                .unwrap_or_default();
            let mut template = Template::compile(&name, &text, schema_block)?;
            template.demonstrations = demos;
            registry.templates.insert(name, template);
        }
        for (name, path) in demo_files {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| LlmError::io(format!("reading demos {}", path.display()), e))?;
            let demos = parse_demos(&name, &text)?;
            let template = registry.templates.get_mut(&name).ok_or_else(|| {
                LlmError::Config(format!(
                    "demos file {} has no matching template {name:?}",
                    path.display()
                ))
            })?;
            template.demonstrations = demos;
        }
        Ok(registry)
    }

    pub fn get(&self, name: &str) -> Option<&Template> {
        self.templates.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn require(&self, name: &str) -> Result<&Template, LlmError> {
        self.get(name)
            .ok_or_else(|| LlmError::Config(format!("unknown template {name:?}")))
    }

    pub fn render(&self, name: &str, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
        self.require(name)?.render(bindings)
    }
}
