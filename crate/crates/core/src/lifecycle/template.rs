//! Pipeline templates: a plan body with `{{key}}` placeholders filled from
//! typed bindings at run time.
//!
//! Template file layout:
//!
//! ```toml
//! name = "canary"
//! steps = ["deploy_candidate", "shift", "observe", "evaluate", "promote"]
//! body = '''
//! kind = "canary"
//! step_pct = {{step}}
//! '''
//!
//! [[placeholders]]
//! key = "step"
//! type = "int"
//! default = 5
//! ```
//!
//! Values are inserted as TOML literals, so a string placeholder must not
//! be quoted in the body.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, LifecycleError};
use crate::lifecycle::plan::FlowPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderType {
    Int,
    Float,
    String,
    Bool,
    IntList,
}

impl PlaceholderType {
    fn name(self) -> &'static str {
        match self {
            PlaceholderType::Int => "int",
            PlaceholderType::Float => "float",
            PlaceholderType::String => "string",
            PlaceholderType::Bool => "bool",
            PlaceholderType::IntList => "int_list",
        }
    }

    fn accepts(self, v: &toml::Value) -> bool {
        use toml::Value as V;
        match (self, v) {
            (PlaceholderType::Int, V::Integer(_)) => true,
            (PlaceholderType::Float, V::Float(_) | V::Integer(_)) => true,
            (PlaceholderType::String, V::String(_)) => true,
            (PlaceholderType::Bool, V::Boolean(_)) => true,
            (PlaceholderType::IntList, V::Array(a)) => a.iter().all(|x| x.is_integer()),
            _ => false,
        }
    }
}

fn type_of(v: &toml::Value) -> &'static str {
    v.type_str()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placeholder {
    pub key: String,
    #[serde(rename = "type")]
    pub ty: PlaceholderType,
    #[serde(default)]
    pub default: Option<toml::Value>,
    #[serde(default)]
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineTemplate {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    /// Ordered step names, logged when a run starts.
    #[serde(default)]
    pub steps: Vec<String>,
    #[serde(default)]
    pub placeholders: Vec<Placeholder>,
    pub body: String,
}

/// Reads a CLI-style binding value: TOML literal if it parses as one, bare
/// string otherwise.
pub fn parse_binding(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn literal(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => toml::Value::String(s.clone()).to_string(),
        other => other.to_string(),
    }
}

impl PipelineTemplate {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let t: PipelineTemplate = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &t.placeholders {
            if !seen.insert(p.key.as_str()) {
                return Err(ConfigError::Invalid {
                    path: origin.to_string(),
                    message: format!("placeholder `{}` declared twice", p.key),
                });
            }
            if let Some(d) = &p.default {
                if !p.ty.accepts(d) {
                    return Err(ConfigError::Invalid {
                        path: origin.to_string(),
                        message: format!("default of `{}` is not a {}", p.key, p.ty.name()),
                    });
                }
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Fills every placeholder and returns the rendered plan text.
    pub fn render(&self, bindings: &BTreeMap<String, toml::Value>) -> Result<String, LifecycleError> {
        for key in bindings.keys() {
            if !self.placeholders.iter().any(|p| &p.key == key) {
                return Err(LifecycleError::InvalidPlan(format!(
                    "template {} has no placeholder `{key}`",
                    self.name
                )));
            }
        }
        let mut out = self.body.clone();
        for p in &self.placeholders {
            let v = match (bindings.get(&p.key), &p.default) {
                (Some(v), _) => v,
                (None, Some(d)) => d,
                (None, None) => {
                    return Err(LifecycleError::MissingBinding {
                        template: self.name.clone(),
                        key: p.key.clone(),
                    })
                }
            };
            if !p.ty.accepts(v) {
                return Err(LifecycleError::TypeMismatch {
                    template: self.name.clone(),
                    key: p.key.clone(),
                    expected: p.ty.name().into(),
                    got: type_of(v).into(),
                });
            }
            out = out.replace(&format!("{{{{{}}}}}", p.key), &literal(v));
        }
        if let Some(start) = out.find("{{") {
            let rest = &out[start + 2..];
            let key = rest.split("}}").next().unwrap_or(rest).trim().to_string();
            return Err(LifecycleError::MissingBinding {
                template: self.name.clone(),
                key,
            });
        }
        Ok(out)
    }

    /// Renders and parses into a validated plan.
    pub fn instantiate(&self, bindings: &BTreeMap<String, toml::Value>) -> Result<FlowPlan, LifecycleError> {
        let text = self.render(bindings)?;
        let plan: FlowPlan = toml::from_str(&text)
            .map_err(|e| LifecycleError::InvalidPlan(format!("template {}: {e}", self.name)))?;
        plan.validate()
            .map_err(|e| LifecycleError::InvalidPlan(format!("template {}: {e}", self.name)))?;
        Ok(plan)
    }
}
