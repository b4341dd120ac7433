//! Tool trait and registry.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::types::{ArgMap, ContextVariables, ToolSpec};

/// What a tool sees about the session it runs in.
#[derive(Debug, Clone, Copy)]
pub struct CallContext<'a> {
    pub session_id: &'a str,
    pub vars: &'a ContextVariables,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutput {
    pub content: String,
    pub is_error: bool,
    pub handoff_target: Option<String>,
    pub ends_session: bool,
}

impl ToolOutput {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            is_error: false,
            handoff_target: None,
            ends_session: false,
        }
    }

    pub fn error(content: impl Into<String>) -> Self {
        Self {
            is_error: true,
            ..Self::text(content)
        }
    }

    pub fn handoff(target: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            handoff_target: Some(target.into()),
            ..Self::text(content)
        }
    }
}

pub trait Tool: Send + Sync {
    fn spec(&self) -> &ToolSpec;

    /// Runs with arguments already validated against [`Tool::spec`].
    fn invoke(&self, args: &ArgMap, ctx: &CallContext<'_>) -> ToolOutput;
}

type ToolFn = dyn Fn(&ArgMap, &CallContext<'_>) -> ToolOutput + Send + Sync;

/// A tool backed by a closure.
pub struct FnTool {
    spec: ToolSpec,
    f: Box<ToolFn>,
}

impl FnTool {
    pub fn new<F>(spec: ToolSpec, f: F) -> Self
    where
        F: Fn(&ArgMap, &CallContext<'_>) -> ToolOutput + Send + Sync + 'static,
    {
        Self { spec, f: Box::new(f) }
    }
}

impl Tool for FnTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, args: &ArgMap, ctx: &CallContext<'_>) -> ToolOutput {
        (self.f)(args, ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("tool name {0:?} is not a valid identifier")]
    InvalidName(String),
    #[error("tool {0:?} is already registered")]
    Duplicate(String),
    #[error("alias {alias:?} points at unregistered tool {target:?}")]
    DanglingAlias { alias: String, target: String },
    #[error("tool {tool:?} declares parameter {param:?} twice")]
    DuplicateParam { tool: String, param: String },
}

/// Immutable-after-startup set of tools, with optional aliases.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<Arc<dyn Tool>>,
    index: HashMap<String, usize>,
    aliases: HashMap<String, String>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.names().collect::<Vec<_>>())
            .field("aliases", &self.aliases)
            .finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<T: Tool + 'static>(&mut self, tool: T) -> Result<(), RegistryError> {
        self.register_arc(Arc::new(tool))
    }

    pub fn register_arc(&mut self, tool: Arc<dyn Tool>) -> Result<(), RegistryError> {
        let spec = tool.spec();
        let name = spec.name.clone();
        if !ToolSpec::is_valid_name(&name) {
            return Err(RegistryError::InvalidName(name));
        }
        if self.index.contains_key(&name) || self.aliases.contains_key(&name) {
            return Err(RegistryError::Duplicate(name));
        }
        for (i, p) in spec.parameters.iter().enumerate() {
            if spec.parameters[..i].iter().any(|q| q.name == p.name) {
                return Err(RegistryError::DuplicateParam {
                    tool: name,
                    param: p.name.clone(),
                });
            }
        }
        self.index.insert(name, self.tools.len());
        self.tools.push(tool);
        Ok(())
    }

    pub fn alias(&mut self, alias: &str, target: &str) -> Result<(), RegistryError> {
        if !ToolSpec::is_valid_name(alias) {
            return Err(RegistryError::InvalidName(alias.to_string()));
        }
        if self.index.contains_key(alias) || self.aliases.contains_key(alias) {
            return Err(RegistryError::Duplicate(alias.to_string()));
        }
        if !self.index.contains_key(target) {
            return Err(RegistryError::DanglingAlias {
                alias: alias.to_string(),
                target: target.to_string(),
            });
        }
        self.aliases.insert(alias.to_string(), target.to_string());
        Ok(())
    }

    /// Canonical tool names in registration order (aliases excluded).
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.spec().name.as_str())
    }

    pub fn canonical_name(&self, name: &str) -> Option<&str> {
        if let Some(&i) = self.index.get(name) {
            return Some(self.tools[i].spec().name.as_str());
        }
        self.aliases.get(name).map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&dyn Tool> {
        let canonical = self.canonical_name(name)?;
        self.index.get(canonical).map(|&i| self.tools[i].as_ref())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.canonical_name(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Specs of the named tools, in the order given. Unknown names are skipped.
    pub fn specs_for<S: AsRef<str>>(&self, names: &[S]) -> Vec<ToolSpec> {
        names
            .iter()
            .filter_map(|n| self.get(n.as_ref()).map(|t| t.spec().clone()))
            .collect()
    }

    /// Copy of the registry without `name` (and without aliases pointing at it).
    pub fn without(&self, name: &str) -> ToolRegistry {
        let mut out = ToolRegistry::new();
        for t in &self.tools {
            if t.spec().name != name {
                out.register_arc(t.clone()).expect("names already validated");
            }
        }
        for (alias, target) in &self.aliases {
            if target != name {
                out.alias(alias, target).expect("alias already validated");
            }
        }
        out
    }

    /// Copy holding only the named tools (plus aliases that point at them).
    pub fn restricted_to<S: AsRef<str>>(&self, names: &[S]) -> ToolRegistry {
        let keep: Vec<&str> = names.iter().filter_map(|n| self.canonical_name(n.as_ref())).collect();
        let mut out = self.clone();
        for t in &self.tools {
            let name = t.spec().name.as_str();
            if !keep.contains(&name) {
                out = out.without(name);
            }
        }
        out
    }

    /// Merges another registry into this one.
    pub fn merge(&mut self, other: &ToolRegistry) -> Result<(), RegistryError> {
        for t in &other.tools {
            self.register_arc(t.clone())?;
        }
        for (alias, target) in &other.aliases {
            self.alias(alias, target)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ParamKind, ParamSpec};

    fn noop(name: &str) -> FnTool {
        FnTool::new(ToolSpec::new(name, ""), |_, _| ToolOutput::text("ok"))
    }

    #[test]
    fn duplicate_and_invalid_names() {
        let mut r = ToolRegistry::new();
        r.register(noop("a")).unwrap();
        assert_eq!(r.register(noop("a")), Err(RegistryError::Duplicate("a".into())));
        assert!(matches!(r.register(noop("a-b")), Err(RegistryError::InvalidName(_))));
        let twice = ToolSpec::new("t", "")
            .param(ParamSpec::new("x", ParamKind::String, "", true))
            .param(ParamSpec::new("x", ParamKind::String, "", false));
        assert!(matches!(
            r.register(FnTool::new(twice, |_, _| ToolOutput::text(""))),
            Err(RegistryError::DuplicateParam { .. })
        ));
    }

    #[test]
    fn aliases_resolve_but_are_not_listed() {
        let mut r = ToolRegistry::new();
        r.register(noop("book_train_ticket")).unwrap();
        r.alias("buy_train_ticket", "book_train_ticket").unwrap();
        assert_eq!(r.canonical_name("buy_train_ticket"), Some("book_train_ticket"));
        assert!(r.get("buy_train_ticket").is_some());
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["book_train_ticket"]);
        assert!(r.alias("x", "nope").is_err());
        let r2 = r.without("book_train_ticket");
        assert!(r2.is_empty());
        assert!(!r2.contains("buy_train_ticket"));
    }
}
