use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use super::{InvokeRequest, InvokeResult, MethodSpec, Plugin, PluginDescriptor};
use crate::dsl::ModuleKind;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("plugin '{name}' is already registered under {kind}")]
    Duplicate { kind: ModuleKind, name: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("no plugin '{name}' registered under {kind}")]
    UnknownPlugin { kind: ModuleKind, name: String },
}

/// Plugins keyed by (module kind, name); names are namespaced per kind.
#[derive(Clone, Default)]
pub struct PluginRegistry {
    plugins: BTreeMap<(ModuleKind, String), Arc<dyn Plugin>>,
}

impl std::fmt::Debug for PluginRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.plugins.keys()).finish()
    }
}

impl PluginRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, plugin: Arc<dyn Plugin>) -> Result<(), RegistryError> {
        let d = plugin.descriptor();
        d.validate().map_err(RegistryError::Schema)?;
        let key = (d.module_kind, d.name.clone());
        if self.plugins.contains_key(&key) {
            return Err(RegistryError::Duplicate {
                kind: key.0,
                name: key.1,
            });
        }
        self.plugins.insert(key, plugin);
        Ok(())
    }

    pub fn get(&self, kind: ModuleKind, name: &str) -> Option<&Arc<dyn Plugin>> {
        self.plugins.get(&(kind, name.to_string()))
    }

    /// Kinds under which some plugin of this name exists.
    pub fn kinds_of(&self, name: &str) -> Vec<ModuleKind> {
        self.plugins.keys().filter(|(_, n)| n == name).map(|(k, _)| *k).collect()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &PluginDescriptor> {
        self.plugins.values().map(|p| p.descriptor())
    }

    pub fn method_spec(&self, kind: ModuleKind, plugin: &str, method: &str) -> Result<&MethodSpec, RegistryError> {
        let p = self.get(kind, plugin).ok_or_else(|| RegistryError::UnknownPlugin {
            kind,
            name: plugin.into(),
        })?;
        p.descriptor()
            .method_spec(method)
            .ok_or_else(|| RegistryError::Schema(format!("plugin '{plugin}' has no method '{method}'")))
    }

    /// Validate a request against the method schema; returns typed params
    /// with defaults filled.
    pub fn check_request(&self, kind: ModuleKind, req: &InvokeRequest) -> Result<BTreeMap<String, Value>, RegistryError> {
        let spec = self.method_spec(kind, &req.plugin, &req.method)?;
        let params = spec.check_params(&req.params).map_err(RegistryError::Schema)?;
        for port in &spec.input_ports {
            match req.inputs.get(&port.name) {
                Some(v) if !port.kind.accepts(v) => {
                    return Err(RegistryError::Schema(format!(
                        "input '{}' is not a valid {}",
                        port.name,
                        port.kind.as_str()
                    )))
                }
                None if !port.optional => {
                    return Err(RegistryError::Schema(format!("missing input '{}'", port.name)));
                }
                _ => {}
            }
        }
        if let Some(extra) = req.inputs.keys().find(|k| !spec.input_ports.iter().any(|p| &p.name == *k)) {
            return Err(RegistryError::Schema(format!("method '{}' has no input port '{extra}'", spec.name)));
        }
        Ok(params)
    }

    /// Invoke a method. Schema problems, plugin failures, panics, and
    /// malformed results all come back as `status=error`.
    pub fn invoke(&self, kind: ModuleKind, req: &InvokeRequest) -> InvokeResult {
        let params = match self.check_request(kind, req) {
            Ok(p) => p,
            Err(e) => return InvokeResult::error(e.to_string()),
        };
        let plugin = Arc::clone(&self.plugins[&(kind, req.plugin.clone())]);
        let spec = plugin.descriptor().method_spec(&req.method).cloned().expect("checked above");
        let mut req = req.clone();
        req.params = params;
        let result = match catch_unwind(AssertUnwindSafe(|| plugin.invoke(&req))) {
            Ok(r) => r,
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                return InvokeResult::error(format!("plugin panicked: {msg}"));
            }
        };
        if !result.is_ok() {
            return result;
        }
        if let Err(e) = conform(&spec, &result) {
            let mut bad = InvokeResult::error(e);
            bad.outputs = result.outputs;
            return bad;
        }
        result
    }
}

/// Output ports of an ok result must exactly match the declaration.
fn conform(spec: &MethodSpec, result: &InvokeResult) -> Result<(), String> {
    for port in &spec.output_ports {
        match result.outputs.get(&port.name) {
            None => return Err(format!("result is missing output '{}'", port.name)),
            Some(v) if !port.kind.accepts(v) => {
                return Err(format!("output '{}' is not a valid {}", port.name, port.kind.as_str()))
            }
            _ => {}
        }
    }
    if let Some(extra) = result.outputs.keys().find(|k| !spec.output_ports.iter().any(|p| &p.name == *k)) {
        return Err(format!("result has undeclared output '{extra}'"));
    }
    if spec.interaction.is_some() && result.interaction.is_none() {
        return Err("interactive method returned no interaction".into());
    }
    if spec.interaction.is_none() && result.interaction.is_some() {
        return Err("non-interactive method returned an interaction".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plugin::{DataKind, ParamSpec, ParamType, PortSpec};
    use serde_json::json;

    struct Toy {
        d: PluginDescriptor,
        mode: &'static str,
    }

    impl Plugin for Toy {
        fn descriptor(&self) -> &PluginDescriptor {
            &self.d
        }

        fn invoke(&self, _req: &InvokeRequest) -> InvokeResult {
            match self.mode {
                "panic" => panic!("kaboom"),
                "missing" => InvokeResult::ok(BTreeMap::new()),
                _ => InvokeResult::ok(BTreeMap::from([("out".to_string(), json!(1.0))])),
            }
        }
    }

    fn toy(name: &str, kind: ModuleKind, mode: &'static str) -> Arc<dyn Plugin> {
        let d = PluginDescriptor::new(name, kind, "1").method(
            MethodSpec::new("run")
                .param(ParamSpec::required("k", ParamType::Integer))
                .output(PortSpec::new("out", DataKind::Scalar)),
        );
        Arc::new(Toy { d, mode })
    }

    #[test]
    fn names_are_namespaced_per_kind() {
        let mut r = PluginRegistry::new();
        r.register(toy("binarizer", ModuleKind::DataProcessing, "ok")).unwrap();
        assert!(matches!(
            r.register(toy("binarizer", ModuleKind::DataProcessing, "ok")),
            Err(RegistryError::Duplicate { .. })
        ));
        r.register(toy("binarizer", ModuleKind::DecisionMaking, "ok")).unwrap();
        assert_eq!(r.kinds_of("binarizer").len(), 2);
    }

    #[test]
    fn failures_become_error_results() {
        let mut r = PluginRegistry::new();
        r.register(toy("p", ModuleKind::Modeling, "panic")).unwrap();
        r.register(toy("q", ModuleKind::Modeling, "missing")).unwrap();
        let req = InvokeRequest::new("p", "run");
        let res = r.invoke(ModuleKind::Modeling, &req);
        assert!(res.error_message().unwrap().contains("missing required parameter"));
        let res = r.invoke(ModuleKind::Modeling, &req.clone().with_param("k", 1));
        assert!(res.error_message().unwrap().contains("kaboom"));
        let mut q = req.with_param("k", 1);
        q.plugin = "q".into();
        let res = r.invoke(ModuleKind::Modeling, &q);
        assert!(res.error_message().unwrap().contains("missing output"));
    }
}
