//! JSON-lines protocol spoken with external plugin processes, one object per
//! line in each direction.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Diagnostic, InteractionProposal, InvokeRequest, InvokeResult, InvokeStatus, MethodSpec, Plugin, PluginDescriptor};
use crate::dsl::ModuleKind;

/// Inputs at least this large travel by reference when a stored copy exists.
pub const INLINE_LIMIT: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireInput {
    Ref {
        #[serde(rename = "ref")]
        path: String,
    },
    Inline {
        inline: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HostMessage {
    Handshake,
    Invoke {
        method: String,
        params: BTreeMap<String, Value>,
        inputs: BTreeMap<String, WireInput>,
        rng_key: String,
        iteration: String,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PluginMessage {
    Descriptor {
        name: String,
        module_kind: ModuleKind,
        methods: Vec<MethodSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<String>,
    },
    Result {
        #[serde(flatten)]
        status: InvokeStatus,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        outputs: BTreeMap<String, Value>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        diagnostics: BTreeMap<String, Diagnostic>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interaction: Option<InteractionProposal>,
    },
}

impl PluginMessage {
    pub fn descriptor(d: &PluginDescriptor) -> Self {
        PluginMessage::Descriptor {
            name: d.name.clone(),
            module_kind: d.module_kind,
            methods: d.methods.clone(),
            version: Some(d.version.clone()),
        }
    }

    pub fn result(r: InvokeResult) -> Self {
        PluginMessage::Result {
            status: r.status,
            outputs: r.outputs,
            diagnostics: r.diagnostics,
            interaction: r.interaction,
        }
    }
}

/// Encode a request for the wire, replacing large stored inputs by their path.
pub fn encode_invoke(req: &InvokeRequest) -> HostMessage {
    let inputs = req
        .inputs
        .iter()
        .map(|(port, v)| {
            let big = serde_json::to_vec(v).map(|b| b.len() >= INLINE_LIMIT).unwrap_or(false);
            let wire = match req.input_paths.get(port) {
                Some(p) if big => WireInput::Ref {
                    path: p.to_string_lossy().into_owned(),
                },
                _ => WireInput::Inline { inline: v.clone() },
            };
            (port.clone(), wire)
        })
        .collect();
    HostMessage::Invoke {
        method: req.method.clone(),
        params: req.params.clone(),
        inputs,
        rng_key: req.rng_key.clone(),
        iteration: req.iteration.to_string(),
    }
}

/// Read a referenced input. Stored artifacts wrap their payload in `value`.
pub fn load_ref(path: &Path) -> io::Result<Value> {
    let bytes = std::fs::read(path)?;
    let v: Value = serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(match v {
        Value::Object(mut m) if m.contains_key("value") && m.contains_key("port") => m.remove("value").unwrap_or(Value::Null),
        other => other,
    })
}

/// Decode an invoke message back into a request, loading referenced inputs.
pub fn decode_invoke(plugin: &str, msg: HostMessage) -> Result<InvokeRequest, String> {
    let HostMessage::Invoke {
        method,
        params,
        inputs,
        rng_key,
        iteration,
    } = msg
    else {
        return Err("not an invoke message".into());
    };
    let mut req = InvokeRequest::new(plugin, &method);
    req.params = params;
    req.rng_key = rng_key;
    req.iteration = iteration.parse()?;
    for (port, input) in inputs {
        let v = match input {
            WireInput::Inline { inline } => inline,
            WireInput::Ref { path } => load_ref(Path::new(&path)).map_err(|e| format!("input '{port}': {e}"))?,
        };
        req.inputs.insert(port, v);
    }
    Ok(req)
}

/// Serve `plugin` over a line-oriented reader/writer pair until shutdown or EOF.
pub fn serve<P: Plugin + ?Sized>(plugin: &P, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<HostMessage>(&line) {
            Ok(HostMessage::Handshake) => PluginMessage::descriptor(plugin.descriptor()),
            Ok(HostMessage::Shutdown) => return Ok(()),
            Ok(msg) => match decode_invoke(&plugin.descriptor().name, msg) {
                Ok(req) => PluginMessage::result(plugin.invoke(&req)),
                Err(e) => PluginMessage::result(InvokeResult::error(e)),
            },
            Err(e) => PluginMessage::result(InvokeResult::error(format!("bad message: {e}"))),
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
