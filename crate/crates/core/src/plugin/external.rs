use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use super::wire::{encode_invoke, HostMessage, PluginMessage};
use super::{InvokeRequest, InvokeResult, Plugin, PluginDescriptor};
use crate::dsl::ModuleKind;

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("cannot start plugin process: {0}")]
    Spawn(std::io::Error),
    #[error("plugin did not complete the handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("plugin process exited during the handshake")]
    Exited,
    #[error("bad handshake reply: {0}")]
    Protocol(String),
    #[error("descriptor mismatch: {0}")]
    DescriptorMismatch(String),
}

/// What the host requires of a spawned plugin's descriptor. Unset fields are
/// not checked.
#[derive(Debug, Clone, Default)]
pub struct DescriptorExpectation {
    pub name: Option<String>,
    pub module_kind: Option<ModuleKind>,
    pub version: Option<String>,
    pub methods: Vec<String>,
}

impl DescriptorExpectation {
    fn check(&self, d: &PluginDescriptor) -> Result<(), String> {
        if let Some(n) = &self.name {
            if &d.name != n {
                return Err(format!("expected name '{n}', got '{}'", d.name));
            }
        }
        if let Some(k) = self.module_kind {
            if d.module_kind != k {
                return Err(format!("expected kind {k}, got {}", d.module_kind));
            }
        }
        if let Some(v) = &self.version {
            if &d.version != v {
                return Err(format!("expected version '{v}', got '{}'", d.version));
            }
        }
        for m in &self.methods {
            if d.method_spec(m).is_none() {
                return Err(format!("missing method '{m}'"));
            }
        }
        d.validate()
    }
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
}

/// A plugin living in another process. One invocation at a time.
pub struct ExternalPlugin {
    descriptor: PluginDescriptor,
    channel: Mutex<Channel>,
    invoke_timeout: Option<Duration>,
}

fn read_lines(stdout: std::process::ChildStdout) -> Receiver<String> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

/// Start `argv`, perform the handshake, and check the descriptor.
pub fn spawn_external(argv: &[String], expect: &DescriptorExpectation) -> Result<ExternalPlugin, ExternalError> {
    spawn_with_timeout(argv, expect, HANDSHAKE_TIMEOUT)
}

fn spawn_with_timeout(argv: &[String], expect: &DescriptorExpectation, timeout: Duration) -> Result<ExternalPlugin, ExternalError> {
    let (prog, args) = argv
        .split_first()
        .ok_or_else(|| ExternalError::Spawn(std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command line")))?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(ExternalError::Spawn)?;
    let stdin = child.stdin.take();
    let lines = read_lines(child.stdout.take().expect("piped stdout"));
    let mut channel = Channel { child, stdin, lines };

    let reply = send(&mut channel, &HostMessage::Handshake).and_then(|_| match channel.lines.recv_timeout(timeout) {
        Ok(line) => Ok(line),
        Err(RecvTimeoutError::Timeout) => Err(ExternalError::HandshakeTimeout(timeout)),
        Err(RecvTimeoutError::Disconnected) => Err(ExternalError::Exited),
    });
    let descriptor = reply.and_then(|line| match serde_json::from_str::<PluginMessage>(&line) {
        Ok(PluginMessage::Descriptor {
            name,
            module_kind,
            methods,
            version,
        }) => Ok(PluginDescriptor {
            name,
            module_kind,
            methods,
            version: version.unwrap_or_else(|| "0".into()),
        }),
        Ok(_) => Err(ExternalError::Protocol("expected a descriptor".into())),
        Err(e) => Err(ExternalError::Protocol(e.to_string())),
    });
    let descriptor = match descriptor.and_then(|d| expect.check(&d).map(|_| d).map_err(ExternalError::DescriptorMismatch)) {
        Ok(d) => d,
        Err(e) => {
            let _ = channel.child.kill();
            let _ = channel.child.wait();
            return Err(e);
        }
    };
    Ok(ExternalPlugin {
        descriptor,
        channel: Mutex::new(channel),
        invoke_timeout: None,
    })
}

fn send(channel: &mut Channel, msg: &HostMessage) -> Result<(), ExternalError> {
    let stdin = channel.stdin.as_mut().ok_or(ExternalError::Exited)?;
    let mut line = serde_json::to_vec(msg).expect("host messages serialize");
    line.push(b'\n');
    stdin
        .write_all(&line)
        .and_then(|_| stdin.flush())
        .map_err(|_| ExternalError::Exited)
}

impl ExternalPlugin {
    /// Abort an invocation that takes longer than `t`; the process is killed.
    pub fn with_invoke_timeout(mut self, t: Option<Duration>) -> Self {
        self.invoke_timeout = t;
        self
    }

    pub fn pid(&self) -> u32 {
        self.channel.lock().map(|c| c.child.id()).unwrap_or(0)
    }

    /// Kill the process without the shutdown message.
    pub fn kill(&self) {
        if let Ok(mut c) = self.channel.lock() {
            let _ = c.child.kill();
            let _ = c.child.wait();
        }
    }
}

impl Plugin for ExternalPlugin {
    fn descriptor(&self) -> &PluginDescriptor {
        &self.descriptor
    }

    fn invoke(&self, request: &InvokeRequest) -> InvokeResult {
        let Ok(mut c) = self.channel.lock() else {
            return InvokeResult::error("plugin channel poisoned");
        };
        if matches!(c.child.try_wait(), Ok(Some(_))) || send(&mut c, &encode_invoke(request)).is_err() {
            return InvokeResult::error("plugin process exited");
        }
        let line = match self.invoke_timeout {
            Some(t) => c.lines.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => "plugin invocation timed out",
                RecvTimeoutError::Disconnected => "plugin process exited",
            }),
            None => c.lines.recv().map_err(|_| "plugin process exited"),
        };
        let line = match line {
            Ok(l) => l,
            Err(msg) => {
                let _ = c.child.kill();
                let _ = c.child.wait();
                return InvokeResult::error(msg);
            }
        };
        match serde_json::from_str::<PluginMessage>(&line) {
            Ok(PluginMessage::Result {
                status,
                outputs,
                diagnostics,
                interaction,
            }) => InvokeResult {
                status,
                outputs,
                diagnostics,
                interaction,
            },
            Ok(_) => InvokeResult::error("plugin replied with a descriptor to an invoke"),
            Err(e) => InvokeResult::error(format!("bad plugin reply: {e}")),
        }
    }
}

impl Drop for ExternalPlugin {
    fn drop(&mut self) {
        let Ok(c) = self.channel.get_mut() else { return };
        if send(c, &HostMessage::Shutdown).is_ok() {
            c.stdin.take();
            for _ in 0..20 {
                if matches!(c.child.try_wait(), Ok(Some(_))) {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
        let _ = c.child.kill();
        let _ = c.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_executable_is_a_spawn_error() {
        let argv = vec!["/nonexistent/labloom-plugin".to_string()];
        assert!(matches!(
            spawn_external(&argv, &DescriptorExpectation::default()),
            Err(ExternalError::Spawn(_))
        ));
    }

    #[test]
    fn silent_process_times_out() {
        let argv = vec!["sleep".to_string(), "3".to_string()];
        let r = spawn_with_timeout(&argv, &DescriptorExpectation::default(), Duration::from_millis(200));
        assert!(matches!(r, Err(ExternalError::HandshakeTimeout(_))));
    }
}
