//! Stand-in external plugin for the test suites. The first argument picks
//! the behavior.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::time::Duration;

use labloom::builtin::binarizer;
use labloom::dsl::ModuleKind;
use labloom::plugin::wire::serve;
use labloom::plugin::{DataKind, InvokeRequest, InvokeResult, MethodSpec, Plugin, PluginDescriptor, PortSpec};

/// Returns its input unchanged.
struct Echo(PluginDescriptor);

impl Plugin for Echo {
    fn descriptor(&self) -> &PluginDescriptor {
        &self.0
    }

    fn invoke(&self, req: &InvokeRequest) -> InvokeResult {
        match req.inputs.get("value") {
            Some(v) => InvokeResult::ok(BTreeMap::from([("value".to_string(), v.clone())])),
            None => InvokeResult::error("no value"),
        }
    }
}

fn echo() -> Echo {
    Echo(
        PluginDescriptor::new("echo", ModuleKind::DataProcessing, "1.0").method(
            MethodSpec::new("echo")
                .input(PortSpec::new("value", DataKind::Record))
                .output(PortSpec::new("value", DataKind::Record)),
        ),
    )
}

fn main() -> io::Result<()> {
    let mode = std::env::args().nth(1).unwrap_or_default();
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    match mode.as_str() {
        "echo" => serve(&echo(), stdin, stdout),
        "binarizer" => serve(binarizer().as_ref(), stdin, stdout),
        "slow-handshake" => {
            std::thread::sleep(Duration::from_secs(30));
            Ok(())
        }
        "exit" => std::process::exit(3),
        // Handshakes, then dies on the first invocation.
        "crash" => {
            let mut lines = stdin.lines();
            let mut out = stdout;
            if lines.next().is_some() {
                let d = labloom::plugin::wire::PluginMessage::descriptor(echo().descriptor());
                serde_json::to_writer(&mut out, &d)?;
                out.write_all(b"\n")?;
                out.flush()?;
            }
            lines.next();
            std::process::exit(4)
        }
        // Handshakes, then never answers.
        "stall" => {
            let mut lines = stdin.lines();
            let mut out = stdout;
            if lines.next().is_some() {
                let d = labloom::plugin::wire::PluginMessage::descriptor(echo().descriptor());
                serde_json::to_writer(&mut out, &d)?;
                out.write_all(b"\n")?;
                out.flush()?;
            }
            for _ in lines {}
            Ok(())
        }
        other => {
            eprintln!("unknown mode '{other}'");
            std::process::exit(2)
        }
    }
}
