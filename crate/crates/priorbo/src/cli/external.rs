//! External objective protocol: each evaluation spawns the configured command,
//! writes one JSON line `{"x": {...}}` to its stdin and reads
//! `{"y": <real>, "feasible": <bool>}` from its stdout.

use crate::engine::Evaluation;
use crate::error::{Error, Result};
use crate::space::{NativePoint, ParamValue, SearchSpace};
use serde::Deserialize;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

#[derive(Deserialize)]
struct Reply {
    y: f64,
    #[serde(default = "default_true")]
    feasible: bool,
}

fn default_true() -> bool {
    true
}

fn point_json(space: &SearchSpace, x: &NativePoint) -> String {
    let mut map = serde_json::Map::new();
    for (p, v) in space.parameters().iter().zip(x) {
        let jv = match v {
            ParamValue::Float(f) => serde_json::json!(f),
            ParamValue::Text(s) => serde_json::json!(s),
        };
        map.insert(p.name.clone(), jv);
    }
    serde_json::json!({ "x": map }).to_string()
}

/// Runs one evaluation through the external command, with a wall-clock
/// timeout. Any process failure is an objective-process error, which aborts
/// the run with a partial trace.
pub fn evaluate_external(
    command: &[String],
    timeout: Duration,
    space: &SearchSpace,
    x: &NativePoint,
) -> Result<Evaluation> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| Error::InvalidConfig("external command is empty".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| Error::ObjectiveProcess(format!("spawn `{program}`: {e}")))?;

    let line = point_json(space, x);
    child
        .stdin
        .take()
        .expect("piped stdin")
        .write_all(format!("{line}\n").as_bytes())
        .map_err(|e| Error::ObjectiveProcess(format!("write stdin: {e}")))?;

    let (tx, rx) = mpsc::channel();
    let waiter = std::thread::spawn(move || {
        let out = child.wait_with_output();
        let _ = tx.send(out);
    });
    let output = match rx.recv_timeout(timeout) {
        Ok(out) => out.map_err(|e| Error::ObjectiveProcess(format!("wait: {e}")))?,
        Err(_) => {
            // The child is orphaned on timeout; the waiter thread reaps it
            // when (if) it exits.
            return Err(Error::ObjectiveProcess(format!(
                "timed out after {:.1}s",
                timeout.as_secs_f64()
            )));
        }
    };
    let _ = waiter.join();

    if !output.status.success() {
        return Err(Error::ObjectiveProcess(format!(
            "exit status {}",
            output.status
        )));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let reply_line = stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::ObjectiveProcess("empty stdout".into()))?;
    let reply: Reply = serde_json::from_str(reply_line)
        .map_err(|e| Error::ObjectiveProcess(format!("bad reply `{reply_line}`: {e}")))?;
    Ok(Evaluation {
        y: reply.y,
        feasible: reply.feasible,
    })
}
