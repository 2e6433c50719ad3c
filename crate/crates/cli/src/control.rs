//! Line-delimited JSON over a Unix socket: one request line in, one
//! response line out.
//!
//! Requests look like `{"command": "down", "channel": "provisioning"}`.
//! Responses carry `ok` plus either `status` or `error`.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use anyhow::Context;
use decision_engine::channel::ChannelStatus;
use decision_engine::config::load_config;
use decision_engine::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::Action;

#[derive(Debug, Serialize, Deserialize)]
struct Request {
    command: String,
    channel: String,
}

/// Serves control requests for `engine` until dropped.
pub struct ControlServer {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ControlServer {
    pub fn bind(path: &Path, engine: Arc<Engine>) -> anyhow::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        // A socket file left by a previous run blocks bind.
        if path.exists() {
            std::fs::remove_file(path).with_context(|| format!("removing stale {}", path.display()))?;
        }
        let listener = UnixListener::bind(path).with_context(|| format!("binding {}", path.display()))?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let engine = engine.clone();
                        thread::spawn(move || serve(stream, &engine));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
                    Err(e) => log::warn!("control socket: {e}"),
                }
            }
        });
        Ok(ControlServer { path: path.to_path_buf(), stop, thread: Some(thread) })
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        let _ = std::fs::remove_file(&self.path);
    }
}

fn serve(stream: UnixStream, engine: &Engine) {
    let _ = stream.set_nonblocking(false);
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let response = handle(&line, engine);
        if writeln!(writer, "{response}").is_err() {
            return;
        }
    }
}

fn handle(line: &str, engine: &Engine) -> Value {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return json!({"ok": false, "error": format!("bad request: {e}")}),
    };
    let done = match req.command.as_str() {
        "up" => engine.start(&req.channel).map(|_| ()),
        "down" => engine.stop(&req.channel).map(|_| ()),
        "status" => Ok(()),
        other => return json!({"ok": false, "error": format!("unknown command `{other}`")}),
    };
    match done.and_then(|_| engine.status(&req.channel)) {
        Ok(status) => json!({"ok": true, "status": status}),
        Err(e) => json!({"ok": false, "error": e.to_string()}),
    }
}

pub fn describe(status: &ChannelStatus) -> String {
    describe_value(&serde_json::to_value(status).expect("status serializes"))
}

fn describe_value(s: &Value) -> String {
    let mut out = format!(
        "{}: {} (cycles {}, open generation {})",
        s["channel"].as_str().unwrap_or("?"),
        s["state"].as_str().unwrap_or("?"),
        s["cycles"],
        s["open_generation"]
    );
    if let Some(last) = s.get("last_outcome").filter(|v| !v.is_null()) {
        let list = |v: &Value| {
            v.as_array().map(|a| a.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(",")).unwrap_or_default()
        };
        out.push_str(&format!(
            "\n  last cycle: generation {} {} in {:.1} ms; fired [{}]; publishers [{}]",
            last["generation"],
            last["outcome"].as_str().unwrap_or("?"),
            last["duration_ms"].as_f64().unwrap_or(0.0),
            list(&last["fired_rules"]),
            list(&last["publishers_run"]),
        ));
        if let Some(err) = last["error"].as_str() {
            out.push_str(&format!("\n  error: {err}"));
        }
    }
    out
}

fn request(socket: &Path, action: Action, id: &str) -> anyhow::Result<Value> {
    let command = match action {
        Action::Up => "up",
        Action::Down => "down",
        Action::Status => "status",
    };
    let stream = UnixStream::connect(socket)
        .with_context(|| format!("connecting to {} (is the engine running with --live?)", socket.display()))?;
    let mut writer = stream.try_clone()?;
    writeln!(writer, "{}", serde_json::to_string(&Request { command: command.into(), channel: id.into() })?)?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line)?;
    serde_json::from_str(&line).context("reading response")
}

pub fn client(config: &Path, action: Action, id: &str) -> u8 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    match request(&cfg.control_socket, action, id) {
        Ok(resp) if resp["ok"] == json!(true) => {
            println!("{}", describe_value(&resp["status"]));
            0
        }
        Ok(resp) => {
            eprintln!("error: {}", resp["error"].as_str().unwrap_or("unknown"));
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
