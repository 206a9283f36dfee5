//! Runs a candidate program in a child process inside a throwaway directory.
//!
//! Each run gets a fresh temp dir as its working directory, a null stdin,
//! and a wall-clock deadline. On unix the child leads its own process group
//! so a timeout kills anything it spawned as well. Network access is not
//! restricted.

use std::io::Read;
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::FailureKind;

const MAX_CAPTURE: usize = 64 * 1024;
const POLL: Duration = Duration::from_millis(5);

/// How to run a program file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpreter {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub file_name: String,
}

impl Default for Interpreter {
    fn default() -> Self {
        Interpreter::python()
    }
}

impl Interpreter {
    /// `python3 -I candidate.py`
    pub fn python() -> Self {
        Interpreter {
            program: "python3".into(),
            args: vec!["-I".into()],
            file_name: "candidate.py".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub failure_kind: FailureKind,
    pub detail: Option<String>,
    pub elapsed: Duration,
}

impl ExecOutcome {
    pub fn passed(&self) -> bool {
        self.failure_kind == FailureKind::None
    }
}

/// Writes `source` to a fresh temp dir and runs it. Never panics or errors:
/// a launch failure is reported as a crash.
pub fn run_program(source: &str, interpreter: &Interpreter, timeout: Duration) -> ExecOutcome {
    let started = Instant::now();
    let crash = |detail: String| ExecOutcome {
        failure_kind: FailureKind::Crash,
        detail: Some(detail),
        elapsed: started.elapsed(),
    };
    let dir = match tempfile::tempdir() {
        Ok(dir) => dir,
        Err(e) => return crash(format!("sandbox setup failed: {e}")),
    };
    let file = dir.path().join(&interpreter.file_name);
    if let Err(e) = std::fs::write(&file, source) {
        return crash(format!("sandbox setup failed: {e}"));
    }
    let mut child = match spawn(interpreter, &file, dir.path()) {
        Ok(child) => child,
        Err(e) => return crash(format!("failed to launch {}: {e}", interpreter.program)),
    };
    let stdout = capture(child.stdout.take());
    let stderr = capture(child.stderr.take());

    let deadline = started + timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                kill_group(&child);
                break Some(status);
            }
            Ok(None) if Instant::now() >= deadline => {
                kill(&mut child);
                break None;
            }
            Ok(None) => thread::sleep(POLL),
            Err(e) => {
                kill(&mut child);
                return crash(format!("wait failed: {e}"));
            }
        }
    };
    let elapsed = started.elapsed();
    let _ = stdout.join();
    let stderr = stderr.join().unwrap_or_default();

    match status {
        None => ExecOutcome {
            failure_kind: FailureKind::Timeout,
            detail: Some(format!("killed after {:.1}s", timeout.as_secs_f64())),
            elapsed,
        },
        Some(status) => classify(status, &stderr, elapsed),
    }
}

fn spawn(interpreter: &Interpreter, file: &Path, cwd: &Path) -> std::io::Result<Child> {
    let mut cmd = Command::new(&interpreter.program);
    cmd.args(&interpreter.args)
        .arg(file)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    cmd.spawn()
}

/// The child leads its own group; this reaches anything it left behind.
fn kill_group(child: &Child) {
    #[cfg(unix)]
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    #[cfg(not(unix))]
    let _ = child;
}

fn kill(child: &mut Child) {
    kill_group(child);
    let _ = child.kill();
    let _ = child.wait();
}

fn capture<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let Some(mut pipe) = pipe else {
            return String::new();
        };
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        while let Ok(n) = pipe.read(&mut buf) {
            if n == 0 {
                break;
            }
            let room = MAX_CAPTURE.saturating_sub(kept.len());
            kept.extend_from_slice(&buf[..n.min(room)]);
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

fn classify(status: ExitStatus, stderr: &str, elapsed: Duration) -> ExecOutcome {
    if status.success() {
        return ExecOutcome {
            failure_kind: FailureKind::None,
            detail: None,
            elapsed,
        };
    }
    let tail = stderr
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .to_string();
    let kind = if stderr.contains("AssertionError") {
        FailureKind::TestFail
    } else {
        FailureKind::Crash
    };
    let detail = match status.code() {
        Some(code) => format!("exit {code}: {tail}"),
        None => format!("terminated by signal: {tail}"),
    };
    ExecOutcome {
        failure_kind: kind,
        detail: Some(detail),
        elapsed,
    }
}
