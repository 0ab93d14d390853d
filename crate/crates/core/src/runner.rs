//! Runs automatic verification agents as external commands.
//!
//! Commands run with the operator's privileges; nothing is sandboxed.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::gates::{AgentKind, VerificationAgent};
use crate::verdict::Verdict;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
pub const DEFAULT_OUTPUT_LIMIT: usize = 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLimits {
    pub timeout: Duration,
    pub output_limit: usize,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            timeout: DEFAULT_TIMEOUT,
            output_limit: DEFAULT_OUTPUT_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub va_id: String,
    pub verdict: Verdict,
    pub exit_code: Option<i32>,
    /// Combined stdout and stderr, capped at the output limit.
    pub output: String,
    pub truncated: bool,
    pub vetoed: bool,
    pub duration_ms: u64,
}

impl RunOutcome {
    pub fn evidence(&self) -> String {
        let mut s = match (self.vetoed, self.exit_code) {
            (true, _) => "exit 0, rejected by veto pattern".to_string(),
            (false, Some(c)) => format!("exit {c}"),
            (false, None) => "terminated by signal".to_string(),
        };
        if !self.output.is_empty() {
            s.push('\n');
            s.push_str(&self.output);
        }
        s
    }
}

struct Capture {
    buf: Vec<u8>,
    limit: usize,
    dropped: usize,
}

impl Capture {
    fn push(&mut self, chunk: &[u8]) {
        let room = self.limit.saturating_sub(self.buf.len());
        let take = room.min(chunk.len());
        self.buf.extend_from_slice(&chunk[..take]);
        self.dropped += chunk.len() - take;
    }
}

fn drain(mut src: impl Read + Send + 'static, cap: Arc<Mutex<Capture>>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut chunk = [0u8; 8192];
        loop {
            match src.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => cap.lock().expect("capture lock").push(&chunk[..n]),
            }
        }
    })
}

/// Run one automatic agent in `target`. An agent whose program is empty has
/// not been configured and is rejected without spawning anything.
pub fn run_automatic_va(agent: &VerificationAgent, target: &Path, limits: &RunLimits) -> Result<RunOutcome> {
    let spec = match &agent.kind {
        AgentKind::Automatic(spec) => spec,
        AgentKind::Human { .. } => return Err(Error::AgentNotAutomatic(agent.va_id.clone())),
    };
    if spec.program.trim().is_empty() {
        return Ok(RunOutcome {
            va_id: agent.va_id.clone(),
            verdict: Verdict::Rejected,
            exit_code: None,
            output: format!("no command configured for verifier {}", agent.va_id),
            truncated: false,
            vetoed: false,
            duration_ms: 0,
        });
    }
    let veto = spec
        .veto_pattern
        .as_deref()
        .map(Regex::new)
        .transpose()
        .map_err(|e| Error::InvalidConfig(format!("veto pattern for {}: {e}", agent.va_id)))?;
    let workdir = match &spec.workdir {
        Some(w) => target.join(w),
        None => target.to_path_buf(),
    };
    if !workdir.is_dir() {
        return Err(Error::io(
            format!("verifier {} working directory", agent.va_id),
            std::io::Error::new(std::io::ErrorKind::NotFound, workdir.display().to_string()),
        ));
    }
    let timeout = spec.timeout_secs.map(Duration::from_secs).unwrap_or(limits.timeout);
    let limit = spec.output_limit.unwrap_or(limits.output_limit);

    let started = Instant::now();
    let mut child = Command::new(&spec.program)
        .args(&spec.args)
        .current_dir(&workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::CommandNotFound(spec.program.clone()),
            std::io::ErrorKind::PermissionDenied => Error::PermissionDenied(spec.program.clone().into()),
            _ => Error::io(format!("spawn {}", spec.program), e),
        })?;

    let cap = Arc::new(Mutex::new(Capture {
        buf: Vec::new(),
        limit,
        dropped: 0,
    }));
    let readers = [
        drain(child.stdout.take().expect("piped stdout"), cap.clone()),
        drain(child.stderr.take().expect("piped stderr"), cap.clone()),
    ];
    let status = child
        .wait_timeout(timeout)
        .map_err(|e| Error::io(format!("wait for {}", spec.program), e))?;
    let Some(status) = status else {
        let _ = child.kill();
        let _ = child.wait();
        // readers are left detached: a grandchild may still hold the pipes
        return Err(Error::Timeout(timeout));
    };
    for r in readers {
        let _ = r.join();
    }
    let cap = cap.lock().expect("capture lock");
    let mut output = String::from_utf8_lossy(&cap.buf).into_owned();
    let truncated = cap.dropped > 0;
    let vetoed = status.success() && veto.as_ref().is_some_and(|re| re.is_match(&output));
    if truncated {
        output.push_str(&format!("\n[output truncated: {} bytes omitted]", cap.dropped));
    }
    if !spec.retain_output {
        output.clear();
    }
    Ok(RunOutcome {
        va_id: agent.va_id.clone(),
        verdict: Verdict::from_bool(status.success() && !vetoed),
        exit_code: status.code(),
        output,
        truncated,
        vetoed,
        duration_ms: started.elapsed().as_millis() as u64,
    })
}

/// Run several agents concurrently; results keep the input order.
pub fn run_all(agents: &[&VerificationAgent], target: &Path, limits: &RunLimits) -> Vec<Result<RunOutcome>> {
    thread::scope(|s| {
        let handles: Vec<_> = agents
            .iter()
            .map(|a| s.spawn(move || run_automatic_va(a, target, limits)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("verifier thread panicked"))
            .collect()
    })
}
