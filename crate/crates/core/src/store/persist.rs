//! State file envelope, atomic replacement and the writer lock.
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "hash_algorithm": "sha256",
//!   "checksum": "<hex sha256 of the body bytes>",
//!   "body": { ...ProjectState... }
//! }
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use fs2::FileExt;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::state::{ProjectState, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::hash::{sha256_hex, HASH_ALGORITHM};

pub const STATE_FILE: &str = "iacdm-state.json";
pub const LOCK_FILE: &str = ".iacdm.lock";
const TEMP_SUFFIX: &str = ".tmp";

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    schema_version: u32,
    hash_algorithm: &'a str,
    checksum: String,
    body: &'a RawValue,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    schema_version: u32,
    hash_algorithm: String,
    checksum: String,
    body: Box<RawValue>,
}

pub fn encode_state(state: &ProjectState) -> Vec<u8> {
    let body = serde_json::to_string(state).expect("project state serializes");
    let raw = RawValue::from_string(body).expect("serializer output is valid JSON");
    let env = EnvelopeOut {
        schema_version: SCHEMA_VERSION,
        hash_algorithm: HASH_ALGORITHM,
        checksum: sha256_hex(raw.get().as_bytes()),
        body: &raw,
    };
    let mut out = serde_json::to_vec_pretty(&env).expect("envelope serializes");
    out.push(b'\n');
    out
}

/// Parse, verify the checksum and check every structural invariant.
pub fn decode_state(bytes: &[u8]) -> Result<ProjectState> {
    let corrupt = |m: String| Error::CorruptStateFile(m);
    let env: EnvelopeIn = serde_json::from_slice(bytes).map_err(|e| corrupt(format!("unreadable envelope: {e}")))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(corrupt(format!(
            "unsupported schema_version {} (this engine reads {SCHEMA_VERSION})",
            env.schema_version
        )));
    }
    if env.hash_algorithm != HASH_ALGORITHM {
        return Err(corrupt(format!("unsupported hash_algorithm {:?}", env.hash_algorithm)));
    }
    let actual = sha256_hex(env.body.get().as_bytes());
    if actual != env.checksum {
        return Err(corrupt("checksum mismatch".into()));
    }
    let state: ProjectState =
        serde_json::from_str(env.body.get()).map_err(|e| corrupt(format!("body does not match schema: {e}")))?;
    let problems = state.consistency_problems();
    if !problems.is_empty() {
        return Err(corrupt(problems.join("; ")));
    }
    Ok(state)
}

pub fn state_path(root: &Path) -> PathBuf {
    root.join(STATE_FILE)
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("file path").to_os_string();
    name.push(TEMP_SUFFIX);
    path.with_file_name(name)
}

fn io_err(path: &Path, what: &str, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::PermissionDenied {
        Error::PermissionDenied(path.to_path_buf())
    } else {
        Error::io(format!("{what} {}", path.display()), e)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, bytes, |_| Ok(()))
}

/// Write a sibling temp file, fsync, run `before_rename`, then rename over
/// `path`. An error from the hook aborts before the rename, which is how
/// tests simulate a writer killed between the two steps.
pub fn write_atomic_with(
    path: &Path,
    bytes: &[u8],
    before_rename: impl FnOnce(&Path) -> std::io::Result<()>,
) -> Result<()> {
    let tmp = temp_path(path);
    {
        let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, "create", e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, "write", e))?;
        f.sync_all().map_err(|e| io_err(&tmp, "sync", e))?;
    }
    before_rename(&tmp).map_err(|e| io_err(&tmp, "interrupted before rename of", e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, "rename onto", e))?;
    if let Some(dir) = path.parent() {
        // directory fsync is best effort; not every platform allows it
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub fn save_state(root: &Path, state: &ProjectState) -> Result<()> {
    save_state_with(root, state, |_| Ok(()))
}

pub fn save_state_with(
    root: &Path,
    state: &ProjectState,
    before_rename: impl FnOnce(&Path) -> std::io::Result<()>,
) -> Result<()> {
    write_atomic_with(&state_path(root), &encode_state(state), before_rename)
}

pub fn load_state(root: &Path) -> Result<ProjectState> {
    let path = state_path(root);
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingProject(root.to_path_buf()))
        }
        Err(e) => return Err(io_err(&path, "read", e)),
    };
    decode_state(&bytes)
}

/// Exclusive advisory lock on `<root>/.iacdm.lock`, released on drop.
#[derive(Debug)]
pub struct WriterLock {
    file: File,
}

impl WriterLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| io_err(&path, "open", e))?;
        file.try_lock_exclusive().map_err(|_| Error::Locked(path))?;
        Ok(WriterLock { file })
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = FileExt::unlock(&self.file);
    }
}
