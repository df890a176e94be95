//! Pipeline commands behind the `aaaseg` binary.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// An error in the invocation or its inputs, as opposed to a failure of the
/// computation itself.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_COMPUTE
    }
}

/// Converts any input-side failure into a [`UsageError`] that names what
/// was being read.
pub trait InputContext<T> {
    fn input(self, what: impl fmt::Display) -> Result<T>;
}

impl<T, E: fmt::Display> InputContext<T> for std::result::Result<T, E> {
    fn input(self, what: impl fmt::Display) -> Result<T> {
        self.map_err(|e| UsageError(format!("{what}: {e}")).into())
    }
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist or is not a directory", path.display())).into())
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())).into())
    }
}

/// Record of one command run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub parameters: Map<String, Value>,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, parameters: Map<String, Value>, seed: u64, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            parameters,
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        aaaseg::volio::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).input(format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).input(format!("parsing manifest {}", path.display()))
    }
}

/// `<file>.manifest.json` beside a single-file output.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub const DIR_MANIFEST: &str = "run_manifest.json";

/// Maps `f` over `items` on up to `threads` scoped threads, keeping order.
pub fn parallel_map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<U>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_survive_context() {
        let e: anyhow::Error = UsageError("missing".into()).into();
        assert_eq!(exit_code(&e.context("train")), EXIT_USAGE);
        let e = anyhow::anyhow!("diverged");
        assert_eq!(exit_code(&e), EXIT_COMPUTE);
        let r: Result<(), String> = Err("no such file".into());
        assert_eq!(exit_code(&r.input("reading x").unwrap_err()), EXIT_USAGE);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..23).collect();
        for t in [1, 2, 4, 64] {
            assert_eq!(parallel_map(&items, t, |v| v * 2), items.iter().map(|v| v * 2).collect::<Vec<_>>());
        }
        assert!(parallel_map(&[] as &[u32], 4, |v| *v).is_empty());
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(manifest_path_for(Path::new("out/model.ckpt")), PathBuf::from("out/model.ckpt.manifest.json"));
    }
}
