//! Run directories: every command writes its outputs under one directory
//! together with a `run.json` manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ovb_core::io::write_atomic;
use ovb_core::Result;
use serde::Serialize;

pub const OUTPUT_ENV: &str = "OVB_OUTPUT_DIR";
pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    status: &'a str,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    started_unix_secs: u64,
    wall_time_secs: f64,
    outputs: &'a [String],
}

pub struct RunDir {
    dir: PathBuf,
    command: &'static str,
    outputs: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl RunDir {
    /// Uses `explicit` if given, else a fresh `<command>-<time>-<pid>`
    /// directory under `$OVB_OUTPUT_DIR` (or `./ovb-runs`).
    pub fn create(command: &'static str, explicit: Option<&Path>) -> Result<Self> {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let dir = match explicit {
            Some(d) => d.to_path_buf(),
            None => {
                let base = std::env::var_os(OUTPUT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("ovb-runs"));
                base.join(format!("{command}-{started_unix}-{}", std::process::id()))
            }
        };
        fs::create_dir_all(&dir)?;
        Ok(RunDir {
            dir,
            command,
            outputs: Vec::new(),
            started: Instant::now(),
            started_unix,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of an output file, recorded in the manifest.
    pub fn output(&mut self, name: impl Into<String>) -> PathBuf {
        let name = name.into();
        let path = self.dir.join(&name);
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
        path
    }

    pub fn elapsed_secs(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn finish(&self, status: &str, exit_code: i32, error: Option<&str>) -> Result<()> {
        let manifest = RunManifest {
            tool: "ovb",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            args: std::env::args().skip(1).collect(),
            status,
            exit_code,
            error,
            started_unix_secs: self.started_unix,
            wall_time_secs: self.elapsed_secs(),
            outputs: &self.outputs,
        };
        write_atomic(
            &self.dir.join(RUN_MANIFEST),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }
}
