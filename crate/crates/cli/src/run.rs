//! Run directories.
//!
//! A command writes into a hidden staging directory next to its target. On
//! success the staging directory is renamed onto the target; on failure it is
//! moved under `<parent>/quarantine/` with the error attached, so a failed run
//! never leaves files where a valid run would be.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    log: BufWriter<File>,
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

impl RunDir {
    /// Refuses a target that already holds files.
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            let occupied = fs::read_dir(target)
                .with_context(|| format!("reading {}", target.display()))?
                .next()
                .is_some();
            if occupied {
                bail!(
                    "output directory {} is not empty; refusing to overwrite",
                    target.display()
                );
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let name = target
            .file_name()
            .context("output path has no final component")?
            .to_string_lossy()
            .into_owned();
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
        let log = File::create(staging.join("log.jsonl"))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            log: BufWriter::new(log),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    /// Appends one record to `log.jsonl` (keys sorted). Records carry no
    /// wall-clock fields, so identical runs write identical logs.
    pub fn log(&mut self, event: &str, fields: Value) -> Result<()> {
        let mut record = serde_json::Map::new();
        record.insert("event".into(), json!(event));
        if let Value::Object(map) = fields {
            record.extend(map);
        }
        serde_json::to_writer(&mut self.log, &record)?;
        self.log.write_all(b"\n")?;
        self.log.flush()?;
        Ok(())
    }

    fn commit(mut self) -> Result<PathBuf> {
        self.log.flush()?;
        if self.target.exists() {
            fs::remove_dir(&self.target)
                .with_context(|| format!("replacing empty {}", self.target.display()))?;
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving results to {}", self.target.display()))?;
        Ok(self.target)
    }

    fn quarantine(mut self, error: &anyhow::Error) -> Result<PathBuf> {
        let _ = self.log("failed", json!({ "error": format!("{error:#}") }));
        let _ = self.log.flush();
        fs::write(self.staging.join("error.txt"), format!("{error:?}\n"))?;
        let parent = self
            .staging
            .parent()
            .unwrap_or(Path::new("."))
            .join("quarantine");
        fs::create_dir_all(&parent)?;
        let name = self
            .target
            .file_name()
            .map_or("run".into(), |n| n.to_string_lossy().into_owned());
        let dest = parent.join(format!("{name}-{}", timestamp()));
        fs::rename(&self.staging, &dest)?;
        Ok(dest)
    }
}

/// Runs `body` in a fresh run directory at `target`.
pub fn with_run_dir(
    target: &Path,
    body: impl FnOnce(&mut RunDir) -> Result<()>,
) -> Result<PathBuf> {
    let mut dir = RunDir::create(target)?;
    dir.log("start", json!({}))?;
    match body(&mut dir) {
        Ok(()) => {
            dir.log("done", json!({}))?;
            dir.commit()
        }
        Err(e) => match dir.quarantine(&e) {
            Ok(q) => Err(e.context(format!("partial outputs quarantined in {}", q.display()))),
            Err(qe) => Err(e.context(format!("quarantine also failed: {qe:#}"))),
        },
    }
}
