//! Output directory handling and the JSON report envelope.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use metaimpact::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub struct OutDir {
    dir: PathBuf,
    force: bool,
}

impl OutDir {
    /// Create `dir` if needed and refuse, unless `force`, when any of
    /// `names` already exists in it. Checked up front so a refused run
    /// writes nothing.
    pub fn prepare(dir: &Path, force: bool, names: &[&str]) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        if !force {
            let taken: Vec<&str> = names.iter().copied().filter(|n| dir.join(n).exists()).collect();
            if !taken.is_empty() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!("{} already holds {}; pass --force to overwrite", dir.display(), taken.join(", ")),
                )));
            }
        }
        Ok(Self { dir: dir.to_path_buf(), force })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.dir.join(name);
        if !self.force && p.exists() {
            return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::AlreadyExists, p.display().to_string())));
        }
        Ok(BufWriter::new(File::create(p)?))
    }

    /// Write a CSV through one of the core writers.
    pub fn csv<F>(&self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(BufWriter<File>) -> Result<()>,
    {
        write(self.create(name)?)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Common header of every report: enough to rerun the command.
pub fn envelope(command: &str, cfg: &RunConfig, input: Option<&[PathBuf]>, tranche: Option<&str>) -> Value {
    json!({
        "tool": "metaimpact",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "generated_at": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "seed": cfg.seed,
        "input": input.map(|v| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>()),
        "tranche": tranche,
        "config": cfg,
    })
}

/// `{"ok": value}` or `{"error": message, "kind": ...}`.
pub fn outcome<T: Serialize>(r: &Result<T>) -> Value {
    match r {
        Ok(v) => json!({ "ok": v }),
        Err(e) => json!({ "error": e.to_string(), "kind": format!("{:?}", e.kind()).to_lowercase() }),
    }
}

pub fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}
