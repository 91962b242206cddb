//! Run directories and atomically written report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Failure;

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `<out>/<subcommand>-<timestamp>`, adding a counter when a run
    /// with the same timestamp already exists.
    pub fn create(out: &Path, subcommand: &str) -> Result<Self, Failure> {
        fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S%.3f").to_string();
        for n in 0.. {
            let name = if n == 0 {
                format!("{subcommand}-{stamp}")
            } else {
                format!("{subcommand}-{stamp}-{n}")
            };
            let path = out.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(Self { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Failure::Runtime(format!("cannot create {}: {e}", path.display()))),
            }
        }
        unreachable!()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let target = self.file(name);
        write_atomic(&target, bytes)?;
        Ok(target)
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf, Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Failure::Runtime(format!("cannot encode {name}: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Runtime(format!("cannot encode {name}: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }
}

/// Writes to a hidden sibling file and renames it over `target`, so readers
/// never observe a partial file.
pub fn write_atomic(target: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = target.with_file_name(format!(".{name}.tmp"));
    let fail = |e: std::io::Error| Failure::Runtime(format!("cannot write {}: {e}", target.display()));
    let mut f = fs::File::create(&tmp).map_err(fail)?;
    f.write_all(bytes).map_err(fail)?;
    f.sync_all().map_err(fail)?;
    drop(f);
    fs::rename(&tmp, target).map_err(fail)
}
