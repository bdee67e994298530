use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

const LOCK_NAME: &str = ".tvstab.lock";

/// Output directory held exclusively for the lifetime of the value.
pub struct OutDir {
    path: PathBuf,
    timestamp: bool,
}

impl OutDir {
    pub fn open(path: &Path, timestamp: bool) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => writeln!(f, "{}", std::process::id())?,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("{} is locked by another run (remove {} if stale)", path.display(), lock.display())
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        Ok(Self { path: path.to_path_buf(), timestamp })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.file(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    /// Pretty JSON with sorted keys; adds `generated_unix` unless timestamps
    /// are disabled.
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let (true, Value::Object(map)) = (self.timestamp, &mut v) {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            map.insert("generated_unix".into(), secs.into());
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_NAME));
    }
}
