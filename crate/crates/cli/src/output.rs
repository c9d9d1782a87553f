//! Output staging. Files are written to a temporary directory next to the
//! destination and moved into place only after every stage succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const OUT_DIR_ENV: &str = "BOTFLOW_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "botflow-out";

/// `--out`, else `$BOTFLOW_OUT_DIR`, else `./botflow-out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub struct Staged {
    dest: PathBuf,
    dir: tempfile::TempDir,
    files: Vec<PathBuf>,
}

impl Staged {
    pub fn new(dest: &Path) -> Result<Self> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".botflow-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating staging directory in {}", parent.display()))?;
        Ok(Staged { dest: dest.to_path_buf(), dir, files: Vec::new() })
    }

    /// Stages `contents` under the relative path `name`.
    pub fn write(&mut self, name: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
        let name = name.as_ref();
        let path = self.dir.path().join(name);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", name.display()))?;
        self.files.push(name.to_path_buf());
        Ok(())
    }

    /// Moves staged files into the destination. A missing destination is
    /// created by renaming the whole staging directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let Staged { dest, dir, files } = self;
        let out: Vec<PathBuf> = files.iter().map(|f| dest.join(f)).collect();
        if !dest.exists() {
            let staged = dir.keep();
            fs::rename(&staged, &dest).with_context(|| format!("moving outputs to {}", dest.display()))?;
            return Ok(out);
        }
        for f in &files {
            let target = dest.join(f);
            if let Some(p) = target.parent() {
                fs::create_dir_all(p)?;
            }
            fs::rename(dir.path().join(f), &target)
                .with_context(|| format!("moving {}", target.display()))?;
        }
        Ok(out)
    }
}
