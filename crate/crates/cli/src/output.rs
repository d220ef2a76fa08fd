//! Atomic file output and the per-directory run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Version tag of every JSON document written by the tool.
pub const SCHEMA: u32 = 1;

/// File name of the manifest inside an output directory.
pub const MANIFEST: &str = "manifest.json";

/// Writes `bytes` to a temporary sibling, flushes it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

/// Serializes `value` as pretty JSON with a trailing newline. Key order follows
/// struct field order, so output is stable.
pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// An output directory that records every file written into it.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    /// Creates the directory (and parents) if needed.
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Path of a file inside the directory.
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Atomically writes a file given relative to the directory.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&p, bytes)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    /// Writes a JSON document.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, &to_json(value)?)
    }

    /// Relative names of the files written so far, in write order.
    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Document version.
    pub schema: u32,
    /// Subcommand name.
    pub command: String,
    /// Full argument vector after the program name.
    pub args: Vec<String>,
    /// Resolved configuration.
    pub config: serde_json::Value,
    /// Every seed the run consumed.
    pub seeds: Vec<u64>,
    /// Named input paths.
    pub inputs: BTreeMap<String, String>,
    /// Output directory as given.
    pub output_dir: String,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// Tool version.
    pub version: String,
    /// Wall-clock duration in seconds.
    pub duration_secs: f64,
}

impl RunManifest {
    /// Writes the manifest as the last file of `out`.
    pub fn write(mut self, out: &mut OutDir) -> Result<()> {
        self.outputs = out.written().to_vec();
        self.outputs.push(MANIFEST.to_string());
        out.write_json(MANIFEST, &self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(&dir.path().join("run")).unwrap();
        out.write("x/y.txt", b"hi").unwrap();
        let m = RunManifest {
            schema: SCHEMA,
            command: "t".into(),
            args: vec![],
            config: serde_json::json!({"b": 1, "a": 2}),
            seeds: vec![1],
            inputs: BTreeMap::new(),
            output_dir: "run".into(),
            outputs: vec![],
            version: "0".into(),
            duration_secs: 0.0,
        };
        m.write(&mut out).unwrap();
        let back: RunManifest =
            serde_json::from_slice(&fs::read(out.path(MANIFEST)).unwrap()).unwrap();
        assert_eq!(
            back.outputs,
            vec!["x/y.txt".to_string(), MANIFEST.to_string()]
        );
        let text = fs::read_to_string(out.path(MANIFEST)).unwrap();
        assert!(text.find("\"schema\"").unwrap() < text.find("\"command\"").unwrap());
    }
}
