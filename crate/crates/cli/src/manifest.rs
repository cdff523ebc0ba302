//! `manifest.json`: what ran, with which configuration, and the SHA-256 of
//! every file read or written.

use std::collections::BTreeMap;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        bytes += n as u64;
    }
    let sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest { path: path.to_path_buf(), bytes, sha256 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub core_version: String,
    pub seed: Option<u64>,
    pub workers: usize,
    pub config: serde_json::Value,
    /// Seconds per stage, in the order they ran.
    pub timings: Vec<(String, f64)>,
    pub inputs: Vec<FileDigest>,
    /// Outputs are listed relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub notes: BTreeMap<String, String>,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, workers: usize) -> Self {
        Self {
            command: command.to_owned(),
            args,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            core_version: latclass_core::VERSION.to_owned(),
            seed: None,
            workers,
            config: serde_json::Value::Null,
            timings: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: BTreeMap::new(),
            clock: Some(Instant::now()),
        }
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.push((stage.to_owned(), t.elapsed().as_secs_f64()));
        out
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    /// Digests `dir/name` and lists it as `name`.
    pub fn output(&mut self, dir: &Path, name: &str) -> Result<()> {
        let mut d = digest(&dir.join(name))?;
        d.path = PathBuf::from(name);
        self.outputs.push(d);
        Ok(())
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        if let Some(c) = self.clock.take() {
            self.timings.push(("total".to_owned(), c.elapsed().as_secs_f64()));
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        let d = digest(&p).unwrap();
        assert_eq!(d.bytes, 3);
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("out.csv"), "x\n").unwrap();
        let mut m = Manifest::new("fit", vec!["--x".into()], 2);
        m.seed = Some(7);
        m.timed("stage", || ());
        m.output(dir.path(), "out.csv").unwrap();
        let p = m.write(dir.path()).unwrap();
        let back = Manifest::read(&p).unwrap();
        assert_eq!(back.outputs[0].path, PathBuf::from("out.csv"));
        assert_eq!(back.seed, Some(7));
        assert_eq!(back.timings.last().unwrap().0, "total");
    }
}
