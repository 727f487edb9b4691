//! Run manifests: everything needed to reproduce a command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<InputDigest, Failure> {
    let data = fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        bytes: data.len() as u64,
        sha256: format!("{:x}", Sha256::digest(&data)),
    })
}

/// No timestamps or host details, so reruns write identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: C,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &'static str, seed: u64, config: C) -> Self {
        Self { command, version: wcca::VERSION, seed, config, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        write_json(&dir.join("manifest.json"), self)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Tracks files written into the output directory.
pub struct OutDir {
    pub root: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Path of `name` inside the directory, recorded as an output.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }
}
