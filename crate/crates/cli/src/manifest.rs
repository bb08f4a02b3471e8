use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use calovae_core::Result;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Record of one command run. Artifact paths are relative to the output
/// directory; nothing that depends on the thread count or wall clock is
/// recorded.
pub struct Manifest {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<(String, String)>,
    artifacts: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, config_json: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config_hash: sha256_hex(config_json.as_bytes()),
            seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let hash = if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
            entries.sort();
            let mut all = String::new();
            for e in entries.iter().filter(|e| e.is_file()) {
                let _ = writeln!(all, "{} {}", e.file_name().unwrap().to_string_lossy(), sha256_hex(&fs::read(e)?));
            }
            sha256_hex(all.as_bytes())
        } else {
            sha256_hex(&fs::read(path)?)
        };
        self.inputs.push((name, hash));
        Ok(())
    }

    /// Records a file already written under `out`.
    pub fn artifact(&mut self, out: &Path, rel: &str) -> Result<()> {
        let hash = sha256_hex(&fs::read(out.join(rel))?);
        self.artifacts.push((rel.to_string(), hash));
        Ok(())
    }

    /// Records an artifact by the checksum of a reproducible rendering of it.
    pub fn artifact_with(&mut self, rel: &str, note: &str, content: &[u8]) {
        self.artifacts.push((format!("{rel} ({note})"), sha256_hex(content)));
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# calovae run manifest\n");
        let _ = writeln!(s, "command\t{}", self.command);
        let _ = writeln!(s, "version\t{}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "config_sha256\t{}", self.config_hash);
        match self.seed {
            Some(seed) => {
                let _ = writeln!(s, "seed\t{seed}");
            }
            None => s.push_str("seed\t-\n"),
        }
        for (name, hash) in &self.inputs {
            let _ = writeln!(s, "input\t{name}\t{hash}");
        }
        for (name, hash) in &self.artifacts {
            let _ = writeln!(s, "artifact\t{name}\t{hash}");
        }
        s
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        fs::write(out.join(MANIFEST_FILE), self.render())?;
        Ok(())
    }
}
