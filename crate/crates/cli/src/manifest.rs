//! Run manifests: what was run, with which seed and config, on which inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha1::{Digest, Sha1};

use crate::error::CliError;

/// Hash of `bytes` as git stores a blob: SHA-1 over `"blob <len>\0"` plus
/// the content.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::new(crate::error::Kind::Io, format!("{}: {e}", path.display())))?;
    Ok(git_blob_hash(&bytes))
}

#[derive(Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            seed,
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(path.into());
        self
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    pub fn config(&mut self, snapshot: String) -> &mut Self {
        self.config = Some(snapshot);
        self
    }

    pub fn render(&self) -> Result<String, CliError> {
        let mut s = String::new();
        let args: Vec<String> = std::env::args().collect();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "arguments = {}", args.join(" "));
        let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        for p in &self.inputs {
            let _ = writeln!(s, "input {} {}", hash_file(p)?, p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output {} {}", hash_file(p)?, p.display());
        }
        if let Some(cfg) = &self.config {
            let _ = write!(s, "\n[config]\n{cfg}");
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = self.render()?;
        std::fs::write(path, text)
            .map_err(|e| CliError::new(crate::error::Kind::Io, format!("{}: {e}", path.display())))
    }
}

/// Manifest location for a single output file.
pub fn manifest_beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    output.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_hash_object() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(
            git_blob_hash(b"hello\n"),
            "ce013625030ba8dba906f756967f9e9ca394464a"
        );
        assert_eq!(
            git_blob_hash(b""),
            "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
        );
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            manifest_beside(Path::new("out/report.csv")),
            PathBuf::from("out/report.csv.manifest")
        );
    }
}
