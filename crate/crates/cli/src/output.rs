//! Output directories are written under `<dir>.partial` and renamed into
//! place only when the command succeeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use protoalign::{DomainDataset, Matrix};

use crate::manifest::Manifest;

pub struct StagedDir {
    staging: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl StagedDir {
    /// Starts a fresh staging directory for `target`, with the manifest copy
    /// already in it.
    pub fn begin(target: PathBuf, manifest: &Manifest) -> anyhow::Result<StagedDir> {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        let staging = target.with_file_name(name);
        if staging.exists() {
            std::fs::remove_dir_all(&staging).with_context(|| format!("clearing {}", staging.display()))?;
        }
        std::fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
        let dir = StagedDir {
            staging,
            target,
            committed: false,
        };
        dir.write("manifest.toml", manifest.to_toml())?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, body: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.staging.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }

    /// Replaces any previous output at the target path.
    pub fn commit(mut self) -> anyhow::Result<PathBuf> {
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target).with_context(|| format!("replacing {}", self.target.display()))?;
        }
        std::fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving {} into place", self.staging.display()))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}

fn feature_header(d: usize) -> String {
    (0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",")
}

fn push_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

/// `x0,...,x{d-1}[,label]`.
pub fn dataset_csv(features: &Matrix, labels: Option<&[usize]>) -> String {
    let mut out = feature_header(features.cols());
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for r in 0..features.rows() {
        push_row(&mut out, features.row(r));
        if let Some(l) = labels {
            let _ = write!(out, ",{}", l[r]);
        }
        out.push('\n');
    }
    out
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("label\n");
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn source_csv(source: &DomainDataset) -> String {
    dataset_csv(&source.features, source.labels())
}
