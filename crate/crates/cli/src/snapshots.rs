//! Serialized normal-equations snapshots for the condition study.
//!
//! A snapshot stores the diagonal scaling and regularization weights the
//! solver had when it first reached a tolerance stage — never the matrix
//! itself.  Replaying rebuilds the operator from the problem plus these
//! diagonals, which keeps files small and the study honest to the
//! matrix-free design.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredSnapshot {
    /// Tolerance stage that triggered the capture.
    pub stage: f64,
    /// Outer iteration the stage was reached at.
    pub iter: usize,
    pub rho: f64,
    pub delta: f64,
    /// Diagonal of Theta^-1 at the capture point, length n.
    pub theta_inv: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotFile {
    /// Identity of the problem the snapshots came from; replays must match.
    pub problem: String,
    pub snapshots: Vec<StoredSnapshot>,
}

pub fn save(path: &Path, file: &SnapshotFile) -> anyhow::Result<()> {
    let out = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(out, file)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> anyhow::Result<SnapshotFile> {
    let reader = BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    serde_json::from_reader(reader).with_context(|| format!("parsing {}", path.display()))
}
