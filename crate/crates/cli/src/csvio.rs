//! CSV writing/reading with `#`-prefixed manifest comment lines.
//!
//! Every report the binary emits goes through [`write_csv`], so each file
//! carries the same manifest block (command echo, config, seed, timestamp,
//! git describe, output list) followed by one header row and plain UTF-8
//! comma-separated data rows.  [`read_csv`] parses the same shape back and
//! is what the golden-file tests pin the format with.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Pinned column layouts, one per report kind.
pub const REPORT_HEADER: &[&str] = &[
    "iter", "mu", "rel_p", "rel_d", "rel_u", "rho", "delta", "rank", "pcg_predictor",
    "pcg_corrector", "pcg_centering", "matvecs_total", "build_s", "pcg_s", "total_s", "alpha_p",
    "alpha_d",
];
pub const COND_HEADER: &[&str] = &["stage", "rank", "kappa_plain", "kappa_nys", "kappa_chol"];
pub const RANK_TIME_HEADER: &[&str] = &["rank", "repeat", "total_s", "pcg_s", "build_s", "other_s"];
pub const COMPARE_HEADER: &[&str] = &["method", "outer_iters", "sum_inner_iters", "time_s", "rank"];

/// Provenance block written as comments at the top of every CSV.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    /// Full command line as invoked.
    pub command: String,
    /// One-line echo of the resolved configuration.
    pub config: String,
    pub seed: u64,
    /// RFC 3339, UTC.
    pub timestamp: String,
    /// `git describe` of the working tree, or "unknown".
    pub git: String,
    /// Paths of every file the command writes.
    pub outputs: Vec<String>,
    /// Command-specific key/value annotations (status, objective, ...).
    pub extra: Vec<(String, String)>,
}

impl Manifest {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("# command: {}", self.command),
            format!("# config: {}", self.config),
            format!("# seed: {}", self.seed),
            format!("# timestamp: {}", self.timestamp),
            format!("# git: {}", self.git),
        ];
        for path in &self.outputs {
            out.push(format!("# output: {path}"));
        }
        for (key, value) in &self.extra {
            out.push(format!("# {key}: {value}"));
        }
        out
    }
}

/// A parsed report: comment block, header row, data rows.
#[derive(Debug)]
#[allow(dead_code)] // reader half; used by the golden-file tests
pub struct CsvFile {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvFile {
    /// Value of a `# key: value` manifest line, if present.
    #[allow(dead_code)] // reader half; used by the golden-file tests
    pub fn manifest_value(&self, key: &str) -> Option<&str> {
        let prefix = format!("# {key}: ");
        self.comments.iter().find_map(|line| line.strip_prefix(&prefix))
    }

    /// Index of a named column.
    #[allow(dead_code)] // reader half; used by the golden-file tests
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn write_csv(
    path: &Path,
    manifest: &Manifest,
    header: &[&str],
    rows: &[Vec<String>],
) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for line in manifest.lines() {
        writeln!(out, "{line}")?;
    }
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "ragged CSV row");
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}

#[allow(dead_code)] // reader half; used by the golden-file tests
pub fn read_csv(path: &Path) -> io::Result<CsvFile> {
    let reader = BufReader::new(File::open(path)?);
    let mut comments = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if header.is_some() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("line {}: comment after the header block", lineno + 1),
                ));
            }
            comments.push(line);
            continue;
        }
        let cells: Vec<String> = line.split(',').map(str::to_string).collect();
        match &header {
            None => header = Some(cells),
            Some(h) => {
                if cells.len() != h.len() {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("line {}: {} cells, header has {}", lineno + 1, cells.len(), h.len()),
                    ));
                }
                rows.push(cells);
            }
        }
    }
    let header = header.ok_or_else(|| {
        io::Error::new(io::ErrorKind::InvalidData, "no header row found".to_string())
    })?;
    Ok(CsvFile { comments, header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_manifest() -> Manifest {
        Manifest {
            command: "nysqp solve --qp-csv problem.csv".into(),
            config: "precond=nystrom rank=10 tol=1e-8".into(),
            seed: 7,
            timestamp: "2026-01-01T00:00:00Z".into(),
            git: "deadbee".into(),
            outputs: vec!["report.csv".into()],
            extra: vec![("status".into(), "optimal".into())],
        }
    }

    #[test]
    fn manifest_lines_are_comments_in_fixed_order() {
        let lines = sample_manifest().lines();
        assert!(lines.iter().all(|l| l.starts_with("# ")));
        assert_eq!(lines[0], "# command: nysqp solve --qp-csv problem.csv");
        assert_eq!(lines[2], "# seed: 7");
        assert_eq!(lines[5], "# output: report.csv");
        assert_eq!(lines[6], "# status: optimal");
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let rows = vec![
            vec!["0".to_string(), "1.5".to_string()],
            vec!["1".to_string(), "0.25".to_string()],
        ];
        write_csv(&path, &sample_manifest(), &["iter", "mu"], &rows).unwrap();
        let parsed = read_csv(&path).unwrap();
        assert_eq!(parsed.header, vec!["iter", "mu"]);
        assert_eq!(parsed.rows, rows);
        assert_eq!(parsed.manifest_value("seed"), Some("7"));
        assert_eq!(parsed.manifest_value("status"), Some("optimal"));
        assert_eq!(parsed.column("mu"), Some(1));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        assert!(read_csv(&path).is_err());
    }
}
