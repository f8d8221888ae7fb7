//! CSV readers/writers and the output-directory lock.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! rereading a file reproduces the exact bits and rerunning a command
//! overwrites its outputs byte-identically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Points with their class labels: header `x0,x1,label`.
pub fn points_csv(points: &Array2<f64>, labels: &[usize]) -> String {
    let d = points.ncols();
    let mut out = String::new();
    for k in 0..d {
        out.push_str(&format!("x{k},"));
    }
    out.push_str("label\n");
    for i in 0..points.nrows() {
        for k in 0..d {
            out.push_str(&fmt_f64(points[[i, k]]));
            out.push(',');
        }
        out.push_str(&format!("{}\n", labels[i]));
    }
    out
}

/// One label per row: header `label`.
pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("label\n");
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    out
}

pub fn read_labels_csv(text: &str) -> Result<Vec<usize>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "label" => {}
        Some((_, header)) => return Err(format!("line 1: expected header 'label', got '{header}'")),
        None => return Err("empty labels file".into()),
    }
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(
            line.parse::<usize>()
                .map_err(|_| format!("line {}: bad label '{line}'", idx + 1))?,
        );
    }
    Ok(labels)
}

/// Feature table: header `node,f0,...`.
pub fn features_csv(raw: &Array2<f64>) -> String {
    let (n, m) = raw.dim();
    let mut out = String::from("node");
    for k in 0..m {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&format!("{i}"));
        for k in 0..m {
            out.push(',');
            out.push_str(&fmt_f64(raw[[i, k]]));
        }
        out.push('\n');
    }
    out
}

pub fn read_features_csv(text: &str) -> Result<Array2<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty features file")?;
    if !header.trim_start().starts_with("node") {
        return Err(format!("line 1: expected header 'node,f0,...', got '{header}'"));
    }
    let mut width = None;
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(format!("line {}: expected 'node,f0,...', got '{line}'", idx + 1));
        }
        let vals: Result<Vec<f64>, String> = fields[1..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("line {}: bad number '{f}'", idx + 1))
            })
            .collect();
        let vals = vals?;
        if let Some(w) = width {
            if vals.len() != w {
                return Err(format!("line {}: inconsistent column count", idx + 1));
            }
        } else {
            width = Some(vals.len());
        }
        rows.push(vals);
    }
    let m = width.ok_or("features file has no data rows")?;
    let n = rows.len();
    let mut out = Array2::<f64>::zeros((n, m));
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            out[[i, k]] = *v;
        }
    }
    Ok(out)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
    }
    let mut f =
        fs::File::create(path).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Exclusive lock on an output directory; at most one command writes to a
/// directory at a time. The lock file is removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, String> {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        let path = dir.join(".mpcl.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "pid={}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(format!(
                "output directory {} is locked by another run ({} exists); remove the file if the run is dead",
                dir.display(),
                path.display()
            )),
            Err(e) => Err(format!("cannot lock {}: {e}", dir.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
