//! Collate curve files from result directories into one table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};

/// Every `curves/*.csv` below `root`, sorted by path.
fn curve_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv")
                && path.parent().and_then(Path::file_name).is_some_and(|n| n == "curves")
            {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Write `experiment,method,step,mean_regret,sd_of_mean,n_reps` rows for
/// every curve under `roots`. `experiment` is the result directory relative
/// to its root; `method` is the curve file stem. Returns the row count.
pub fn collate<W: Write>(roots: &[PathBuf], writer: W) -> Result<usize> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["experiment", "method", "step", "mean_regret", "sd_of_mean", "n_reps"])?;
    let mut rows = 0;
    for root in roots {
        let files = curve_files(root)?;
        ensure!(!files.is_empty(), "no curve files under {}", root.display());
        for file in files {
            let exp_dir = file
                .parent()
                .and_then(Path::parent)
                .context("curve file without experiment directory")?;
            let rel = exp_dir.strip_prefix(root).unwrap_or(exp_dir);
            let experiment = if rel.as_os_str().is_empty() {
                root.file_name()
                    .map_or_else(|| root.display().to_string(), |n| n.to_string_lossy().into_owned())
            } else {
                format!(
                    "{}/{}",
                    root.file_name()
                        .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
                    rel.display()
                )
            };
            let method = file
                .file_stem()
                .map(|s| s.to_string_lossy().replace('_', "+"))
                .unwrap_or_default();
            let mut r = csv::Reader::from_path(&file).with_context(|| format!("reading {}", file.display()))?;
            let header = r.headers()?.clone();
            ensure!(
                header.iter().collect::<Vec<_>>() == ["step", "mean_regret", "sd_of_mean", "n_reps"],
                "{}: unexpected header {:?}",
                file.display(),
                header
            );
            for rec in r.records() {
                let rec = rec.with_context(|| format!("reading {}", file.display()))?;
                let mut row = vec![experiment.as_str(), method.as_str()];
                row.extend(rec.iter());
                w.write_record(&row)?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}
