use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use crate::transferability::{slc_svg, SlcReport};
use crate::{Error, Result};

/// Reports gathered from run directories plus the files that failed to
/// parse.
#[derive(Clone, Debug, Default)]
pub struct Comparison {
    pub rows: Vec<(PathBuf, SlcReport)>,
    pub failures: Vec<(PathBuf, String)>,
}

/// Every `report.json` in `dir` (a report itself, an SLC directory, or a
/// run directory holding SLC directories).
fn report_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let direct = dir.join("report.json");
    if direct.exists() {
        return Ok(vec![direct]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path().join("report.json")))
        .filter(|p| p.exists())
        .collect();
    out.sort();
    Ok(out)
}

/// Collects reports; unreadable or corrupt ones are listed as failures.
pub fn collect_reports(dirs: &[PathBuf]) -> Result<Comparison> {
    let mut cmp = Comparison::default();
    for dir in dirs {
        let files = report_files(dir)?;
        if files.is_empty() {
            cmp.failures.push((dir.clone(), "no report.json found".into()));
        }
        for f in files {
            let parsed = fs::read_to_string(&f)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<SlcReport>(&t).map_err(|e| e.to_string()));
            match parsed {
                Ok(r) => cmp.rows.push((f, r)),
                Err(e) => cmp.failures.push((f, e)),
            }
        }
    }
    Ok(cmp)
}

pub const REPORT_COLUMNS: [&str; 9] =
    ["run", "pair", "method", "scheme", "lr", "sparsity", "source_accuracy", "auc", "path"];

fn fields(path: &Path, r: &SlcReport) -> [String; 9] {
    [
        r.config_hash.chars().take(16).collect(),
        r.pair.clone(),
        r.label.clone(),
        r.scheme.clone(),
        r.lr.to_string(),
        format!("{:.4}", r.sparsity),
        r.source_accuracy.map_or_else(|| "-".into(), |a| format!("{a:.4}")),
        format!("{:.4}", r.auc),
        path.display().to_string(),
    ]
}

impl Comparison {
    /// Report paths under the CSV's directory are written relative to it,
    /// so a run directory's table does not depend on where the run lives.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(REPORT_COLUMNS)?;
        for (p, r) in &self.rows {
            w.write_record(fields(p.strip_prefix(base).unwrap_or(p), r))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width table, one row per report, then any failures.
    pub fn table(&self) -> String {
        let rows: Vec<[String; 9]> = self.rows.iter().map(|(p, r)| fields(p, r)).collect();
        let shown = 8;
        let mut width = [0usize; 8];
        for (i, h) in REPORT_COLUMNS[..shown].iter().enumerate() {
            width[i] = h.len();
        }
        for row in &rows {
            for i in 0..shown {
                width[i] = width[i].max(row[i].chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let padded: Vec<String> = cells.iter().zip(width).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(REPORT_COLUMNS[..shown].to_vec(), &mut out);
        for row in &rows {
            line(row[..shown].iter().map(String::as_str).collect(), &mut out);
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\nfailures:");
            for (p, e) in &self.failures {
                let _ = writeln!(out, "  {}: {e}", p.display());
            }
        }
        out
    }
}

/// Re-renders the SVG figure of a report; writes next to it unless `out`
/// is given.
pub fn plot_report(report_path: &Path, out: Option<&Path>) -> Result<PathBuf> {
    if !report_path.exists() {
        return Err(Error::MissingPath(report_path.to_path_buf()));
    }
    let report: SlcReport = serde_json::from_str(&fs::read_to_string(report_path)?)
        .map_err(|e| Error::format(report_path, e.to_string()))?;
    let result = report.result()?;
    let target = match out {
        Some(p) => p.to_path_buf(),
        None => report_path.with_file_name("slc.svg"),
    };
    let title = format!("{} {} ({})", report.label, report.scheme, report.pair);
    fs::write(&target, slc_svg(&result, &title))?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(label: &str, auc: f64) -> SlcReport {
        SlcReport {
            label: label.into(),
            pair: "a->b".into(),
            config_hash: "0123456789abcdef0123".into(),
            scheme: "FF".into(),
            lr: 1e-3,
            seeds: vec![0],
            grid: vec![10, 100],
            transfer_mean: vec![0.5, 0.6],
            transfer_std: vec![0.0, 0.0],
            scratch_mean: vec![0.4, 0.6],
            scratch_std: vec![0.0, 0.0],
            auc,
            sparsity: 0.0,
            source_accuracy: Some(0.9),
        }
    }

    #[test]
    fn tables_rows_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        for (name, label) in [("slc-a", "unpruned"), ("slc-b", "ntp")] {
            let d = dir.path().join(name);
            fs::create_dir(&d).unwrap();
            fs::write(d.join("report.json"), serde_json::to_string(&report(label, 0.05)).unwrap()).unwrap();
        }
        let bad = dir.path().join("slc-c");
        fs::create_dir(&bad).unwrap();
        fs::write(bad.join("report.json"), "{ not json").unwrap();
        let cmp = collect_reports(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        assert_eq!(cmp.failures.len(), 1);
        let table = cmp.table();
        assert!(table.contains("unpruned") && table.contains("ntp"));
        assert!(table.contains("failures:"));
        let csv_path = dir.path().join("merged.csv");
        cmp.write_csv(&csv_path).unwrap();
        assert_eq!(fs::read_to_string(csv_path).unwrap().lines().count(), 3);
    }

    #[test]
    fn plot_rerenders() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.json");
        fs::write(&p, serde_json::to_string(&report("x", 0.05)).unwrap()).unwrap();
        let svg = plot_report(&p, None).unwrap();
        assert!(fs::read_to_string(svg).unwrap().contains("<svg"));
        assert!(plot_report(&dir.path().join("none.json"), None).is_err());
    }
}
