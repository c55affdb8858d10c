//! Markdown accuracy tables with one row per source-to-target pair and one
//! column per method, plus a JSON dump of the underlying results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::experiment::{ExperimentResult, Method};
use crate::error::{Error, Result};

/// Percentages to two decimals; `-` where a method was not run on a row.
pub fn render_table(results: &[ExperimentResult]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, Method), f64> = BTreeMap::new();
    for r in results {
        if !rows.contains(&r.name.as_str()) {
            rows.push(&r.name);
        }
        cells.insert((&r.name, r.method), r.overall_mean);
    }
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| results.iter().any(|r| r.method == *m)).collect();

    let mut out = String::from("| Source-Target |");
    for m in &methods {
        out.push_str(&format!(" {} |", m.heading()));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(methods.len()));
    out.push('\n');
    for row in &rows {
        out.push_str(&format!("| {row} |"));
        for m in &methods {
            match cells.get(&(*row, *m)) {
                Some(v) => out.push_str(&format!(" {:.2} |", 100.0 * v)),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out.push_str("| Avg |");
    for m in &methods {
        let col: Vec<f64> = rows.iter().filter_map(|row| cells.get(&(*row, *m)).copied()).collect();
        out.push_str(&format!(" {:.2} |", 100.0 * col.iter().sum::<f64>() / col.len() as f64));
    }
    out.push('\n');
    Ok(out)
}

/// Writes the table to `path` and every result to the `.json` sibling.
/// Returns the JSON path.
pub fn emit_report(results: &[ExperimentResult], path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let table = render_table(results)?;
    std::fs::write(path, table).map_err(|e| Error::io(path, e))?;
    let json = path.with_extension("json");
    std::fs::write(&json, serde_json::to_string_pretty(results)?).map_err(|e| Error::io(&json, e))?;
    Ok(json)
}

/// Reads every `*.json` file in `dir` that holds one result; others are skipped.
pub fn load_results(dir: impl AsRef<Path>) -> Result<Vec<ExperimentResult>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        match serde_json::from_str::<ExperimentResult>(&text) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::experiment::{CellResult, ExperimentConfig};

    fn result(name: &str, method: Method, mean: f64) -> ExperimentResult {
        ExperimentResult {
            name: name.into(),
            method,
            cells: vec![CellResult {
                source: "s".into(),
                target: "t".into(),
                accuracies: vec![mean],
                mean,
                macro_accuracy: mean,
                n_shots: 16,
                n_test: 100,
            }],
            overall_mean: mean,
            overall_macro: mean,
            wall_clock_secs: 0.0,
            config: ExperimentConfig::default(),
        }
    }

    #[test]
    fn renders_stored_value() {
        let t = render_table(&[result("1_{1-5}-2", Method::Lr, 0.1959), result("1_{1-5}-2", Method::Ours, 0.7985)]).unwrap();
        assert!(t.contains("| 1_{1-5}-2 | 19.59 | 79.85 |"), "{t}");
        assert!(t.starts_with("| Source-Target | LR | Ours |"));
    }

    #[test]
    fn single_result_avg_equals_row() {
        let t = render_table(&[result("a", Method::Ss, 0.5)]).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "| a | 50.00 |");
        assert_eq!(lines[3], "| Avg | 50.00 |");
    }

    #[test]
    fn avg_is_unweighted_column_mean() {
        let vals = [0.6334, 0.1, 0.95, 0.42];
        let mut rs: Vec<ExperimentResult> = vals.iter().enumerate().map(|(i, &v)| result(&format!("r{i}"), Method::Lstm, v)).collect();
        rs.push(result("r0", Method::Dnn, 0.2));
        let t = render_table(&rs).unwrap();
        let avg = t.lines().last().unwrap();
        let expect = vals.iter().sum::<f64>() / 4.0 * 100.0;
        assert_eq!(avg, format!("| Avg | 20.00 | {expect:.2} |"));
        assert!(t.contains("| r1 | - | 10.00 |"));
    }

    #[test]
    fn emits_table_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![result("a", Method::Lr, 0.25)];
        let json = emit_report(&rs, dir.path().join("table.md")).unwrap();
        let back: Vec<ExperimentResult> = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(back, rs);
        assert!(emit_report(&[], dir.path().join("x.md")).is_err());
        assert!(emit_report(&rs, dir.path().join("missing/dir/t.md")).is_err());
    }
}
