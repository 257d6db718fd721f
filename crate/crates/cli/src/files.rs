//! Reading numeric CSV tables and writing outputs.

use std::fs;
use std::path::Path;

use magidyn::ode::Trajectory;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Header and rows of a numeric CSV; blank lines and `#` lines are skipped.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells = line.split(',').map(str::trim);
        match &header {
            None => header = Some(cells.map(String::from).collect()),
            Some(h) => {
                let row = cells
                    .enumerate()
                    .map(|(j, c)| {
                        if c.eq_ignore_ascii_case("nan") || c.is_empty() {
                            Ok(f64::NAN)
                        } else {
                            c.parse::<f64>().map_err(|_| {
                                CliError::Data(format!(
                                    "{}:{}: column {}: '{c}' is not a number",
                                    path.display(),
                                    i + 1,
                                    j + 1
                                ))
                            })
                        }
                    })
                    .collect::<CliResult<Vec<f64>>>()?;
                if row.len() != h.len() {
                    return Err(CliError::Data(format!(
                        "{}:{}: {} cells, header has {}",
                        path.display(),
                        i + 1,
                        row.len(),
                        h.len()
                    )));
                }
                rows.push(row);
            }
        }
    }
    let header =
        header.ok_or_else(|| CliError::Data(format!("{} has no header row", path.display())))?;
    Ok(Table { header, rows })
}

/// A trajectory CSV: a `t` column plus either `<c>_mean` columns (summary files)
/// or one plain column per component.
pub fn read_trajectory(path: &Path) -> CliResult<(Vec<String>, Trajectory)> {
    let table = read_table(path)?;
    let t_col = table.column("t").ok_or_else(|| {
        CliError::Data(format!("{}: no 't' column", path.display()))
    })?;
    let mean_cols: Vec<(usize, String)> = table
        .header
        .iter()
        .enumerate()
        .filter_map(|(j, h)| h.strip_suffix("_mean").map(|c| (j, c.to_string())))
        .collect();
    let cols = if mean_cols.is_empty() {
        table
            .header
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != t_col)
            .map(|(j, h)| (j, h.clone()))
            .collect()
    } else {
        mean_cols
    };
    if cols.is_empty() {
        return Err(CliError::Data(format!("{}: no component columns", path.display())));
    }
    let times: Vec<f64> = table.rows.iter().map(|r| r[t_col]).collect();
    let values = table
        .rows
        .iter()
        .flat_map(|r| cols.iter().map(move |&(j, _)| r[j]))
        .collect();
    let d = cols.len();
    let names = cols.into_iter().map(|(_, n)| n).collect();
    Ok((names, Trajectory::new(times, d, values)))
}

/// Lorenz `(beta, rho, sigma)` draws, row-major, from a CSV with those columns.
pub fn read_lorenz_draws(path: &Path) -> CliResult<Vec<f64>> {
    let table = read_table(path)?;
    let idx: Vec<usize> = ["beta", "rho", "sigma"]
        .iter()
        .map(|n| {
            table.column(n).ok_or_else(|| {
                CliError::Data(format!("{}: missing column '{n}'", path.display()))
            })
        })
        .collect::<CliResult<_>>()?;
    if table.rows.is_empty() {
        return Err(CliError::Data(format!("{}: no draws", path.display())));
    }
    Ok(table
        .rows
        .iter()
        .flat_map(|r| idx.iter().map(move |&j| r[j]))
        .collect())
}

pub fn write_text(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}
