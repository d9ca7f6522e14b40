use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes via a sibling temp file and a rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Serializes `rows` of reals as plain CSV with shortest round-trip formatting.
pub fn matrix_csv(m: &crate::autodiff::Matrix) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<crate::autodiff::Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| {
                c.trim().parse::<f64>().map_err(|_| crate::Error::Ingestion {
                    row: i + 1,
                    column: String::new(),
                    msg: format!("cannot parse `{c}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(crate::Error::Argument("ragged matrix csv".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = if cols == 0 { 0 } else { flat.len() / cols };
    crate::autodiff::Matrix::from_shape_vec((n, cols), flat)
        .map_err(|e| crate::Error::Argument(e.to_string()))
}
