use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Ingested per-utterance feature vectors (x-vectors, ComParE functionals).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| Error::FeatureTable {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (id, v) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Read a CSV whose first column is `id` and whose remaining columns are named
/// numeric features.
pub fn ingest_feature_table(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<FeatureTable> {
    let path = path.as_ref();
    let fail = |message: String| Error::FeatureTable {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(FeatureTable::default());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("id") {
        return Err(fail("first column must be `id`".into()));
    }
    let names: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if let Some(d) = expected_dim {
        if names.len() != d {
            return Err(fail(format!(
                "expected {d} feature columns, header has {}",
                names.len()
            )));
        }
    }
    let mut rows = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(fail(format!(
                "row {row} has {} values, expected {}",
                rec.len().saturating_sub(1),
                names.len()
            )));
        }
        let id = rec[0].trim().to_string();
        let values = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(col, cell)| {
                cell.trim().parse::<f64>().map_err(|_| {
                    fail(format!(
                        "non-numeric value {cell:?} at row {row}, column {}",
                        col + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if rows.insert(id.clone(), values).is_some() {
            return Err(fail(format!("duplicate id {id:?}")));
        }
    }
    Ok(FeatureTable { names, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_text(rows: usize, dim: usize) -> String {
        let mut s = String::from("id");
        for j in 0..dim {
            s.push_str(&format!(",f{j}"));
        }
        s.push('\n');
        for i in 0..rows {
            s.push_str(&format!("u{i}"));
            for j in 0..dim {
                s.push_str(&format!(",{}", (i * dim + j) as f64 * 0.5));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn compare_sized_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, table_text(3, 6373)).unwrap();
        let t = ingest_feature_table(&p, Some(6373)).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.rows.values().all(|v| v.len() == 6373));
        assert_eq!(t.rows["u1"][2], (6373 + 2) as f64 * 0.5);
    }

    #[test]
    fn wrong_dimension_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, table_text(2, 511)).unwrap();
        assert!(ingest_feature_table(&p, Some(512)).is_err());
        std::fs::write(&p, "id,a,b\nu1,1,2\nu2,3\n").unwrap();
        let e = ingest_feature_table(&p, None).unwrap_err().to_string();
        assert!(e.contains("row 2"), "{e}");
    }

    #[test]
    fn non_numeric_cell_reports_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "id,a,b\nu1,1,2\nu2,3,oops\n").unwrap();
        let e = ingest_feature_table(&p, None).unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("column 2"), "{e}");
    }

    #[test]
    fn empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "").unwrap();
        assert!(ingest_feature_table(&p, None).unwrap().is_empty());
        std::fs::write(&p, "id,a\n").unwrap();
        let t = ingest_feature_table(&p, None).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.names, ["a"]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut t = FeatureTable {
            names: vec!["a".into(), "b".into()],
            ..Default::default()
        };
        t.rows.insert("x".into(), vec![0.1, -2.5e-7]);
        t.write_csv(&p).unwrap();
        assert_eq!(ingest_feature_table(&p, Some(2)).unwrap(), t);
    }
}
