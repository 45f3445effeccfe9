//! Embedding dumps: CSV with header `sample_id,label,session,f0,…,f{d-1}`,
//! one row per sample. Values use the shortest representation that parses
//! back to the same `f32`.

use std::path::Path;

use savc_core::Matrix;

use crate::error::{Error, Result};

/// One dumped sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub sample_id: usize,
    pub label: usize,
    pub session: usize,
    pub features: Vec<f32>,
}

pub fn write_csv(w: impl std::io::Write, rows: &[EmbeddingRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.features.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["sample_id".to_string(), "label".into(), "session".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    out.write_record(&header).map_err(|e| Error::Input(e.to_string()))?;
    for r in rows {
        if r.features.len() != dim {
            return Err(Error::Input(format!("sample {} has {} features, expected {dim}", r.sample_id, r.features.len())));
        }
        let mut rec = vec![r.sample_id.to_string(), r.label.to_string(), r.session.to_string()];
        rec.extend(r.features.iter().map(f32::to_string));
        out.write_record(&rec).map_err(|e| Error::Input(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Input(e.to_string()))
}

pub fn dump(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), rows).map_err(|e| match e {
        Error::Input(m) => Error::format(path, m),
        e => e,
    })
}

pub fn load(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header = reader.headers().map_err(|e| Error::format(path, e))?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "label" || &header[2] != "session" {
        return Err(Error::format(path, "header must start with sample_id,label,session"));
    }
    let dim = header.len() - 3;
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 1));
        let int = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| bad(what));
        let features = (0..dim).map(|i| rec[3 + i].parse::<f32>().map_err(|_| bad("feature"))).collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow { sample_id: int(0, "sample_id")?, label: int(1, "label")?, session: int(2, "session")?, features });
    }
    Ok(rows)
}

/// Feature matrix (as `f64`) and labels of loaded rows.
pub fn to_matrix(rows: &[EmbeddingRow]) -> Result<(Matrix<f64>, Vec<usize>)> {
    let dim = rows.first().map_or(0, |r| r.features.len());
    let data: Vec<f64> = rows.iter().flat_map(|r| r.features.iter().map(|&v| v as f64)).collect();
    Ok((Matrix::from_vec(rows.len(), dim, data)?, rows.iter().map(|r| r.label).collect()))
}
