//! Embedding files.
//!
//! Text: a header line `n d`, then `doc_id v1 ... vd` per document, values
//! printed with the shortest representation that reads back exactly.
//!
//! Binary: magic `DOCEMBEM`, version u32, d u64, n u64, then per document
//! its id (u64) and d values (f64), then a u64 checksum. Little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::binio::{checksum, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DOCEMBEM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Text,
    Binary,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ExportFormat::Text),
            "binary" => Ok(ExportFormat::Binary),
            other => Err(Error::Config(format!("unknown embedding format `{other}`"))),
        }
    }
}

pub fn export_embeddings(doc_ids: &[usize], matrix: &Array2<f64>, path: &Path, format: ExportFormat) -> Result<()> {
    if doc_ids.len() != matrix.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} ids for {} embedding rows",
            doc_ids.len(),
            matrix.nrows()
        )));
    }
    let bytes = match format {
        ExportFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "{} {}", matrix.nrows(), matrix.ncols());
            for (id, row) in doc_ids.iter().zip(matrix.rows()) {
                let _ = write!(s, "{id}");
                for v in row {
                    let _ = write!(s, " {v}");
                }
                s.push('\n');
            }
            s.into_bytes()
        }
        ExportFormat::Binary => {
            let mut w = Writer::default();
            w.bytes(MAGIC);
            w.u32(VERSION);
            w.u64(matrix.ncols() as u64);
            w.u64(matrix.nrows() as u64);
            for (id, row) in doc_ids.iter().zip(matrix.rows()) {
                w.u64(*id as u64);
                w.f64s(row.iter());
            }
            w.finish()
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads either format, telling them apart by the magic bytes.
pub fn import_embeddings(path: &Path) -> Result<(Vec<usize>, Array2<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        import_binary(path, &bytes)
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| Error::parse(path, 1, "neither UTF-8 text nor binary embeddings"))?;
        import_text(path, &text)
    }
}

fn import_binary(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, Array2<f64>)> {
    let bad = |m: &str| Error::parse(path, 0, m.to_string());
    let trunc = |_| bad("truncated embedding file");
    let mut r = Reader::new(bytes);
    r.take(MAGIC.len()).map_err(trunc)?;
    let version = r.u32().map_err(trunc)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported embedding file version {version}")));
    }
    let d = r.u64().map_err(trunc)? as usize;
    let n = r.u64().map_err(trunc)? as usize;
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    let mut data = Vec::with_capacity(n.saturating_mul(d).min(1 << 24));
    for _ in 0..n {
        ids.push(r.u64().map_err(trunc)? as usize);
        data.extend(r.f64s(d).map_err(trunc)?);
    }
    let end = r.position();
    let stored = r.u64().map_err(trunc)?;
    if r.remaining() != 0 || stored != checksum(&bytes[..end]) {
        return Err(bad("corrupt embedding file"));
    }
    Ok((ids, Array2::from_shape_vec((n, d), data).expect("length matches shape")))
}

fn import_text(path: &Path, text: &str) -> Result<(Vec<usize>, Array2<f64>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `n d` header"))?;
    let mut h = header.split_whitespace().map(str::parse::<usize>);
    let (n, d) = match (h.next(), h.next(), h.next()) {
        (Some(Ok(n)), Some(Ok(d)), None) => (n, d),
        _ => return Err(Error::parse(path, 1, "bad `n d` header")),
    };
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(path, i + 1, "bad document id"))?;
        let before = data.len();
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad value `{f}`")))?,
            );
        }
        if data.len() - before != d {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {d} values, got {}", data.len() - before),
            ));
        }
        ids.push(id);
    }
    if ids.len() != n {
        return Err(Error::parse(
            path,
            1,
            format!("header says {n} rows, found {}", ids.len()),
        ));
    }
    Ok((ids, Array2::from_shape_vec((n, d), data).expect("length matches shape")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[0.1, -1.0 / 3.0], [1e-300, 12345.678]];
        let ids = vec![4, 9];
        for (name, fmt) in [("e.txt", ExportFormat::Text), ("e.bin", ExportFormat::Binary)] {
            let p = dir.path().join(name);
            export_embeddings(&ids, &m, &p, fmt).unwrap();
            let (ids2, m2) = import_embeddings(&p).unwrap();
            assert_eq!(ids2, ids);
            assert_eq!(m2, m);
        }
    }

    #[test]
    fn empty_set_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let m = Array2::<f64>::zeros((0, 3));
        export_embeddings(&[], &m, &p, ExportFormat::Text).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0 3\n");
        let (ids, back) = import_embeddings(&p).unwrap();
        assert!(ids.is_empty());
        assert_eq!(back.dim(), (0, 3));
        let p = dir.path().join("e.bin");
        export_embeddings(&[], &m, &p, ExportFormat::Binary).unwrap();
        assert_eq!(fs::read(&p).unwrap().len(), 8 + 4 + 8 + 8 + 8);
    }

    #[test]
    fn malformed_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        fs::write(&p, "1 2\n0 1.0\n").unwrap();
        assert!(matches!(import_embeddings(&p), Err(Error::Parse { line: 2, .. })));
    }
}
