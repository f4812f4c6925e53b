//! Embedding file formats.
//!
//! CSV: UTF-8, header `user_id,class_label,v0,...,v{D-1}`, empty
//! `class_label` when absent.
//!
//! Binary: magic `EMB1`, little-endian `u32` N, `u32` D, then N records of
//! `u16` id length, id bytes, `i32` label (-1 when absent) and D `f32`
//! components. Values are promoted to `f64` on load.
//!
//! Loaders sniff the magic bytes, so either format is accepted anywhere.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    #[default]
    Csv,
    Bin,
}

impl FileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::Bin => "emb",
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "bin" => Ok(FileFormat::Bin),
            other => Err(Error::InvalidConfig(format!(
                "unknown file format `{other}` (expected csv or bin)"
            ))),
        }
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes, path)
    } else {
        decode_csv(&bytes, path)
    }
}

pub fn write_embeddings(
    set: &EmbeddingSet,
    path: impl AsRef<Path>,
    format: FileFormat,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        FileFormat::Csv => encode_csv(set),
        FileFormat::Bin => encode_binary(set, path)?,
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Writes a record pairing as CSV rows `target_row,attack_row`.
pub fn write_pairing(pairing: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("target_row,attack_row\n");
    for (t, a) in pairing.iter().enumerate() {
        out.push_str(&format!("{t},{a}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a pairing written by [`write_pairing`]. Rows may come in any order
/// but every target row must appear exactly once.
pub fn read_pairing(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let mut pairs = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::format(
                path,
                format!("row {} has {} fields, expected 2", line + 1, rec.len()),
            ));
        }
        let parse = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| {
                Error::format(path, format!("row {}: `{s}` is not a row index", line + 1))
            })
        };
        pairs.push((parse(&rec[0])?, parse(&rec[1])?));
    }
    let mut out = vec![usize::MAX; pairs.len()];
    for (t, a) in pairs {
        if t >= out.len() || out[t] != usize::MAX {
            return Err(Error::format(
                path,
                format!("target row {t} is out of range or repeated"),
            ));
        }
        out[t] = a;
    }
    Ok(out)
}

pub fn encode_csv(set: &EmbeddingSet) -> Vec<u8> {
    let mut out = String::with_capacity(set.len() * set.dim() * 12);
    out.push_str("user_id,class_label");
    for j in 0..set.dim() {
        out.push_str(&format!(",v{j}"));
    }
    out.push('\n');
    let m = set.vectors();
    for i in 0..set.len() {
        out.push_str(&csv_field(set.user_id(i)));
        out.push(',');
        if let Some(l) = set.label(i) {
            out.push_str(&l.to_string());
        }
        for j in 0..set.dim() {
            out.push(',');
            // shortest representation that parses back to the same f64
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn decode_csv(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.len() < 4 || &headers[0] != "user_id" || &headers[1] != "class_label" {
        return Err(Error::format(
            path,
            "header must be `user_id,class_label,v0,...` with at least two components",
        ));
    }
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("v{j}") {
            return Err(Error::format(
                path,
                format!("column {} should be v{j}, found `{h}`", j + 2),
            ));
        }
    }
    let d = headers.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut flat = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.len() != d + 2 {
            return Err(Error::format(
                path,
                format!(
                    "record {} has {} fields, expected {}",
                    line + 1,
                    rec.len(),
                    d + 2
                ),
            ));
        }
        ids.push(rec[0].to_string());
        labels.push(if rec[1].is_empty() {
            None
        } else {
            Some(rec[1].parse::<u32>().map_err(|e| {
                Error::format(path, format!("record {}: bad class label: {e}", line + 1))
            })?)
        });
        for field in rec.iter().skip(2) {
            flat.push(field.trim().parse::<f64>().map_err(|e| {
                Error::format(
                    path,
                    format!("record {}: bad component `{field}`: {e}", line + 1),
                )
            })?);
        }
    }
    let n = ids.len();
    EmbeddingSet::new(ids, labels, DMatrix::from_row_slice(n, d, &flat), None)
}

pub fn encode_binary(set: &EmbeddingSet, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + set.len() * (8 + 4 * set.dim()));
    out.extend_from_slice(MAGIC);
    let n = u32::try_from(set.len()).map_err(|_| Error::format(path, "too many records"))?;
    let d = u32::try_from(set.dim()).map_err(|_| Error::format(path, "dimension too large"))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    let m = set.vectors();
    for i in 0..set.len() {
        let id = set.user_id(i).as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| {
            Error::format(path, format!("user id of record {i} exceeds 65535 bytes"))
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        let label: i32 = match set.label(i) {
            Some(l) => i32::try_from(l)
                .map_err(|_| Error::format(path, format!("class label {l} does not fit in i32")))?,
            None => -1,
        };
        out.extend_from_slice(&label.to_le_bytes());
        for j in 0..set.dim() {
            out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let mut cur = Cursor {
        bytes,
        pos: 4,
        path,
    };
    let n = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut flat = Vec::with_capacity(n * d);
    for _ in 0..n {
        let len = cur.u16()? as usize;
        let id = cur.take(len)?;
        ids.push(
            String::from_utf8(id.to_vec())
                .map_err(|_| Error::format(path, "user id is not valid UTF-8"))?,
        );
        let label = cur.i32()?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 => Some(l as u32),
            l => return Err(Error::format(path, format!("invalid class label {l}"))),
        });
        for _ in 0..d {
            flat.push(f64::from(cur.f32()?));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last record"));
    }
    EmbeddingSet::new(ids, labels, DMatrix::from_row_slice(n, d, &flat), None)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.path, "unexpected end of file")),
        }
    }

    fn array<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut a = [0u8; K];
        a.copy_from_slice(self.take(K)?);
        Ok(a)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingSet {
        EmbeddingSet::from_records(vec![
            ("alice", Some(3), vec![0.1, -2.5, 1e-7]),
            ("bob,jr", None, vec![0.0, 1.0, -0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn csv_layout() {
        let text = String::from_utf8(encode_csv(&sample())).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("user_id,class_label,v0,v1,v2"));
        assert_eq!(lines.next(), Some("alice,3,0.1,-2.5,0.0000001"));
        assert_eq!(lines.next(), Some("\"bob,jr\",,0,1,-0"));
    }

    #[test]
    fn pairing_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairing.csv");
        write_pairing(&[2, 0, 1], &p).unwrap();
        assert_eq!(read_pairing(&p).unwrap(), vec![2, 0, 1]);
        fs::write(&p, "target_row,attack_row\n0,1\n0,2\n").unwrap();
        assert!(matches!(read_pairing(&p), Err(Error::Format { .. })));
        fs::write(&p, "target_row,attack_row\n0,x\n").unwrap();
        assert!(matches!(read_pairing(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let s = sample();
        write_embeddings(&s, &p, FileFormat::Csv).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), s);
    }

    #[test]
    fn binary_layout_and_promotion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let s = sample();
        write_embeddings(&s, &p, FileFormat::Bin).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 5);
        assert_eq!(&bytes[14..19], b"alice");
        assert_eq!(i32::from_le_bytes(bytes[19..23].try_into().unwrap()), 3);
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back.label(1), None);
        assert_eq!(back.user_id(1), "bob,jr");
        for (a, b) in back.vectors().iter().zip(s.vectors().iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.emb");
        let mut bytes = encode_binary(&sample(), &p).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "id,label,a,b\nx,,1,2\n").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format { .. })));
    }
}
