//! Embedding file formats.
//!
//! Binary (little-endian, canonical fixture format):
//!
//! ```text
//! offset  size      field
//! 0       8         magic "DEFTEMB1"
//! 8       4         u32 N
//! 12      4         u32 d
//! 16      4         u32 K
//! 20      4         u32 flags  (bit0: true labels present, bit1: normalized)
//! 24      8         u64 byte length of the class-name block (0 = default names)
//! 32      4*N*d     f32 embeddings, row-major
//! ..      4*N       u32 given labels
//! ..      4*N       u32 true labels (only when bit0 is set)
//! ..      names     UTF-8 class names joined by '\n'
//! ```
//!
//! CSV: header `label,true_label,f0,...,f{d-1}`, one row per sample, floats
//! written with 9 significant digits (exact for `f32`), `true_label` left
//! empty when unknown. K is inferred as one more than the largest label.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{default_class_names, rows_are_unit, LabeledDataset};
use crate::error::{DeftError, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"DEFTEMB1";
const HEADER_LEN: usize = 32;
const FLAG_TRUE_LABELS: u32 = 1;
const FLAG_NORMALIZED: u32 = 1 << 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// `.csv` files are CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

impl std::str::FromStr for FileFormat {
    type Err = DeftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(Self::Binary),
            "csv" => Ok(Self::Csv),
            other => Err(DeftError::Config(format!("unknown embedding format '{other}'"))),
        }
    }
}

pub fn write_embeddings(ds: &LabeledDataset, path: &Path, format: FileFormat) -> Result<()> {
    ds.validate()?;
    let file = File::create(path).map_err(|e| DeftError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings_to(ds, &mut w, format).map_err(|e| DeftError::io(path, e))?;
    w.flush().map_err(|e| DeftError::io(path, e))
}

pub fn load_embeddings(path: &Path, format: FileFormat) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path).map_err(|e| DeftError::io(path, e))?;
    read_embeddings(&bytes, format)
}

pub fn write_embeddings_to<W: Write>(ds: &LabeledDataset, w: &mut W, format: FileFormat) -> std::io::Result<()> {
    match format {
        FileFormat::Binary => write_binary(ds, w),
        FileFormat::Csv => write_csv(ds, w),
    }
}

pub fn read_embeddings(bytes: &[u8], format: FileFormat) -> Result<LabeledDataset> {
    let ds = match format {
        FileFormat::Binary => read_binary(bytes)?,
        FileFormat::Csv => read_csv(bytes)?,
    };
    ds.validate()?;
    Ok(ds)
}

fn write_binary<W: Write>(ds: &LabeledDataset, w: &mut W) -> std::io::Result<()> {
    let names = if ds.class_names == default_class_names(ds.num_classes) {
        Vec::new()
    } else {
        ds.class_names.join("\n").into_bytes()
    };
    let mut flags = 0;
    if ds.true_labels.is_some() {
        flags |= FLAG_TRUE_LABELS;
    }
    if ds.normalized {
        flags |= FLAG_NORMALIZED;
    }
    w.write_all(EMBEDDING_MAGIC)?;
    for v in [ds.len() as u32, ds.dim as u32, ds.num_classes as u32, flags] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(names.len() as u64).to_le_bytes())?;
    for v in &ds.embeddings {
        w.write_all(&v.to_le_bytes())?;
    }
    for &l in &ds.given_labels {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    if let Some(t) = &ds.true_labels {
        for &l in t {
            w.write_all(&(l as u32).to_le_bytes())?;
        }
    }
    w.write_all(&names)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(DeftError::Parse {
                offset: self.bytes.len() as u64,
                message: format!(
                    "truncated {what}: expected {n} bytes at offset {}, file has {} bytes remaining",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn read_binary(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.len() < HEADER_LEN {
        return Err(DeftError::Parse {
            offset: bytes.len() as u64,
            message: format!("truncated header: expected {HEADER_LEN} bytes, got {}", bytes.len()),
        });
    }
    if &bytes[..8] != EMBEDDING_MAGIC {
        return Err(DeftError::Parse {
            offset: 0,
            message: "bad magic, expected DEFTEMB1".into(),
        });
    }
    let mut c = Cursor { bytes, pos: 8 };
    let n = c.u32("header")? as usize;
    let dim = c.u32("header")? as usize;
    let k = c.u32("header")? as usize;
    let flags = c.u32("header")?;
    let names_len = u64::from_le_bytes(c.take(8, "header")?.try_into().unwrap()) as usize;
    if flags & !(FLAG_TRUE_LABELS | FLAG_NORMALIZED) != 0 {
        return Err(DeftError::Parse {
            offset: 20,
            message: format!("unknown flag bits {flags:#x}"),
        });
    }

    let has_truth = flags & FLAG_TRUE_LABELS != 0;
    let expected = HEADER_LEN as u64 + 4 * (n as u64) * (dim as u64) + 4 * n as u64 * if has_truth { 2 } else { 1 } + names_len as u64;
    if bytes.len() as u64 != expected {
        return Err(DeftError::Parse {
            offset: bytes.len().min(expected as usize) as u64,
            message: format!(
                "file length mismatch: expected {expected} bytes for N={n} d={dim}, got {}",
                bytes.len()
            ),
        });
    }

    let embeddings: Vec<f32> = c
        .take(4 * n * dim, "embeddings")?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(pos) = embeddings.iter().position(|v| !v.is_finite()) {
        return Err(DeftError::DataValidation(format!(
            "non-finite embedding value at row {}, column {}",
            pos / dim.max(1),
            pos % dim.max(1)
        )));
    }
    let read_labels = |c: &mut Cursor, what: &str| -> Result<Vec<usize>> {
        Ok(c.take(4 * n, what)?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect())
    };
    let given = read_labels(&mut c, "given labels")?;
    let truth = if has_truth {
        Some(read_labels(&mut c, "true labels")?)
    } else {
        None
    };
    let class_names = if names_len == 0 {
        default_class_names(k)
    } else {
        let start = c.pos;
        let raw = c.take(names_len, "class names")?;
        let text = std::str::from_utf8(raw).map_err(|e| DeftError::Parse {
            offset: (start + e.valid_up_to()) as u64,
            message: "class names are not valid UTF-8".into(),
        })?;
        text.split('\n').map(str::to_owned).collect()
    };

    Ok(LabeledDataset {
        dim,
        num_classes: k,
        embeddings,
        given_labels: given,
        true_labels: truth,
        class_names,
        normalized: flags & FLAG_NORMALIZED != 0,
    })
}

fn write_csv<W: Write>(ds: &LabeledDataset, w: &mut W) -> std::io::Result<()> {
    let mut header = String::from("label,true_label");
    for j in 0..ds.dim {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..ds.len() {
        let truth = ds.true_labels.as_ref().map(|t| t[i].to_string()).unwrap_or_default();
        write!(w, "{},{}", ds.given_labels[i], truth)?;
        for v in ds.embedding(i) {
            write!(w, ",{v:.8e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn csv_error(offset: u64, message: impl Into<String>) -> DeftError {
    DeftError::Parse {
        offset,
        message: message.into(),
    }
}

fn read_csv(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(e.position().map_or(0, |p| p.byte()), e.to_string()))?
        .clone();
    if headers.len() < 4 || &headers[0] != "label" || &headers[1] != "true_label" {
        return Err(csv_error(
            0,
            "header must start with 'label,true_label' followed by at least two feature columns",
        ));
    }
    let dim = headers.len() - 2;
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f{j}") {
            return Err(csv_error(0, format!("feature column {j} is named '{h}', expected 'f{j}'")));
        }
    }

    let mut embeddings = Vec::new();
    let mut given = Vec::new();
    let mut truth: Vec<Option<usize>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e.position().map_or(0, |p| p.byte()), e.to_string()))?;
        let offset = record.position().map_or(0, |p| p.byte());
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| csv_error(offset, format!("bad label '{}'", &record[0])))?;
        given.push(label);
        let t = record[1].trim();
        truth.push(if t.is_empty() {
            None
        } else {
            Some(t.parse().map_err(|_| csv_error(offset, format!("bad true_label '{t}'")))?)
        });
        for j in 0..dim {
            let field = record[j + 2].trim();
            let v: f32 = field
                .parse()
                .map_err(|_| csv_error(offset, format!("bad value '{field}' in column f{j}")))?;
            if !v.is_finite() {
                return Err(DeftError::DataValidation(format!(
                    "non-finite value in row {}, column f{j}",
                    given.len() - 1
                )));
            }
            embeddings.push(v);
        }
    }

    let truth = if truth.iter().all(Option::is_some) && !truth.is_empty() {
        Some(truth.into_iter().map(Option::unwrap).collect::<Vec<_>>())
    } else if truth.iter().all(Option::is_none) {
        None
    } else {
        return Err(csv_error(0, "true_label must be present on every row or on none"));
    };
    let k = given.iter().chain(truth.iter().flatten()).max().map_or(0, |m| m + 1);
    let normalized = !given.is_empty() && rows_are_unit(&embeddings, dim);
    Ok(LabeledDataset {
        dim,
        num_classes: k,
        embeddings,
        given_labels: given,
        true_labels: truth,
        class_names: default_class_names(k),
        normalized,
    })
}
