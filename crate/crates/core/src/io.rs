//! On-disk formats.
//!
//! `EMB1` (embeddings), all integers little-endian:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 0..4  | magic `EMB1`                     |
//! | 4..8  | version, `u32` = 1               |
//! | 8..12 | `n_samples`, `u32`               |
//! | 12..16| `n_dims`, `u32`                  |
//! | 16..  | `n_samples * n_dims` `f32`, row-major |
//!
//! `LBL1` (labels) has the same 16-byte header layout with magic `LBL1` and
//! `n_classes` in place of `n_dims`, followed by `n_samples` `u32` class ids.
//! Class names live in an optional sidecar `<path>.names`, one per line.
//!
//! Keep-lists are pretty-printed JSON documents.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{EmbeddingMatrix, KeepList, LabelVector};
use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const LBL_MAGIC: &[u8; 4] = b"LBL1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Validates magic/version and returns the two shape fields.
fn parse_header(path: &Path, bytes: &[u8], magic: &[u8; 4]) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[0..4] != magic {
        return Err(format_err(
            path,
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[0..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = le_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(format_err(path, 4, format!("unsupported version {version}")));
    }
    Ok((le_u32(bytes, 8) as usize, le_u32(bytes, 12) as usize))
}

fn header(magic: &[u8; 4], a: usize, b: usize, payload: usize) -> Result<Vec<u8>> {
    let a = u32::try_from(a).map_err(|_| Error::Contract(format!("{a} exceeds u32")))?;
    let b = u32::try_from(b).map_err(|_| Error::Contract(format!("{b} exceeds u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    Ok(out)
}

fn check_payload(path: &Path, bytes: &[u8], count: usize) -> Result<()> {
    let expected = HEADER_LEN + count * 4;
    if bytes.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!(
                "truncated payload: header declares {count} values ({expected} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(
            path,
            expected,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    Ok(())
}

pub fn encode_embeddings(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let payload = matrix.values().len() * 4;
    let mut out = header(EMB_MAGIC, matrix.n_samples(), matrix.n_dims(), payload)?;
    for v in matrix.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let (rows, cols) = parse_header(path, bytes, EMB_MAGIC)?;
    if rows == 0 || cols == 0 {
        return Err(format_err(path, 8, format!("empty shape {rows}x{cols}")));
    }
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| format_err(path, 8, "shape overflows"))?;
    check_payload(path, bytes, count)?;
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(
                path,
                HEADER_LEN + 4 * i,
                format!("non-finite value {v} at row {}, column {}", i / cols, i % cols),
            ));
        }
        values.push(v);
    }
    EmbeddingMatrix::new(rows, cols, values)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    decode_embeddings(path, &read_bytes(path)?)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_embeddings(matrix)?)
}

pub fn names_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".names");
    PathBuf::from(s)
}

pub fn encode_labels(labels: &LabelVector) -> Result<Vec<u8>> {
    let ids = labels.class_ids();
    let mut out = header(LBL_MAGIC, ids.len(), labels.n_classes() as usize, ids.len() * 4)?;
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(path: &Path, bytes: &[u8]) -> Result<LabelVector> {
    let (rows, n_classes) = parse_header(path, bytes, LBL_MAGIC)?;
    if rows == 0 {
        return Err(format_err(path, 8, "label file declares zero samples"));
    }
    if n_classes == 0 {
        return Err(format_err(path, 12, "label file declares zero classes"));
    }
    check_payload(path, bytes, rows)?;
    let mut ids = Vec::with_capacity(rows);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let id = u32::from_le_bytes(chunk.try_into().unwrap());
        if id as usize >= n_classes {
            return Err(format_err(
                path,
                HEADER_LEN + 4 * i,
                format!("class id {id} at sample {i} is not below n_classes={n_classes}"),
            ));
        }
        ids.push(id);
    }
    LabelVector::new(ids, n_classes as u32).map_err(|e| format_err(path, HEADER_LEN, e.to_string()))
}

/// Reads an `LBL1` file and, when present, its `.names` sidecar.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let labels = decode_labels(path, &read_bytes(path)?)?;
    let sidecar = names_path(path);
    if !sidecar.exists() {
        return Ok(labels);
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let names: Vec<String> = text.lines().map(str::to_owned).collect();
    labels.with_names(names).map_err(|e| Error::Parse {
        path: sidecar,
        message: e.to_string(),
    })
}

pub fn write_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_labels(labels)?)?;
    if let Some(names) = labels.class_names() {
        let mut text = names.join("\n");
        text.push('\n');
        write_bytes(&names_path(path), text.as_bytes())?;
    }
    Ok(())
}

pub fn encode_keeplist(kl: &KeepList) -> Result<String> {
    let mut s = serde_json::to_string_pretty(kl)
        .map_err(|e| Error::Contract(format!("cannot serialize keep-list: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn decode_keeplist(path: &Path, text: &str) -> Result<KeepList> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let kl: KeepList = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    kl.validate().map_err(|e| parse_err(e.to_string()))?;
    Ok(kl)
}

pub fn read_keeplist(path: impl AsRef<Path>) -> Result<KeepList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_keeplist(path, &text)
}

pub fn write_keeplist(kl: &KeepList, path: impl AsRef<Path>) -> Result<()> {
    kl.validate()?;
    write_bytes(path.as_ref(), encode_keeplist(kl)?.as_bytes())
}

/// Hex SHA-256 of a byte string.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(digest_bytes(&read_bytes(path)?))
}
