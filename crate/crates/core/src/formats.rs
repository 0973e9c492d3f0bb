//! Binary little-endian file formats.
//!
//! | magic | contents |
//! |-------|----------|
//! | `QVEC` | u32 count, u32 dim, count×dim f32 row-major |
//! | `QSET` | u32 count, then per row u32 length and that many ascending u32 ids |
//! | `QMAT` | u32 n, u8 q tag, f64 q, n×n f64 row-major |
//! | `QMLP` | u32 version, network record (see [`save_model`]) |
//! | `QIDX` | see [`crate::pipeline::save_index`] |
//!
//! q tags: `0xFF` infinity, `0x01` finite (value follows), `0x00` no
//! exponent (a raw dissimilarity matrix). Every loader rejects trailing
//! bytes.

use std::fs;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::data::{Dataset, DenseData};
use crate::embedding::{read_params, write_params, MlpParams};
use crate::error::{Error, Result};
use crate::matrix::DistanceMatrix;
use crate::qcore::{QExponent, SparseSet};

pub const QVEC_MAGIC: &[u8; 4] = b"QVEC";
pub const QSET_MAGIC: &[u8; 4] = b"QSET";
pub const QMAT_MAGIC: &[u8; 4] = b"QMAT";
pub const QMLP_MAGIC: &[u8; 4] = b"QMLP";
pub const QMLP_VERSION: u32 = 1;

const TAG_NONE: u8 = 0x00;
const TAG_FINITE: u8 = 0x01;
const TAG_INFINITE: u8 = 0xFF;

pub(crate) fn write_q(w: &mut Writer, q: QExponent) {
    write_q_opt(w, Some(q));
}

fn write_q_opt(w: &mut Writer, q: Option<QExponent>) {
    match q {
        None => {
            w.u8(TAG_NONE);
            w.f64(0.0);
        }
        Some(QExponent::Finite(v)) => {
            w.u8(TAG_FINITE);
            w.f64(v);
        }
        Some(QExponent::Infinity) => {
            w.u8(TAG_INFINITE);
            w.f64(f64::INFINITY);
        }
    }
}

pub(crate) fn read_q(r: &mut Reader<'_>) -> Result<QExponent> {
    read_q_opt(r)?.ok_or_else(|| Error::format("missing q exponent"))
}

fn read_q_opt(r: &mut Reader<'_>) -> Result<Option<QExponent>> {
    let tag = r.u8()?;
    let v = r.f64()?;
    match tag {
        TAG_NONE => Ok(None),
        TAG_FINITE => QExponent::finite(v)
            .map(Some)
            .map_err(|_| Error::format(format!("invalid q value {v}"))),
        TAG_INFINITE => Ok(Some(QExponent::Infinity)),
        other => Err(Error::format(format!("unknown q tag {other:#04x}"))),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn encode_dense(data: &DenseData) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(QVEC_MAGIC);
    w.len_u32(data.rows())?;
    w.len_u32(data.dim())?;
    for &v in data.values() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::format(format!("value {v} does not fit in f32")));
        }
        w.f32(f);
    }
    Ok(w.buf)
}

pub fn decode_dense(bytes: &[u8]) -> Result<DenseData> {
    let mut r = Reader::new(bytes);
    r.magic(QVEC_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let total = count
        .checked_mul(dim)
        .ok_or_else(|| Error::format("declared size overflows"))?;
    r.expect_at_least(total, 4)?;
    let values: Vec<f64> = (0..total).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
    r.finish()?;
    DenseData::new(count, dim, values)
}

pub fn encode_sparse(sets: &[SparseSet]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(QSET_MAGIC);
    w.len_u32(sets.len())?;
    for s in sets {
        w.len_u32(s.len())?;
        for &id in s.ids() {
            w.u32(id);
        }
    }
    Ok(w.buf)
}

pub fn decode_sparse(bytes: &[u8]) -> Result<Vec<SparseSet>> {
    let mut r = Reader::new(bytes);
    r.magic(QSET_MAGIC)?;
    let count = r.u32()? as usize;
    r.expect_at_least(count, 4)?;
    let mut sets = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        r.expect_at_least(len, 4)?;
        let ids: Vec<u32> = (0..len).map(|_| r.u32()).collect::<Result<_>>()?;
        sets.push(SparseSet::new(ids)?);
    }
    r.finish()?;
    Ok(sets)
}

pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    match data {
        Dataset::Dense(d) => encode_dense(d),
        Dataset::Sparse(s) => encode_sparse(s),
    }
}

/// Decodes either a `QVEC` or a `QSET` stream.
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    match bytes.get(..4) {
        Some(m) if m == QVEC_MAGIC => decode_dense(bytes).map(Dataset::Dense),
        Some(m) if m == QSET_MAGIC => decode_sparse(bytes).map(Dataset::Sparse),
        _ => Err(Error::format("not a QVEC or QSET stream")),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&read_file(path.as_ref())?)
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_dataset(data)?)
}

/// A matrix on disk, with the exponent it was projected at if any.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub matrix: DistanceMatrix,
    pub q: Option<QExponent>,
}

pub fn encode_matrix(matrix: &DistanceMatrix, q: Option<QExponent>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(QMAT_MAGIC);
    write_matrix_body(&mut w, matrix, q)?;
    Ok(w.buf)
}

pub(crate) fn write_matrix_body(w: &mut Writer, matrix: &DistanceMatrix, q: Option<QExponent>) -> Result<()> {
    w.len_u32(matrix.n())?;
    write_q_opt(w, q);
    for &v in matrix.entries() {
        w.f64(v);
    }
    Ok(())
}

pub(crate) fn read_matrix_body(r: &mut Reader<'_>) -> Result<MatrixFile> {
    let n = r.u32()? as usize;
    let q = read_q_opt(r)?;
    let total = n.checked_mul(n).ok_or_else(|| Error::format("declared size overflows"))?;
    r.expect_at_least(total, 8)?;
    let entries: Vec<f64> = (0..total).map(|_| r.f64()).collect::<Result<_>>()?;
    Ok(MatrixFile {
        matrix: DistanceMatrix::new(n, entries)?,
        q,
    })
}

pub fn decode_matrix(bytes: &[u8]) -> Result<MatrixFile> {
    let mut r = Reader::new(bytes);
    r.magic(QMAT_MAGIC)?;
    let out = read_matrix_body(&mut r)?;
    r.finish()?;
    Ok(out)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    decode_matrix(&read_file(path.as_ref())?)
}

pub fn save_matrix(matrix: &DistanceMatrix, q: Option<QExponent>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_matrix(matrix, q)?)
}

/// `QMLP`, version, layer count, layer dims, activation tag, dropout, q,
/// scale, then per layer the weights row-major followed by the bias, all
/// f64.
pub fn encode_model(params: &MlpParams) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(QMLP_MAGIC);
    w.u32(QMLP_VERSION);
    write_params(params, &mut w)?;
    Ok(w.buf)
}

pub(crate) fn read_model(r: &mut Reader<'_>) -> Result<MlpParams> {
    r.magic(QMLP_MAGIC)?;
    let version = r.u32()?;
    if version != QMLP_VERSION {
        return Err(Error::format(format!(
            "model version {version}, expected {QMLP_VERSION}"
        )));
    }
    read_params(r)
}

pub fn decode_model(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader::new(bytes);
    let p = read_model(&mut r)?;
    r.finish()?;
    Ok(p)
}

pub fn save_model(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_model(params)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpParams> {
    decode_model(&read_file(path.as_ref())?)
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    read_file(path)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_file(path, bytes)
}
