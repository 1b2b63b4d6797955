//! Tensor files.
//!
//! A DTEN record is the magic `DTEN`, a `u8` order `d`, `d` little-endian
//! `u64` dimensions and then the entries as little-endian `f64` with the last
//! index varying fastest. A Tucker file is `d + 1` consecutive records: the
//! core followed by the factor matrices as `n_k × r_k` tensors.
//!
//! The text format has `d` and the dimensions on its first line, followed by
//! whitespace-separated entries in the same order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::cpd::{CpdFile, CpdPoint};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{DenseTensor, TuckerDecomposition};

pub const MAGIC: &[u8; 4] = b"DTEN";

pub fn write_dten<T: Scalar, W: Write>(t: &DenseTensor<T>, w: &mut W) -> Result<()> {
    let order = u8::try_from(t.order()).map_err(|_| Error::Format(format!("order {} exceeds 255", t.order())))?;
    w.write_all(MAGIC)?;
    w.write_all(&[order])?;
    for &n in t.shape() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Reads one record; `Ok(None)` on a clean end of input.
pub fn read_dten_record<T: Scalar, R: Read>(r: &mut R) -> Result<Option<DenseTensor<T>>> {
    let mut magic = [0u8; 4];
    let got = read_up_to(r, &mut magic)?;
    if got == 0 {
        return Ok(None);
    }
    if got < 4 || &magic != MAGIC {
        return Err(Error::Format("missing DTEN magic".into()));
    }
    let mut order = [0u8; 1];
    r.read_exact(&mut order).map_err(truncated)?;
    let mut shape = Vec::with_capacity(order[0] as usize);
    for _ in 0..order[0] {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(truncated)?;
        let n = usize::try_from(u64::from_le_bytes(buf)).map_err(|_| Error::Format("dimension overflow".into()))?;
        shape.push(n);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf).map_err(truncated)?;
        data.push(T::of(f64::from_le_bytes(buf)));
    }
    DenseTensor::new(shape, data).map(Some)
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated DTEN record".into())
    } else {
        e.into()
    }
}

/// All records in a stream.
pub fn read_dten_records<T: Scalar, R: Read>(r: &mut R) -> Result<Vec<DenseTensor<T>>> {
    let mut out = Vec::new();
    while let Some(t) = read_dten_record(r)? {
        out.push(t);
    }
    Ok(out)
}

/// Contents of a tensor file: a plain tensor or a Tucker decomposition.
#[derive(Debug, Clone)]
pub enum TensorFile<T: Scalar> {
    Dense(DenseTensor<T>),
    Tucker(TuckerDecomposition<T>),
}

pub fn tucker_from_records<T: Scalar>(mut records: Vec<DenseTensor<T>>) -> Result<TuckerDecomposition<T>> {
    if records.is_empty() {
        return Err(Error::Format("empty Tucker file".into()));
    }
    let core = records.remove(0);
    let factors = records
        .into_iter()
        .map(|f| {
            if f.order() != 2 {
                return Err(Error::Format(format!("factor record of order {}", f.order())));
            }
            let (n, r) = (f.shape()[0], f.shape()[1]);
            Ok(DMatrix::from_row_slice(n, r, f.data()))
        })
        .collect::<Result<Vec<_>>>()?;
    TuckerDecomposition::new(core, factors)
}

pub fn write_tucker<T: Scalar, W: Write>(t: &TuckerDecomposition<T>, w: &mut W) -> Result<()> {
    write_dten(&t.core, w)?;
    for f in &t.factors {
        let m = DenseTensor::from_fn(&[f.nrows(), f.ncols()], |ix| f[(ix[0], ix[1])])?;
        write_dten(&m, w)?;
    }
    Ok(())
}

/// Parses the whitespace-separated text format.
pub fn parse_text<T: Scalar>(text: &str) -> Result<DenseTensor<T>> {
    let mut lines = text.lines().skip_while(|l| l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty text tensor".into()))?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::Format(format!("bad header token {s:?}"))))
        .collect::<Result<_>>()?;
    let (&d, dims) = nums.split_first().ok_or_else(|| Error::Format("empty header".into()))?;
    if dims.len() != d {
        return Err(Error::Format(format!("header declares order {d} but lists {} dimensions", dims.len())));
    }
    let data: Vec<T> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|s| s.parse::<f64>().map(T::of).map_err(|_| Error::Format(format!("bad value {s:?}"))))
        .collect::<Result<_>>()?;
    DenseTensor::new(dims.to_vec(), data)
}

pub fn format_text<T: Scalar>(t: &DenseTensor<T>) -> String {
    let mut out = t.order().to_string();
    for n in t.shape() {
        out.push(' ');
        out.push_str(&n.to_string());
    }
    out.push('\n');
    let row = t.shape().last().copied().unwrap_or(1).max(1);
    for chunk in t.data().chunks(row) {
        let line: Vec<String> = chunk.iter().map(|x| format!("{:e}", x.as_f64())).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Loads a DTEN file (dense or Tucker) or, failing the magic check, the
/// text format.
pub fn load_tensor_file<T: Scalar>(path: &Path) -> Result<TensorFile<T>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(MAGIC) {
        let mut records = read_dten_records(&mut bytes.as_slice())?;
        return match records.len() {
            1 => Ok(TensorFile::Dense(records.remove(0))),
            _ => Ok(TensorFile::Tucker(tucker_from_records(records)?)),
        };
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Format("neither DTEN nor text".into()))?;
    Ok(TensorFile::Dense(parse_text(&text)?))
}

pub fn save_dten<T: Scalar>(t: &DenseTensor<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dten(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_tucker<T: Scalar>(t: &TuckerDecomposition<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tucker(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_cpd<T: Scalar>(p: &CpdPoint<T>, path: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, &CpdFile::from_cpd(p))?;
    Ok(())
}

pub fn load_cpd<T: Scalar>(path: &Path) -> Result<CpdPoint<T>> {
    let file: CpdFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    file.to_cpd()
}
