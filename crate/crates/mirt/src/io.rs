//! Binary file formats for fields and sinograms.
//!
//! Volume formats share one layout: a 4-byte ASCII magic ("MRT1" for
//! 2-tensor, "MRV0" for vector, "MRS0" for scalar fields), little-endian u32
//! counts nx, ny, nz, f64 origin[3] and spacing[3], then the sample values as
//! f64 with the x index fastest and components innermost ((i, j) row-major
//! for tensors). Sinograms use magic "MSN1": u32 n_t, n_alpha, n_beta, f64
//! curve interval (t0, t1) and pole band, then records (t, alpha, beta,
//! chanA, chanB) with the curve index fastest. All writes round-trip
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::POLE_BAND;
use crate::grid::{Grid3, ScalarField, Tensor2Field, VectorField};
use crate::transform::{LineSet, Sinogram};

const MAGIC_TENSOR: &[u8; 4] = b"MRT1";
const MAGIC_VECTOR: &[u8; 4] = b"MRV0";
const MAGIC_SCALAR: &[u8; 4] = b"MRS0";
const MAGIC_SINO: &[u8; 4] = b"MSN1";

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_volume(path: &Path, magic: &[u8; 4], grid: &Grid3, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(magic)?;
    for a in 0..3 {
        let n = u32::try_from(grid.counts[a])
            .map_err(|_| Error::Format(format!("axis {a} count too large for file header")))?;
        write_u32(&mut w, n)?;
    }
    for a in 0..3 {
        write_f64(&mut w, grid.origin[a])?;
    }
    for a in 0..3 {
        write_f64(&mut w, grid.spacing[a])?;
    }
    for v in values {
        write_f64(&mut w, *v)?;
    }
    w.flush()?;
    Ok(())
}

fn read_volume(path: &Path, magic: &[u8; 4], ncomp: usize) -> Result<(Grid3, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "{}: magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut counts = [0usize; 3];
    for c in &mut counts {
        *c = read_u32(&mut r)? as usize;
    }
    let mut origin = [0.0; 3];
    for o in &mut origin {
        *o = read_f64(&mut r)?;
    }
    let mut spacing = [0.0; 3];
    for s in &mut spacing {
        *s = read_f64(&mut r)?;
    }
    let grid = Grid3::new(counts, origin, spacing)?;
    let n = grid
        .num_voxels()
        .checked_mul(ncomp)
        .ok_or_else(|| Error::Format("value count overflow".into()))?;
    let mut values = vec![0.0f64; n];
    for v in &mut values {
        *v = read_f64(&mut r)?;
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {n} values",
            path.display()
        )));
    }
    Ok((grid, values))
}

pub fn write_tensor(path: impl AsRef<Path>, f: &Tensor2Field) -> Result<()> {
    write_volume(path.as_ref(), MAGIC_TENSOR, &f.grid, &f.values)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor2Field> {
    let (grid, values) = read_volume(path.as_ref(), MAGIC_TENSOR, 9)?;
    Tensor2Field::from_values(grid, values)
}

pub fn write_vector(path: impl AsRef<Path>, f: &VectorField) -> Result<()> {
    write_volume(path.as_ref(), MAGIC_VECTOR, &f.grid, &f.values)
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<VectorField> {
    let (grid, values) = read_volume(path.as_ref(), MAGIC_VECTOR, 3)?;
    VectorField::from_values(grid, values)
}

pub fn write_scalar(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    write_volume(path.as_ref(), MAGIC_SCALAR, &f.grid, &f.values)
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarField> {
    let (grid, values) = read_volume(path.as_ref(), MAGIC_SCALAR, 1)?;
    ScalarField::from_values(grid, values)
}

/// Sinogram file contents: the sampling descriptor stored in the header plus
/// one (t, alpha, beta, chanA, chanB) record per line, curve index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramFile {
    pub n_t: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub t0: f64,
    pub t1: f64,
    pub pole_band: f64,
    /// (t, alpha, beta, chanA, chanB) per line
    pub records: Vec<[f64; 5]>,
}

impl SinogramFile {
    /// Pair a sinogram with the line-set geometry that produced it.
    pub fn from_sinogram(ls: &LineSet, sino: &Sinogram) -> Result<Self> {
        if sino.values.len() != ls.n_lines() {
            return Err(Error::LengthMismatch {
                got: sino.values.len(),
                want: ls.n_lines(),
            });
        }
        let (t0, t1) = ls.curve.interval();
        let dt = (t1 - t0) / ls.n_t as f64;
        let band = std::f64::consts::PI - 2.0 * POLE_BAND;
        let dalpha = band / ls.n_alpha as f64;
        let dbeta = 2.0 * std::f64::consts::PI / ls.n_beta as f64;
        let mut records = Vec::with_capacity(ls.n_lines());
        for ib in 0..ls.n_beta {
            let beta = (ib as f64 + 0.5) * dbeta;
            for ia in 0..ls.n_alpha {
                let alpha = POLE_BAND + (ia as f64 + 0.5) * dalpha;
                for it in 0..ls.n_t {
                    let t = t0 + (it as f64 + 0.5) * dt;
                    let v = sino.values[ls.line_index(it, ia, ib)];
                    records.push([t, alpha, beta, v[0], v[1]]);
                }
            }
        }
        Ok(SinogramFile {
            n_t: ls.n_t,
            n_alpha: ls.n_alpha,
            n_beta: ls.n_beta,
            t0,
            t1,
            pole_band: POLE_BAND,
            records,
        })
    }

    /// Channel values in line-set order.
    pub fn to_sinogram(&self) -> Sinogram {
        Sinogram {
            n_t: self.n_t,
            n_alpha: self.n_alpha,
            n_beta: self.n_beta,
            values: self.records.iter().map(|r| [r[3], r[4]]).collect(),
        }
    }
}

pub fn write_sinogram(path: impl AsRef<Path>, s: &SinogramFile) -> Result<()> {
    let want = s.n_t * s.n_alpha * s.n_beta;
    if s.records.len() != want {
        return Err(Error::LengthMismatch {
            got: s.records.len(),
            want,
        });
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC_SINO)?;
    for n in [s.n_t, s.n_alpha, s.n_beta] {
        let n = u32::try_from(n)
            .map_err(|_| Error::Format("line count too large for file header".into()))?;
        write_u32(&mut w, n)?;
    }
    for v in [s.t0, s.t1, s.pole_band] {
        write_f64(&mut w, v)?;
    }
    for rec in &s.records {
        for v in rec {
            write_f64(&mut w, *v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<SinogramFile> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != MAGIC_SINO {
        return Err(Error::Format(format!(
            "{}: magic {:?}, expected MSN1",
            path.display(),
            String::from_utf8_lossy(&got)
        )));
    }
    let n_t = read_u32(&mut r)? as usize;
    let n_alpha = read_u32(&mut r)? as usize;
    let n_beta = read_u32(&mut r)? as usize;
    let t0 = read_f64(&mut r)?;
    let t1 = read_f64(&mut r)?;
    let pole_band = read_f64(&mut r)?;
    let n = n_t
        .checked_mul(n_alpha)
        .and_then(|v| v.checked_mul(n_beta))
        .ok_or_else(|| Error::Format("record count overflow".into()))?;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rec = [0.0; 5];
        for v in &mut rec {
            *v = read_f64(&mut r)?;
        }
        records.push(rec);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {n} records",
            path.display()
        )));
    }
    Ok(SinogramFile {
        n_t,
        n_alpha,
        n_beta,
        t0,
        t1,
        pole_band,
        records,
    })
}
