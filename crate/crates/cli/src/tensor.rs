//! The `.mh3d` tensor container.
//!
//! ```text
//! "MH3D" | version u16 | dtype u8 | ndim u8 | dims u64 × ndim | payload
//! ```
//!
//! All integers and samples are little-endian. `dtype` 1 is `f32`, 2 is
//! complex `f32` stored as interleaved `re, im` pairs. Nothing follows the
//! payload; metadata lives in the sibling `.json` sidecar.

use std::path::Path;

use ndarray::{Array3, ArrayD, IxDyn};
use num_complex::{Complex32, Complex64};

use crate::error::{CliError, CliResult};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"MH3D";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    C64 = 2,
}

impl DType {
    fn from_code(code: u8) -> Option<DType> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::C64),
            _ => None,
        }
    }

    fn sample_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::C64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    C64(ArrayD<Complex32>),
}

impl Tensor {
    pub fn real(a: &ArrayD<f64>) -> Tensor {
        Tensor::F32(a.mapv(|v| v as f32))
    }

    pub fn complex(a: &ArrayD<Complex64>) -> Tensor {
        Tensor::C64(a.mapv(|v| Complex32::new(v.re as f32, v.im as f32)))
    }

    pub fn dtype(&self) -> DType {
        match self {
            Tensor::F32(_) => DType::F32,
            Tensor::C64(_) => DType::C64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::C64(a) => a.shape(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.shape();
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(8 + 8 * shape.len() + n * self.dtype().sample_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype() as u8);
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self {
            Tensor::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Tensor::C64(a) => a.iter().for_each(|v| {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Tensor> {
        let bad = |m: &str| CliError::Format(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing MH3D magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported container version {version}")));
        }
        let dtype = DType::from_code(bytes[6]).ok_or_else(|| bad(&format!("unknown dtype code {}", bytes[6])))?;
        let ndim = bytes[7] as usize;
        let header = 8 + 8 * ndim;
        if bytes.len() < header {
            return Err(bad("truncated header"));
        }
        let shape: Vec<usize> = (0..ndim)
            .map(|i| {
                let mut b = [0u8; 8];
                b.copy_from_slice(&bytes[8 + 8 * i..16 + 8 * i]);
                u64::from_le_bytes(b) as usize
            })
            .collect();
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension overflow"))?;
        let payload = &bytes[header..];
        if Some(payload.len()) != n.checked_mul(dtype.sample_bytes()) {
            return Err(bad(&format!("payload of {} bytes does not match shape {shape:?}", payload.len())));
        }
        let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        let shape = IxDyn(&shape);
        Ok(match dtype {
            DType::F32 => {
                let v = payload.chunks_exact(4).map(f).collect();
                Tensor::F32(ArrayD::from_shape_vec(shape, v).map_err(|e| bad(&e.to_string()))?)
            }
            DType::C64 => {
                let v = payload.chunks_exact(8).map(|c| Complex32::new(f(&c[..4]), f(&c[4..]))).collect();
                Tensor::C64(ArrayD::from_shape_vec(shape, v).map_err(|e| bad(&e.to_string()))?)
            }
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Tensor> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Tensor::from_bytes(&bytes).map_err(|e| match e {
            CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn into_real(self) -> CliResult<ArrayD<f64>> {
        match self {
            Tensor::F32(a) => Ok(a.mapv(f64::from)),
            Tensor::C64(_) => Err(CliError::Format("expected a real tensor".into())),
        }
    }

    pub fn into_complex(self) -> CliResult<ArrayD<Complex64>> {
        match self {
            Tensor::C64(a) => Ok(a.mapv(|v| Complex64::new(v.re.into(), v.im.into()))),
            Tensor::F32(_) => Err(CliError::Format("expected a complex tensor".into())),
        }
    }
}

/// Reads a real rank-3 tensor as an `(z, y, x)` volume.
pub fn read_volume(path: &Path) -> CliResult<Array3<f64>> {
    let a = Tensor::read(path)?.into_real()?;
    a.into_dimensionality()
        .map_err(|_| CliError::Format(format!("{}: expected a rank-3 volume", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::F32(ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![1.0, -2.5]).unwrap());
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"MH3D");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 1);
        assert_eq!(b[7], 2);
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &1u64.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 32);
        assert_eq!(Tensor::from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn complex_interleaved() {
        let t = Tensor::C64(ArrayD::from_shape_vec(IxDyn(&[1]), vec![Complex32::new(3.0, -4.0)]).unwrap());
        let b = t.to_bytes();
        assert_eq!(b[6], 2);
        assert_eq!(&b[16..20], &3.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &(-4.0f32).to_le_bytes());
        assert_eq!(Tensor::from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn rejects_damage() {
        let t = Tensor::F32(ArrayD::zeros(IxDyn(&[3])));
        let mut b = t.to_bytes();
        assert!(Tensor::from_bytes(&b[..b.len() - 1]).is_err());
        b[6] = 9;
        assert!(Tensor::from_bytes(&b).is_err());
        assert!(Tensor::from_bytes(b"MH3X\x01\x00\x01\x00").is_err());
    }
}
