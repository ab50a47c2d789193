//! `TRTE` tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 4            | magic `TRTE`                              |
//! | 1            | version, `0x01`                           |
//! | 1            | dtype: `0x01` = f32, `0x02` = f64         |
//! | 1            | ndim                                      |
//! | 8 * ndim     | dims as u64                               |
//! | payload      | row-major elements of the dtype           |
//!
//! Several tensors may be concatenated in one stream; each is self-delimiting.

use std::io::{self, Read, Seek, SeekFrom, Write};

pub const MAGIC: &[u8; 4] = b"TRTE";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0x01,
            DType::F64 => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(DType::F32),
            0x02 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected TRTE")]
    Magic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown dtype code {0:#04x}")]
    DType(u8),
    #[error("payload has {got} elements, dims {dims:?} need {expected}")]
    Length {
        dims: Vec<u64>,
        expected: u64,
        got: u64,
    },
    #[error("tensor has {0} dims; at most 255 are encodable")]
    TooManyDims(usize),
}

/// A decoded tensor. Elements are widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

fn element_count(dims: &[u64]) -> u64 {
    dims.iter().product()
}

fn write_header<W: Write>(w: &mut W, dtype: DType, dims: &[u64]) -> Result<(), TensorError> {
    let ndim = u8::try_from(dims.len()).map_err(|_| TensorError::TooManyDims(dims.len()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype.code(), ndim])?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn write_elements<W: Write>(w: &mut W, dtype: DType, data: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * dtype.size());
    match dtype {
        DType::F32 => data
            .iter()
            .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => data
            .iter()
            .for_each(|&v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    w.write_all(&buf)
}

pub fn write_tensor<W: Write>(
    w: &mut W,
    dtype: DType,
    dims: &[u64],
    data: &[f64],
) -> Result<(), TensorError> {
    let expected = element_count(dims);
    if expected != data.len() as u64 {
        return Err(TensorError::Length {
            dims: dims.to_vec(),
            expected,
            got: data.len() as u64,
        });
    }
    write_header(w, dtype, dims)?;
    write_elements(w, dtype, data)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Magic(magic));
    }
    let mut head = [0u8; 3];
    r.read_exact(&mut head)?;
    if head[0] != VERSION {
        return Err(TensorError::Version(head[0]));
    }
    let dtype = DType::from_code(head[1]).ok_or(TensorError::DType(head[1]))?;
    let mut dims = Vec::with_capacity(head[2] as usize);
    for _ in 0..head[2] {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b));
    }
    let count = element_count(&dims) as usize;
    let mut raw = vec![0u8; count * dtype.size()];
    r.read_exact(&mut raw)?;
    let data = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(Tensor { dtype, dims, data })
}

/// Appends rows to a tensor whose leading dimension is not known up front.
/// The header is written with a row count of 0 and patched by
/// [`TensorWriter::finish`].
pub struct TensorWriter<W: Write> {
    inner: W,
    dtype: DType,
    row_dims: Vec<u64>,
    row_len: usize,
    rows: u64,
    header_pos: u64,
}

impl<W: Write + Seek> TensorWriter<W> {
    pub fn new(mut inner: W, dtype: DType, row_dims: &[u64]) -> Result<Self, TensorError> {
        let header_pos = inner.stream_position()?;
        let mut dims = vec![0u64];
        dims.extend_from_slice(row_dims);
        write_header(&mut inner, dtype, &dims)?;
        Ok(TensorWriter {
            inner,
            dtype,
            row_dims: row_dims.to_vec(),
            row_len: element_count(row_dims) as usize,
            rows: 0,
            header_pos,
        })
    }

    /// Writes the final row count into the header and returns the stream,
    /// positioned at the end of the tensor.
    pub fn finish(mut self) -> Result<W, TensorError> {
        let end = self.inner.stream_position()?;
        // magic + version + dtype + ndim
        self.inner.seek(SeekFrom::Start(self.header_pos + 7))?;
        self.inner.write_all(&self.rows.to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl<W: Write> TensorWriter<W> {
    /// Appends `n_rows` rows held row-major in `data`.
    pub fn append_rows(&mut self, data: &[f64], n_rows: usize) -> Result<(), TensorError> {
        let expected = (n_rows * self.row_len) as u64;
        if data.len() as u64 != expected {
            let mut dims = vec![n_rows as u64];
            dims.extend_from_slice(&self.row_dims);
            return Err(TensorError::Length {
                dims,
                expected,
                got: data.len() as u64,
            });
        }
        write_elements(&mut self.inner, self.dtype, data)?;
        self.rows += n_rows as u64;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }
}
