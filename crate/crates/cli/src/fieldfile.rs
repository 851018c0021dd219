//! Binary field container.
//!
//! Layout (little-endian): magic `PATF`, `u32` version, `u8` dtype
//! (1 = f32, 2 = f64), `u8` ndim, `ndim × u64` dims, then the payload in
//! row-major order (last index fastest). A JSON sidecar `<path>.json` holds
//! spacing, units and provenance.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PATF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FieldFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(c: u8) -> Result<Self, FieldFileError> {
        match c {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            _ => Err(FieldFileError::Format(format!("unknown dtype code {c}"))),
        }
    }
}

/// Field values kept in their stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl FieldData {
    pub fn dtype(&self) -> Dtype {
        match self {
            FieldData::F32(_) => Dtype::F32,
            FieldData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FieldData::F32(v) => v.len(),
            FieldData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            FieldData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            FieldData::F64(v) => v.clone(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            FieldData::F32(v) => v.clone(),
            FieldData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub dims: Vec<u64>,
    pub data: FieldData,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command_line: Vec<String>,
    pub seed: Option<u64>,
    pub git_revision: String,
    pub version: String,
    pub config_sha256: Option<String>,
}

/// Sidecar metadata written next to every field file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub description: String,
    pub spacing: Vec<f64>,
    pub units: String,
    pub axes: Vec<String>,
    pub provenance: Provenance,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FieldFileError + '_ {
    move |source| FieldFileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl FieldFile {
    pub fn new(dims: Vec<u64>, data: FieldData) -> Result<Self, FieldFileError> {
        let n: u64 = dims.iter().product();
        if n as usize != data.len() {
            return Err(FieldFileError::Format(format!(
                "dims {dims:?} hold {n} values, payload has {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(FieldFileError::Format("too many dimensions".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.dims.len() + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype().code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            FieldData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            FieldData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self, FieldFileError> {
        let fmt = |m: &str| FieldFileError::Format(m.to_string());
        let mut take = |n: usize| -> Result<&[u8], FieldFileError> {
            if bytes.len() < n {
                return Err(fmt("truncated field file"));
            }
            let (a, b) = bytes.split_at(n);
            bytes = b;
            Ok(a)
        };
        if take(4)? != MAGIC {
            return Err(fmt("bad magic bytes, not a PATF field file"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(FieldFileError::Format(format!("unsupported version {version}")));
        }
        let dtype = Dtype::from_code(take(1)?[0])?;
        let ndim = take(1)?[0] as usize;
        let dims: Vec<u64> = (0..ndim)
            .map(|_| take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())))
            .collect::<Result<_, _>>()?;
        let n: u64 = dims.iter().product();
        let payload = take(n as usize * dtype.size())?;
        if !bytes.is_empty() {
            return Err(fmt("trailing bytes after payload"));
        }
        let data = match dtype {
            Dtype::F32 => FieldData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => FieldData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), FieldFileError> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.encode()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, FieldFileError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::decode(&bytes)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_with_sidecar(path: &Path, field: &FieldFile, sidecar: &Sidecar) -> Result<(), FieldFileError> {
    field.write(path)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(&side, json).map_err(io_err(&side))
}
