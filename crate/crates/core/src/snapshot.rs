//! On-disk form of a [`StateVector`]: JSON or little-endian binary.
//!
//! Binary layout: magic `TDSV`, `u32` layout version, `u64` N, `u64` M,
//! `f64` ℓ, `f64` time, `u64` dim, then `dim` pairs `(re, im)` of `f64`.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Layout, StateVector};

const MAGIC: &[u8; 4] = b"TDSV";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    #[default]
    Json,
    Binary,
}

impl SnapshotFormat {
    pub fn extension(self) -> &'static str {
        match self {
            SnapshotFormat::Json => "json",
            SnapshotFormat::Binary => "bin",
        }
    }
}

impl std::str::FromStr for SnapshotFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "binary" => Ok(Self::Binary),
            other => Err(format!("unknown snapshot format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub n_cells: usize,
    pub n_rho: usize,
    pub ell: f64,
    pub layout_version: u32,
    pub time: f64,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Snapshot {
    pub fn new(state: &StateVector, g: &GridSpec, time: f64) -> Result<Self> {
        if state.layout() != g.layout() {
            return Err(Error::DimensionMismatch {
                expected: g.layout().dim(),
                found: state.dim(),
            });
        }
        Ok(Self {
            n_cells: g.n_cells,
            n_rho: g.n_rho,
            ell: g.ell,
            layout_version: Layout::VERSION,
            time,
            re: state.as_slice().iter().map(|c| c.re).collect(),
            im: state.as_slice().iter().map(|c| c.im).collect(),
        })
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n_cells, self.n_rho, self.ell)
    }

    pub fn state(&self) -> Result<StateVector> {
        if self.layout_version != Layout::VERSION {
            return Err(Error::Snapshot(format!(
                "layout version {} is not supported (expected {})",
                self.layout_version,
                Layout::VERSION
            )));
        }
        if self.re.len() != self.im.len() {
            return Err(Error::Snapshot("real and imaginary parts differ in length".into()));
        }
        let data = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        StateVector::from_vec(self.grid()?.layout(), data)
    }

    pub fn write<W: Write>(&self, mut w: W, format: SnapshotFormat) -> Result<()> {
        match format {
            SnapshotFormat::Json => {
                serde_json::to_writer(&mut w, self)?;
                w.write_all(b"\n")?;
            }
            SnapshotFormat::Binary => {
                w.write_all(MAGIC)?;
                w.write_all(&self.layout_version.to_le_bytes())?;
                w.write_all(&(self.n_cells as u64).to_le_bytes())?;
                w.write_all(&(self.n_rho as u64).to_le_bytes())?;
                w.write_all(&self.ell.to_le_bytes())?;
                w.write_all(&self.time.to_le_bytes())?;
                w.write_all(&(self.re.len() as u64).to_le_bytes())?;
                for (r, i) in self.re.iter().zip(&self.im) {
                    w.write_all(&r.to_le_bytes())?;
                    w.write_all(&i.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, format: SnapshotFormat) -> Result<Self> {
        match format {
            SnapshotFormat::Json => Ok(serde_json::from_reader(r)?),
            SnapshotFormat::Binary => {
                let mut magic = [0u8; 4];
                r.read_exact(&mut magic)?;
                if &magic != MAGIC {
                    return Err(Error::Snapshot("bad magic bytes".into()));
                }
                let mut b4 = [0u8; 4];
                let mut b8 = [0u8; 8];
                let mut u64_ = |r: &mut R| -> Result<u64> {
                    r.read_exact(&mut b8)?;
                    Ok(u64::from_le_bytes(b8))
                };
                r.read_exact(&mut b4)?;
                let layout_version = u32::from_le_bytes(b4);
                let n_cells = u64_(&mut r)? as usize;
                let n_rho = u64_(&mut r)? as usize;
                let ell = f64::from_bits(u64_(&mut r)?);
                let time = f64::from_bits(u64_(&mut r)?);
                let dim = u64_(&mut r)? as usize;
                let expected = GridSpec::new(n_cells, n_rho, ell)?.layout().dim();
                if dim != expected {
                    return Err(Error::DimensionMismatch { expected, found: dim });
                }
                let (mut re, mut im) = (Vec::with_capacity(dim), Vec::with_capacity(dim));
                for _ in 0..dim {
                    re.push(f64::from_bits(u64_(&mut r)?));
                    im.push(f64::from_bits(u64_(&mut r)?));
                }
                Ok(Self {
                    n_cells,
                    n_rho,
                    ell,
                    layout_version,
                    time,
                    re,
                    im,
                })
            }
        }
    }
}
