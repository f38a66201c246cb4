//! Binary field snapshots.
//!
//! Layout, all little-endian: magic `KMX1`, `N_x: u64`, `N: u64`, `R: f64`,
//! `γ: f64`, `t: f64`, then `N_x·N³` values of type `f64`, x-major and
//! lexicographic in v.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::grid::{DistributionField, SpatialGrid, VelocityGrid};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KMX1";
const HEADER_LEN: usize = 4 + 5 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub nx: u64,
    pub n: u64,
    pub extent: f64,
    pub gamma: f64,
    pub t: f64,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn of_field(field: &DistributionField, gamma: f64, t: f64) -> Self {
        Self {
            nx: field.nx() as u64,
            n: field.velocity().n() as u64,
            extent: field.velocity().extent(),
            gamma,
            t,
            values: field.values().to_vec(),
        }
    }

    /// Rebuilds the field on `spatial`, which must have `N_x` nodes.
    pub fn to_field(&self, spatial: Arc<SpatialGrid>) -> Result<DistributionField> {
        if spatial.nx() as u64 != self.nx {
            return Err(Error::Format(format!("snapshot has N_x = {}, spatial grid has {}", self.nx, spatial.nx())));
        }
        let velocity = Arc::new(VelocityGrid::new(self.extent, self.n as usize)?);
        DistributionField::new(spatial, velocity, self.values.clone())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.nx.to_le_bytes());
        buf.extend_from_slice(&self.n.to_le_bytes());
        for x in [self.extent, self.gamma, self.t] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for x in &self.values {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut head = [0u8; HEADER_LEN];
        r.read_exact(&mut head).map_err(|e| Error::Format(format!("short header: {e}")))?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let word = |i: usize| -> [u8; 8] { head[4 + 8 * i..12 + 8 * i].try_into().unwrap() };
        let nx = u64::from_le_bytes(word(0));
        let n = u64::from_le_bytes(word(1));
        let (extent, gamma, t) = (f64::from_le_bytes(word(2)), f64::from_le_bytes(word(3)), f64::from_le_bytes(word(4)));
        let count = nx
            .checked_mul(n.checked_pow(3).ok_or_else(|| Error::Format("N overflows".into()))?)
            .ok_or_else(|| Error::Format("N_x·N³ overflows".into()))? as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * count {
            return Err(Error::Format(format!("expected {} value bytes, found {}", 8 * count, body.len())));
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            nx,
            n,
            extent,
            gamma,
            t,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
