//! Binary field snapshots.
//!
//! Layout (all little-endian): magic `CYF1`, `u32` real dimension `2n`,
//! `2n` x `u32` resolutions, `2n` x `f64` periods, then the field values as
//! `f64`, row-major with axis 1 outermost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, TorusGrid};

pub const MAGIC: &[u8; 4] = b"CYF1";

/// Grid description stored in a snapshot header.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub resolution: Vec<usize>,
    pub periods: Vec<f64>,
}

impl SnapshotHeader {
    pub fn of(grid: &TorusGrid) -> Self {
        SnapshotHeader {
            resolution: grid.resolution().to_vec(),
            periods: grid.periods().to_vec(),
        }
    }

    pub fn matches(&self, grid: &TorusGrid) -> bool {
        self.resolution == grid.resolution() && self.periods == grid.periods()
    }
}

pub fn write_field<W: Write>(mut out: W, field: &ScalarField) -> Result<()> {
    let grid = field.grid();
    let dim = u32::try_from(grid.real_dim()).map_err(|_| Error::Snapshot("dimension overflow".into()))?;
    out.write_all(MAGIC)?;
    out.write_all(&dim.to_le_bytes())?;
    for &n in grid.resolution() {
        let n = u32::try_from(n).map_err(|_| Error::Snapshot("resolution overflow".into()))?;
        out.write_all(&n.to_le_bytes())?;
    }
    for &l in grid.periods() {
        out.write_all(&l.to_le_bytes())?;
    }
    for &v in field.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_header<R: Read>(input: &mut R) -> Result<SnapshotHeader> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot(format!("bad magic {magic:?}")));
    }
    let dim = read_u32(input)? as usize;
    if dim == 0 || !dim.is_multiple_of(2) || dim > 16 {
        return Err(Error::Snapshot(format!("invalid real dimension {dim}")));
    }
    let resolution = (0..dim)
        .map(|_| read_u32(input).map(|n| n as usize))
        .collect::<Result<Vec<_>>>()?;
    let periods = (0..dim).map(|_| read_f64(input)).collect::<Result<Vec<_>>>()?;
    Ok(SnapshotHeader { resolution, periods })
}

/// Reads a snapshot whose header must match `grid`.
pub fn read_field<R: Read>(mut input: R, grid: &Arc<TorusGrid>) -> Result<ScalarField> {
    let header = read_header(&mut input)?;
    if !header.matches(grid) {
        return Err(Error::Snapshot(format!(
            "header {:?} / {:?} does not match grid {:?}",
            header.resolution,
            header.periods,
            grid
        )));
    }
    let values = (0..grid.len())
        .map(|_| read_f64(&mut input))
        .collect::<Result<Vec<_>>>()?;
    let field = ScalarField::from_values(grid, values)?;
    field.ensure_finite("snapshot")?;
    Ok(field)
}

/// Reads a snapshot and builds a grid from its header.
pub fn read_field_with_grid<R: Read>(mut input: R) -> Result<ScalarField> {
    let header = read_header(&mut input)?;
    let grid = TorusGrid::new(header.resolution.len() / 2, header.periods, header.resolution)?;
    let values = (0..grid.len())
        .map(|_| read_f64(&mut input))
        .collect::<Result<Vec<_>>>()?;
    ScalarField::from_values(&grid, values)
}

pub fn save(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_field(&mut out, field)?;
    out.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>, grid: &Arc<TorusGrid>) -> Result<ScalarField> {
    read_field(BufReader::new(File::open(path)?), grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_are_bit_exact() {
        let g = TorusGrid::new(1, vec![1.0, 2.0], vec![4, 6]).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] - x[1]);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"CYF1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &4u32.to_le_bytes());
        assert_eq!(&buf[12..16], &6u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&buf[24..32], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 32 + 8 * 24);
        // second value: axis 1 varies fastest
        let v1 = f64::from_le_bytes(buf[40..48].try_into().unwrap());
        assert_eq!(v1, -2.0 / 6.0);
    }

    #[test]
    fn mismatched_header_is_rejected() {
        let g = TorusGrid::unit(1, 4).unwrap();
        let other = TorusGrid::unit(1, 6).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &ScalarField::zeros(&g)).unwrap();
        assert!(matches!(read_field(&buf[..], &other), Err(Error::Snapshot(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_field(&bad[..], &g).is_err());
        assert!(read_field(&buf[..buf.len() - 3], &g).is_err());
    }
}
