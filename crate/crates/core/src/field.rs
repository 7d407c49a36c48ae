//! Scalar fields on regular grids and their on-disk formats.
//!
//! `BLFD v1` layout (little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `BLFD` |
//! | 4 | `u32` version, always 1 |
//! | 16 | `u32` nx, ny, nz, nt |
//! | 16 | `f64` dx, dt |
//! | 4 | `u32` name length |
//! | n | UTF-8 name |
//! | 8·N | `f64` values, x fastest, then y, z, t |
//!
//! Surface series are written with `nz = 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BLFD";
const VERSION: u32 = 1;
/// Largest field accepted through the CSV text path.
pub const CSV_VALUE_LIMIT: usize = 1_000_000;

/// Scalar field sampled on a uniform `nx × ny × nz × nt` space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field4D {
    dims: [usize; 4],
    dx: f64,
    dt: f64,
    name: String,
    values: Vec<f64>,
}

impl Field4D {
    pub fn new(
        name: impl Into<String>,
        dims: [usize; 4],
        dx: f64,
        dt: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::InvalidArgument(format!("field dims must be >= 1, got {dims:?}")));
        }
        if !(dx > 0.0 && dx.is_finite() && dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spacings must be positive, got dx={dx}, dt={dt}"
            )));
        }
        let n = dims.iter().product::<usize>();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "{dims:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at flat index {i}")));
        }
        Ok(Self {
            dims,
            dx,
            dt,
            name: name.into(),
            values,
        })
    }

    /// Builds a field by evaluating `f(i, j, k, t)` at every grid point.
    pub fn from_fn(
        name: impl Into<String>,
        dims: [usize; 4],
        dx: f64,
        dt: f64,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let [nx, ny, nz, nt] = dims;
        let mut values = Vec::with_capacity(nx * ny * nz * nt);
        for t in 0..nt {
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        values.push(f(i, j, k, t));
                    }
                }
            }
        }
        Self::new(name, dims, dx, dt, values)
    }

    pub fn constant(name: impl Into<String>, dims: [usize; 4], dx: f64, dt: f64, v: f64) -> Result<Self> {
        Self::new(name, dims, dx, dt, vec![v; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, t: usize) -> usize {
        let [nx, ny, nz, _] = self.dims;
        i + nx * (j + ny * (k + nz * t))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, t: usize) -> f64 {
        self.values[self.index(i, j, k, t)]
    }

    /// Same grid, new values computed pointwise.
    pub fn map(&self, name: impl Into<String>, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            name,
            self.dims,
            self.dx,
            self.dt,
            self.values.iter().map(|v| f(*v)).collect(),
        )
    }

    /// Pointwise combination of two co-registered fields.
    pub fn zip_with(
        &self,
        other: &Field4D,
        name: impl Into<String>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.check_same_grid(other)?;
        Self::new(
            name,
            self.dims,
            self.dx,
            self.dt,
            self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        )
    }

    pub fn check_same_grid(&self, other: &Field4D) -> Result<()> {
        if self.dims != other.dims || self.dx != other.dx || self.dt != other.dt {
            return Err(Error::Shape(format!(
                "`{}` {:?} (dx={}, dt={}) is not co-registered with `{}` {:?} (dx={}, dt={})",
                self.name, self.dims, self.dx, self.dt, other.name, other.dims, other.dx, other.dt
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_blfd(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_blfd_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_blfd_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.dx.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&(self.name.len() as u32).to_le_bytes())?;
        w.write_all(self.name.as_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_blfd(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_blfd_from(BufReader::new(file))
    }

    pub fn read_blfd_from<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader { inner: r, offset: 0 };
        let magic: [u8; 4] = r.array()?;
        if &magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected \"BLFD\""),
            });
        }
        let at = r.offset;
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format {
                offset: at,
                message: format!("unsupported version {version}"),
            });
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let at = r.offset;
            *d = u32::from_le_bytes(r.array()?) as usize;
            if *d == 0 {
                return Err(Error::Format {
                    offset: at,
                    message: "zero grid dimension".into(),
                });
            }
        }
        let at = r.offset;
        let dx = f64::from_le_bytes(r.array()?);
        let dt = f64::from_le_bytes(r.array()?);
        if !(dx > 0.0 && dt > 0.0 && dx.is_finite() && dt.is_finite()) {
            return Err(Error::Format {
                offset: at,
                message: format!("non-positive spacing dx={dx}, dt={dt}"),
            });
        }
        let name_len = u32::from_le_bytes(r.array()?) as usize;
        let at = r.offset;
        let mut name = vec![0u8; name_len];
        r.fill(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format {
            offset: at,
            message: "field name is not UTF-8".into(),
        })?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::Format {
                offset: 8,
                message: "grid size overflows".into(),
            })?;
        let mut values = Vec::with_capacity(n.min(1 << 28));
        for _ in 0..n {
            let at = r.offset;
            let v = f64::from_le_bytes(r.array()?);
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: at,
                    message: format!("non-finite value {v}"),
                });
            }
            values.push(v);
        }
        let mut extra = [0u8; 1];
        if r.inner.read(&mut extra).unwrap_or(0) != 0 {
            return Err(Error::Format {
                offset: r.offset,
                message: "trailing bytes after values".into(),
            });
        }
        Field4D::new(name, dims, dx, dt, values)
    }

    /// Writes the text form with header `x_index,y_index,z_index,t_index,value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x_index", "y_index", "z_index", "t_index", "value"])?;
        let [nx, ny, nz, nt] = self.dims;
        for t in 0..nt {
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        w.write_record(&[
                            i.to_string(),
                            j.to_string(),
                            k.to_string(),
                            t.to_string(),
                            format!("{:.16e}", self.get(i, j, k, t)),
                        ])?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the text form. Grid extents are inferred from the largest indices and
    /// every grid point must appear exactly once.
    pub fn read_csv(path: impl AsRef<Path>, name: &str, dx: f64, dt: f64) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let expected = ["x_index", "y_index", "z_index", "t_index", "value"];
        let headers = rdr.headers()?.clone();
        for (index, want) in expected.iter().enumerate() {
            let found = headers.get(index).unwrap_or("");
            if found != *want {
                return Err(Error::Header {
                    index,
                    found: found.to_string(),
                    expected: want.to_string(),
                });
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rows.len() >= CSV_VALUE_LIMIT {
                return Err(Error::InvalidArgument(format!(
                    "csv field input is limited to {CSV_VALUE_LIMIT} values; use BLFD"
                )));
            }
            let parse_idx = |c: usize| -> Result<usize> {
                rec.get(c)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad index in row {}", rows.len() + 1)))
            };
            let idx = [parse_idx(0)?, parse_idx(1)?, parse_idx(2)?, parse_idx(3)?];
            let v: f64 = rec
                .get(4)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad value in row {}", rows.len() + 1)))?;
            rows.push((idx, v));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no values", path.display())));
        }
        let mut dims = [0usize; 4];
        for (idx, _) in &rows {
            for a in 0..4 {
                dims[a] = dims[a].max(idx[a] + 1);
            }
        }
        let n: usize = dims.iter().product();
        if n != rows.len() {
            return Err(Error::Shape(format!(
                "csv has {} rows but its indices span {dims:?} = {n} points",
                rows.len()
            )));
        }
        let mut values = vec![f64::NAN; n];
        let mut seen = vec![false; n];
        for (idx, v) in rows {
            let flat = idx[0] + dims[0] * (idx[1] + dims[1] * (idx[2] + dims[2] * idx[3]));
            if seen[flat] {
                return Err(Error::InvalidArgument(format!("duplicate grid point {idx:?}")));
            }
            seen[flat] = true;
            values[flat] = v;
        }
        Field4D::new(name, dims, dx, dt, values)
    }
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::Format {
                        offset: self.offset + got as u64,
                        message: format!("unexpected end of file ({} more bytes needed)", buf.len() - got),
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(Error::Format {
                        offset: self.offset + got as u64,
                        message: e.to_string(),
                    })
                }
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }
}

/// Scalar field on the heated surface over time, `nx × ny × nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSeries(Field4D);

impl SurfaceSeries {
    pub fn new(
        name: impl Into<String>,
        dims: [usize; 3],
        dx: f64,
        dt: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        Field4D::new(name, [dims[0], dims[1], 1, dims[2]], dx, dt, values).map(Self)
    }

    pub fn from_fn(
        name: impl Into<String>,
        dims: [usize; 3],
        dx: f64,
        dt: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        Field4D::from_fn(name, [dims[0], dims[1], 1, dims[2]], dx, dt, |i, j, _, t| f(i, j, t))
            .map(Self)
    }

    /// Wraps a field whose z extent is 1.
    pub fn from_field(field: Field4D) -> Result<Self> {
        if field.dims[2] != 1 {
            return Err(Error::Shape(format!(
                "surface series needs nz = 1, `{}` has nz = {}",
                field.name, field.dims[2]
            )));
        }
        Ok(Self(field))
    }

    pub fn dims(&self) -> [usize; 3] {
        let [nx, ny, _, nt] = self.0.dims;
        [nx, ny, nt]
    }

    pub fn dx(&self) -> f64 {
        self.0.dx
    }

    pub fn dt(&self) -> f64 {
        self.0.dt
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.0.get(i, j, 0, t)
    }

    pub fn as_field(&self) -> &Field4D {
        &self.0
    }

    pub fn into_field(self) -> Field4D {
        self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    pub fn write_blfd(&self, path: impl AsRef<Path>) -> Result<()> {
        self.0.write_blfd(path)
    }

    pub fn read_blfd(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_field(Field4D::read_blfd(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp() -> Field4D {
        Field4D::from_fn("ramp", [3, 2, 2, 2], 0.5, 0.1, |i, j, k, t| {
            (i + 10 * j + 100 * k + 1000 * t) as f64
        })
        .unwrap()
    }

    #[test]
    fn layout_is_x_fastest() {
        let f = ramp();
        assert_eq!(f.values()[0..4], [0.0, 1.0, 2.0, 10.0]);
        assert_eq!(f.get(2, 1, 1, 1), 1112.0);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Field4D::new("a", [0, 1, 1, 1], 1.0, 1.0, vec![]).is_err());
        assert!(Field4D::new("a", [1, 1, 1, 1], 0.0, 1.0, vec![1.0]).is_err());
        assert!(Field4D::new("a", [2, 1, 1, 1], 1.0, 1.0, vec![1.0]).is_err());
        assert!(Field4D::new("a", [1, 1, 1, 1], 1.0, 1.0, vec![f64::NAN]).is_err());
    }

    #[test]
    fn blfd_header_layout() {
        let f = Field4D::constant("p", [1, 1, 1, 1], 2.0, 3.0, 1.5).unwrap();
        let mut buf = Vec::new();
        f.write_blfd_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"BLFD");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 2.0);
        assert_eq!(u32::from_le_bytes(buf[40..44].try_into().unwrap()), 1);
        assert_eq!(&buf[44..45], b"p");
        assert_eq!(f64::from_le_bytes(buf[45..53].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 53);
    }

    #[test]
    fn blfd_reports_offsets() {
        let mut buf = Vec::new();
        ramp().write_blfd_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Field4D::read_blfd_from(&bad[..]), Err(Error::Format { offset: 0, .. })));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(Field4D::read_blfd_from(&bad[..]), Err(Error::Format { offset: 4, .. })));

        let truncated = &buf[..buf.len() - 3];
        match Field4D::read_blfd_from(truncated) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, buf.len() - 3),
            other => panic!("{other:?}"),
        }

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(Field4D::read_blfd_from(&long[..]), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let f = ramp().map("ramp", |v| v * 0.1 + 1e-7).unwrap();
        f.write_csv(&path).unwrap();
        let back = Field4D::read_csv(&path, "ramp", 0.5, 0.1).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn surface_requires_flat_z() {
        assert!(SurfaceSeries::from_field(ramp()).is_err());
        let s = SurfaceSeries::from_fn("q", [2, 3, 1], 1.0, 1.0, |i, j, _| (i * j) as f64).unwrap();
        assert_eq!(s.dims(), [2, 3, 1]);
        assert_eq!(s.get(1, 2, 0), 2.0);
    }

    proptest! {
        #[test]
        fn blfd_round_trips_bit_exact(
            values in proptest::collection::vec(-1e300f64..1e300, 12),
            name in "[a-z_]{0,12}",
        ) {
            let f = Field4D::new(name, [3, 2, 1, 2], 1.25e-4, 0.025, values).unwrap();
            let mut buf = Vec::new();
            f.write_blfd_to(&mut buf).unwrap();
            let back = Field4D::read_blfd_from(&buf[..]).unwrap();
            prop_assert_eq!(
                back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back, f);
        }
    }
}
