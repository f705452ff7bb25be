//! Dense space-time snapshot grids and their file formats.
//!
//! # Binary layout (little-endian)
//!
//! | field        | type              | notes                                   |
//! |--------------|-------------------|-----------------------------------------|
//! | magic        | 8 bytes           | `DHPMGRID`                              |
//! | version      | u32               | `1`                                     |
//! | spatial dims | u32               | `1` or `2`                              |
//! | channels     | u32               | number of value channels `C`            |
//! | nt, nx, ny   | u64 × 3           | `ny = 1` for one spatial dimension      |
//! | names        | C × (u32 len, utf8) |                                       |
//! | times        | nt × f64          | strictly increasing                     |
//! | xs           | nx × f64          | strictly increasing                     |
//! | ys           | ny × f64          | present only when spatial dims = 2      |
//! | payload      | C × nt·nx·ny × f64 | channel-major, then row-major `(t, x, y)` |
//!
//! # CSV layout
//!
//! Header `t,x[,y],<channel>...[,abs]`, one row per node in `(t, x, y)` order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"DHPMGRID";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("malformed grid at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("non-finite value in channel {channel} at record {index}")]
    NonFinite { channel: String, index: usize },
    #[error("axis {axis} is not strictly increasing at index {index}")]
    NotMonotone { axis: &'static str, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Field values on a tensor-product grid of times and one or two space axes.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotGrid {
    times: Vec<f64>,
    xs: Vec<f64>,
    ys: Option<Vec<f64>>,
    channels: Vec<String>,
    /// One `(nt, nx, ny)` array per channel, `ny = 1` in one dimension.
    values: Vec<Array3<f64>>,
}

fn check_increasing(axis: &'static str, v: &[f64]) -> Result<(), GridError> {
    for (i, w) in v.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(GridError::NotMonotone { axis, index: i + 1 });
        }
    }
    if let Some(i) = v.iter().position(|a| !a.is_finite()) {
        return Err(GridError::NotMonotone { axis, index: i });
    }
    Ok(())
}

impl SnapshotGrid {
    pub fn new(
        times: Vec<f64>,
        xs: Vec<f64>,
        ys: Option<Vec<f64>>,
        channels: Vec<String>,
        values: Vec<Array3<f64>>,
    ) -> Result<Self, GridError> {
        check_increasing("t", &times)?;
        check_increasing("x", &xs)?;
        if let Some(ys) = &ys {
            check_increasing("y", ys)?;
        }
        if channels.len() != values.len() || channels.is_empty() {
            return Err(GridError::Shape(format!(
                "{} channel names for {} arrays",
                channels.len(),
                values.len()
            )));
        }
        let ny = ys.as_ref().map_or(1, Vec::len);
        let shape = (times.len(), xs.len(), ny);
        for (name, v) in channels.iter().zip(&values) {
            if v.dim() != shape {
                return Err(GridError::Shape(format!(
                    "channel {name} has shape {:?}, axes imply {shape:?}",
                    v.dim()
                )));
            }
            if let Some(index) = v.iter().position(|a| !a.is_finite()) {
                return Err(GridError::NonFinite {
                    channel: name.clone(),
                    index,
                });
            }
        }
        Ok(SnapshotGrid {
            times,
            xs,
            ys,
            channels,
            values,
        })
    }

    /// A one-dimensional grid from per-channel `(nt, nx)` arrays.
    pub fn new_1d(
        times: Vec<f64>,
        xs: Vec<f64>,
        channels: Vec<String>,
        values: Vec<ndarray::Array2<f64>>,
    ) -> Result<Self, GridError> {
        let values = values
            .into_iter()
            .map(|a| {
                let (nt, nx) = a.dim();
                a.into_shape_with_order((nt, nx, 1)).expect("contiguous")
            })
            .collect();
        Self::new(times, xs, None, channels, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> Option<&[f64]> {
        self.ys.as_deref()
    }

    pub fn spatial_dims(&self) -> usize {
        if self.ys.is_some() {
            2
        } else {
            1
        }
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.values[0].dim()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize, GridError> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| GridError::UnknownChannel(name.to_string()))
    }

    pub fn channel(&self, index: usize) -> &Array3<f64> {
        &self.values[index]
    }

    pub fn channel_by_name(&self, name: &str) -> Result<&Array3<f64>, GridError> {
        Ok(&self.values[self.channel_index(name)?])
    }

    /// `(nt, nx)` view of a channel of a one-dimensional grid.
    pub fn channel_1d(&self, index: usize) -> ndarray::ArrayView2<'_, f64> {
        self.values[index].index_axis(ndarray::Axis(2), 0)
    }

    /// Appends a derived channel.
    pub fn with_channel(mut self, name: &str, values: Array3<f64>) -> Result<Self, GridError> {
        if values.dim() != self.shape() {
            return Err(GridError::Shape(format!("derived channel {name}")));
        }
        self.channels.push(name.to_string());
        self.values.push(values);
        Ok(self)
    }

    /// Keeps only the named channels, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self, GridError> {
        let mut channels = Vec::new();
        let mut values = Vec::new();
        for n in names {
            let i = self.channel_index(n)?;
            channels.push(self.channels[i].clone());
            values.push(self.values[i].clone());
        }
        Ok(SnapshotGrid {
            times: self.times.clone(),
            xs: self.xs.clone(),
            ys: self.ys.clone(),
            channels,
            values,
        })
    }

    /// Time-slice of a one-dimensional channel at snapshot `ti`.
    pub fn profile(&self, channel: usize, ti: usize) -> Vec<f64> {
        self.values[channel]
            .index_axis(ndarray::Axis(0), ti)
            .iter()
            .copied()
            .collect()
    }

    /// Short content hash identifying this grid in provenance records.
    pub fn content_id(&self) -> String {
        let mut buf = Vec::new();
        self.write_binary(&mut buf).expect("in-memory write");
        let digest = Sha256::digest(&buf);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        let (nt, nx, ny) = self.shape();
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.spatial_dims() as u32)?;
        w.write_u32::<LittleEndian>(self.channels.len() as u32)?;
        for n in [nt, nx, ny] {
            w.write_u64::<LittleEndian>(n as u64)?;
        }
        for name in &self.channels {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
        }
        let axes = self.times.iter().chain(&self.xs).chain(self.ys.iter().flatten());
        for v in axes {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for ch in &self.values {
            for v in ch.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self, GridError> {
        let mut r = CountingReader { inner: r, offset: 0 };
        let bad = |offset: u64, reason: &str| GridError::Malformed {
            offset,
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad(0, "truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(8, &format!("unsupported version {version}")));
        }
        let dims = r.u32()?;
        if dims != 1 && dims != 2 {
            return Err(bad(12, &format!("spatial dims must be 1 or 2, got {dims}")));
        }
        let n_channels = r.u32()? as usize;
        if n_channels == 0 {
            return Err(bad(16, "no channels"));
        }
        let at = r.offset;
        let (nt, nx, ny) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
        if nt == 0 || nx == 0 || ny == 0 || (dims == 1 && ny != 1) {
            return Err(bad(at, &format!("bad dimensions ({nt}, {nx}, {ny}) for {dims}D")));
        }
        let total = nt
            .checked_mul(nx)
            .and_then(|v| v.checked_mul(ny))
            .filter(|&v| v < (1usize << 40))
            .ok_or_else(|| bad(at, "dimensions overflow"))?;
        let mut channels = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let at = r.offset;
            let len = r.u32()? as usize;
            if len > 4096 {
                return Err(bad(at, "channel name too long"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| bad(r.offset, "truncated channel name"))?;
            channels.push(String::from_utf8(name).map_err(|_| bad(at, "channel name is not utf-8"))?);
        }
        let times = r.f64s(nt)?;
        let xs = r.f64s(nx)?;
        let ys = if dims == 2 { Some(r.f64s(ny)?) } else { None };
        let mut values = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let data = r.f64s(total)?;
            values.push(Array3::from_shape_vec((nt, nx, ny), data).expect("sized"));
        }
        let mut probe = [0u8; 1];
        if r.inner.read(&mut probe)? != 0 {
            return Err(bad(r.offset, "trailing bytes after payload"));
        }
        Self::new(times, xs, ys, channels, values)
    }

    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    /// Writes the CSV form. `magnitude` appends a column `abs` = sqrt(a² + b²) of two channels.
    pub fn write_csv<W: Write>(&self, w: W, magnitude: Option<(&str, &str)>) -> Result<(), GridError> {
        let mag = match magnitude {
            Some((a, b)) => Some((self.channel_index(a)?, self.channel_index(b)?)),
            None => None,
        };
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = vec!["t".into(), "x".into()];
        if self.ys.is_some() {
            header.push("y".into());
        }
        header.extend(self.channels.iter().cloned());
        if mag.is_some() {
            header.push("abs".into());
        }
        out.write_record(&header).map_err(|e| GridError::Csv(e.to_string()))?;
        let (nt, nx, ny) = self.shape();
        let mut row = Vec::with_capacity(header.len());
        for ti in 0..nt {
            for xi in 0..nx {
                for yi in 0..ny {
                    row.clear();
                    row.push(fmt_f64(self.times[ti]));
                    row.push(fmt_f64(self.xs[xi]));
                    if let Some(ys) = &self.ys {
                        row.push(fmt_f64(ys[yi]));
                    }
                    for ch in &self.values {
                        row.push(fmt_f64(ch[[ti, xi, yi]]));
                    }
                    if let Some((a, b)) = mag {
                        let (u, v) = (self.values[a][[ti, xi, yi]], self.values[b][[ti, xi, yi]]);
                        row.push(fmt_f64((u * u + v * v).sqrt()));
                    }
                    out.write_record(&row).map_err(|e| GridError::Csv(e.to_string()))?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV form back. Rows must cover the full tensor grid in `(t, x, y)` order.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, GridError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| GridError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 3 || header[0] != "t" || header[1] != "x" {
            return Err(GridError::Csv("header must start with t,x".into()));
        }
        let two_d = header[2] == "y";
        let first_channel = if two_d { 3 } else { 2 };
        let channels: Vec<String> = header[first_channel..].to_vec();
        if channels.is_empty() {
            return Err(GridError::Csv("no value columns".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| GridError::Csv(e.to_string()))?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| GridError::Csv(format!("record {i}: {e}")))?;
            if vals.len() != header.len() {
                return Err(GridError::Csv(format!("record {i}: wrong field count")));
            }
            rows.push(vals);
        }
        let distinct = |col: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let times = distinct(0);
        let xs = distinct(1);
        let ys = two_d.then(|| distinct(2));
        let ny = ys.as_ref().map_or(1, Vec::len);
        let (nt, nx) = (times.len(), xs.len());
        if rows.len() != nt * nx * ny {
            return Err(GridError::Shape(format!(
                "{} rows do not form a {nt}x{nx}x{ny} grid",
                rows.len()
            )));
        }
        let mut values: Vec<Array3<f64>> = channels.iter().map(|_| Array3::zeros((nt, nx, ny))).collect();
        for (i, row) in rows.iter().enumerate() {
            let (ti, rest) = (i / (nx * ny), i % (nx * ny));
            let (xi, yi) = (rest / ny, rest % ny);
            let matches = row[0] == times[ti]
                && row[1] == xs[xi]
                && ys.as_ref().is_none_or(|ys| row[2] == ys[yi]);
            if !matches {
                return Err(GridError::Shape(format!("record {i} is out of grid order")));
            }
            for (c, v) in values.iter_mut().enumerate() {
                v[[ti, xi, yi]] = row[first_channel + c];
            }
        }
        Self::new(times, xs, ys, channels, values)
    }
}

/// Shortest round-trip decimal form.
pub(crate) fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact(&mut self, buf: &mut [u8]) -> std::io::Result<()> {
        self.inner.read_exact(buf)?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn truncated(&self, what: &str) -> GridError {
        GridError::Malformed {
            offset: self.offset,
            reason: format!("truncated {what}"),
        }
    }

    fn u32(&mut self) -> Result<u32, GridError> {
        let v = self.inner.read_u32::<LittleEndian>().map_err(|_| self.truncated("header"))?;
        self.offset += 4;
        Ok(v)
    }

    fn u64(&mut self) -> Result<u64, GridError> {
        let v = self.inner.read_u64::<LittleEndian>().map_err(|_| self.truncated("header"))?;
        self.offset += 8;
        Ok(v)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, GridError> {
        let mut out = vec![0.0; n];
        self.inner
            .read_f64_into::<LittleEndian>(&mut out)
            .map_err(|_| self.truncated("payload"))?;
        self.offset += 8 * n as u64;
        Ok(out)
    }
}
