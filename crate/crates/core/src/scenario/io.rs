//! `CHDS` binary dataset format. Layout is documented in `docs/format.md`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use super::{Dataset, GridSpec, Location};
use crate::channel::{ArrayConfig, ChannelSample, MultipathComponent};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CHDS";
pub const FORMAT_VERSION: u16 = 1;

const FLAG_LOCATIONS: u16 = 1 << 0;
const FLAG_LABELS: u16 = 1 << 1;
const FLAG_PATHS: u16 = 1 << 2;
const KNOWN_FLAGS: u16 = FLAG_LOCATIONS | FLAG_LABELS | FLAG_PATHS;

const HEADER_LEN: usize = 84;

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    let mut flags = 0u16;
    if ds.hidden_locations.is_some() {
        flags |= FLAG_LOCATIONS;
    }
    if ds.ch_labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if ds.paths.is_some() {
        flags |= FLAG_PATHS;
    }
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&flags.to_le_bytes());
    header.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    header.extend_from_slice(&(ds.array.num_antennas as u32).to_le_bytes());
    header.extend_from_slice(&(ds.array.num_subcarriers as u32).to_le_bytes());
    header.extend_from_slice(&ds.array.carrier_frequency.to_le_bytes());
    header.extend_from_slice(&ds.array.bandwidth.to_le_bytes());
    header.extend_from_slice(&(ds.grid.rows as u32).to_le_bytes());
    header.extend_from_slice(&(ds.grid.cols as u32).to_le_bytes());
    header.extend_from_slice(&ds.grid.spacing.to_le_bytes());
    for v in [ds.grid.origin.x, ds.grid.origin.y, ds.grid.origin.z, ds.grid.ue_height] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    debug_assert_eq!(header.len(), HEADER_LEN);
    w.write_all(&header)?;

    let mut buf = Vec::with_capacity(8 * ds.array.num_antennas * ds.array.num_subcarriers);
    for s in &ds.samples {
        buf.clear();
        for z in s.matrix.iter() {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    if let Some(locs) = &ds.hidden_locations {
        for l in locs {
            for v in [l.x, l.y, l.z] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    if let Some(labels) = &ds.ch_labels {
        let bytes: Vec<u8> = labels.iter().map(|&b| b as u8).collect();
        w.write_all(&bytes)?;
    }
    if let Some(paths) = &ds.paths {
        for list in paths {
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for m in list {
                for v in [m.amplitude.re, m.amplitude.im, m.aoa, m.delay] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::Truncated { section, expected: n - remaining });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32(&mut self, section: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f64(&mut self, section: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };

    // magic and version are checked before anything else is trusted
    let magic = c.take(4, "header")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic bytes {magic:02x?}")));
    }
    let version = c.u16("header")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, supported: FORMAT_VERSION });
    }
    let flags = c.u16("header")?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#06x}")));
    }
    let m = c.u32("header")? as usize;
    let n = c.u32("header")? as usize;
    let f = c.u32("header")? as usize;
    let carrier_frequency = c.f64("header")?;
    let bandwidth = c.f64("header")?;
    let rows = c.u32("header")? as usize;
    let cols = c.u32("header")? as usize;
    let spacing = c.f64("header")?;
    let origin = Location::new(c.f64("header")?, c.f64("header")?, c.f64("header")?);
    let ue_height = c.f64("header")?;

    let array = ArrayConfig { num_antennas: n, carrier_frequency, bandwidth, num_subcarriers: f };
    let grid = GridSpec { rows, cols, spacing, origin, ue_height };
    array.validate().map_err(|e| Error::Format(format!("invalid array header: {e}")))?;
    grid.validate().map_err(|e| Error::Format(format!("invalid grid header: {e}")))?;
    if rows.checked_mul(cols) != Some(m) {
        return Err(Error::Format(format!("sample count {m} does not match a {rows}x{cols} grid")));
    }
    let payload = m
        .checked_mul(n)
        .and_then(|v| v.checked_mul(f))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if bytes.len() - c.pos < payload {
        return Err(Error::Truncated { section: "payload", expected: payload - (bytes.len() - c.pos) });
    }

    let mut samples = Vec::with_capacity(m);
    for id in 0..m {
        let mut values = Vec::with_capacity(n * f);
        for _ in 0..n * f {
            let re = c.f32("payload")? as f64;
            let im = c.f32("payload")? as f64;
            values.push(Complex64::new(re, im));
        }
        let matrix = Array2::from_shape_vec((n, f), values).expect("shape matches length");
        samples.push(ChannelSample { matrix, sample_id: id });
    }
    let mut ds = Dataset::new(samples, array, grid).map_err(|e| Error::Format(e.to_string()))?;

    if flags & FLAG_LOCATIONS != 0 {
        let mut locs = Vec::with_capacity(m);
        for _ in 0..m {
            locs.push(Location::new(c.f64("locations")?, c.f64("locations")?, c.f64("locations")?));
        }
        ds.hidden_locations = Some(locs);
    }
    if flags & FLAG_LABELS != 0 {
        let raw = c.take(m, "labels")?;
        let labels = raw
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("label byte {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        ds.ch_labels = Some(labels);
    }
    if flags & FLAG_PATHS != 0 {
        let mut paths = Vec::with_capacity(m);
        for _ in 0..m {
            let k = c.u32("paths")? as usize;
            let mut list = Vec::with_capacity(k.min(1024));
            for _ in 0..k {
                let amplitude = Complex64::new(c.f64("paths")?, c.f64("paths")?);
                let aoa = c.f64("paths")?;
                let delay = c.f64("paths")?;
                list.push(MultipathComponent { amplitude, aoa, delay });
            }
            paths.push(list);
        }
        ds.paths = Some(paths);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last block", bytes.len() - c.pos)));
    }
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build_grid;

    fn sample_dataset(rows: usize, cols: usize, with_extras: bool) -> Dataset {
        let array = ArrayConfig { num_antennas: 3, num_subcarriers: 2, ..ArrayConfig::default() };
        let grid = GridSpec { rows, cols, spacing: 0.2, origin: Location::new(1.0, 2.0, 0.0), ue_height: 1.5 };
        let samples = (0..grid.len())
            .map(|m| ChannelSample {
                matrix: Array2::from_shape_fn((3, 2), |(p, q)| {
                    Complex64::new((m * 7 + p) as f64 * 0.1, -((q + m) as f64).sqrt())
                }),
                sample_id: m,
            })
            .collect();
        let ds = Dataset::new(samples, array, grid).unwrap();
        if !with_extras {
            return ds;
        }
        let paths = (0..grid.len())
            .map(|m| {
                (0..m % 3)
                    .map(|k| MultipathComponent::new(Complex64::new(0.1 * k as f64, 1e-7), 1.2, 3e-9 * m as f64))
                    .collect()
            })
            .collect();
        ds.with_locations(build_grid(&grid))
            .unwrap()
            .with_labels((0..grid.len()).map(|m| m % 4 == 1).collect())
            .unwrap()
            .with_paths(paths)
            .unwrap()
    }

    fn encode(ds: &Dataset) -> Vec<u8> {
        let mut out = Vec::new();
        write_dataset(ds, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_with_and_without_hidden_blocks() {
        for extras in [false, true] {
            let ds = sample_dataset(3, 4, extras);
            let back = read_dataset(encode(&ds).as_slice()).unwrap();
            assert_eq!(back, ds);
            assert_eq!(back.hidden_locations.is_some(), extras);
            assert_eq!(back.ch_labels.is_some(), extras);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample_dataset(2, 2, false));
        assert_eq!(&bytes[0..4], b"CHDS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 3 * 2 * 8);
    }

    #[test]
    fn corrupted_inputs_map_to_distinct_errors() {
        let good = encode(&sample_dataset(3, 3, true));

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_dataset(bad_magic.as_slice()), Err(Error::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(read_dataset(bad_version.as_slice()), Err(Error::Version { found: 9, .. })));

        assert!(matches!(
            read_dataset(&good[..40]),
            Err(Error::Truncated { section: "header", .. })
        ));
        assert!(matches!(
            read_dataset(&good[..HEADER_LEN + 10]),
            Err(Error::Truncated { section: "payload", .. })
        ));
        assert!(matches!(read_dataset(&good[..good.len() - 3]), Err(Error::Truncated { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(read_dataset(trailing.as_slice()), Err(Error::Format(_))));

        let mut bad_flags = good;
        bad_flags[6] = 0x80;
        assert!(matches!(read_dataset(bad_flags.as_slice()), Err(Error::Format(_))));
    }
}
