//! On-disk trajectory datasets.
//!
//! A dataset file is a little-endian header followed by the raw frames:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `ECFD` |
//! | 2 | format version (u16, currently 1) |
//! | 2 | byte-order marker `0xFEFF` (reads as `0xFFFE` on a big-endian file) |
//! | 1 | problem tag (u8) |
//! | 1 | boundary tag (u8) |
//! | 1 | precision (u8: 4 = f32, 8 = f64) |
//! | 1 | spatial dimension (u8) |
//! | 16 | domain lengths (2 x f64; unused axes hold 1.0) |
//! | 8 | resolution (2 x u32; unused axes hold 1) |
//! | 4 | channels (u32) |
//! | 4 | samples (u32) |
//! | 4 | snapshots (u32) |
//! | channels | conservation mask, one byte per channel (0 or 1) |
//! | 8 x samples | per-sample seeds (u64) |
//! | 8 | payload length in bytes (u64) |
//! | 4 | CRC-32 of every header byte before this field followed by the payload |
//!
//! The payload holds the values sample-major, then time, then channel, then
//! grid point (row-major), each as an f32 or f64. The JSON sidecar next to the
//! file (same name, `.json` extension) records the generation parameters.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{DatasetMeta, Sample, TrajectoryDataset};
use crate::ecf::ConservationMask;
use crate::error::{EcfError, Result};
use crate::grid::{Boundary, GridSpec, Precision};
use crate::solvers::ProblemKind;

pub const DATASET_MAGIC: &[u8; 4] = b"ECFD";
pub const DATASET_VERSION: u16 = 1;
const BYTE_ORDER_MARK: u16 = 0xFEFF;

fn precision_tag(p: Precision) -> u8 {
    p.byte_width() as u8
}

fn precision_from_tag(tag: u8) -> Result<Precision> {
    match tag {
        4 => Ok(Precision::F32),
        8 => Ok(Precision::F64),
        _ => Err(EcfError::Format(format!("unknown precision tag {tag}"))),
    }
}

/// Sidecar path of a dataset file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| EcfError::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| EcfError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        EcfError::io(path, e)
    })
}

/// Serializes a dataset; values are rounded to `precision` on the way out.
pub fn encode_dataset(ds: &TrajectoryDataset, precision: Precision) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(DATASET_MAGIC);
    b.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    b.extend_from_slice(&BYTE_ORDER_MARK.to_le_bytes());
    b.push(ds.problem.tag());
    b.push(ds.grid.boundary().tag());
    b.push(precision_tag(precision));
    b.push(ds.grid.dims() as u8);
    for a in 0..2 {
        let l = ds.grid.lengths().get(a).copied().unwrap_or(1.0);
        b.extend_from_slice(&l.to_le_bytes());
    }
    for a in 0..2 {
        let n = ds.grid.resolution().get(a).copied().unwrap_or(1);
        b.extend_from_slice(&(n as u32).to_le_bytes());
    }
    b.extend_from_slice(&(ds.channels as u32).to_le_bytes());
    b.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    b.extend_from_slice(&(ds.snapshots as u32).to_le_bytes());
    b.extend(ds.mask.flags().iter().map(|&f| f as u8));
    for s in ds.samples() {
        b.extend_from_slice(&s.seed.to_le_bytes());
    }
    let payload_len = ds.len() * ds.snapshots * ds.frame_len() * precision.byte_width();
    b.extend_from_slice(&(payload_len as u64).to_le_bytes());
    let header_len = b.len();
    b.extend_from_slice(&[0; 4]);
    b.reserve(payload_len);
    for s in ds.samples() {
        match precision {
            Precision::F32 => s.frames.iter().for_each(|&v| b.extend_from_slice(&(v as f32).to_le_bytes())),
            Precision::F64 => s.frames.iter().for_each(|&v| b.extend_from_slice(&v.to_le_bytes())),
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&b[..header_len]);
    hasher.update(&b[header_len + 4..]);
    let crc = hasher.finalize();
    b[header_len..header_len + 4].copy_from_slice(&crc.to_le_bytes());
    b
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            EcfError::Format(format!("header truncated at byte {} of {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a dataset file image; `meta` comes from the sidecar.
pub fn decode_dataset(bytes: &[u8], meta: DatasetMeta) -> Result<TrajectoryDataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).map_err(|_| EcfError::Format("bad magic: file too short".into()))? != DATASET_MAGIC {
        return Err(EcfError::Format("bad magic: not an ECFD dataset".into()));
    }
    let version = c.u16()?;
    if version != DATASET_VERSION {
        return Err(EcfError::Format(format!(
            "unsupported version {version} (this build reads version {DATASET_VERSION})"
        )));
    }
    match c.u16()? {
        BYTE_ORDER_MARK => {}
        0xFFFE => return Err(EcfError::Format("big-endian file; only little-endian datasets are supported".into())),
        other => return Err(EcfError::Format(format!("bad byte-order marker {other:#06x}"))),
    }
    let problem = ProblemKind::from_tag(c.u8()?).ok_or_else(|| EcfError::Format("unknown problem tag".into()))?;
    let boundary = Boundary::from_tag(c.u8()?).ok_or_else(|| EcfError::Format("unknown boundary tag".into()))?;
    let precision = precision_from_tag(c.u8()?)?;
    let dims = c.u8()? as usize;
    if !(1..=2).contains(&dims) {
        return Err(EcfError::Format(format!("unsupported dimension {dims}")));
    }
    let lengths = [c.f64()?, c.f64()?];
    let resolution = [c.u32()? as usize, c.u32()? as usize];
    let grid = GridSpec::new(&lengths[..dims], &resolution[..dims], boundary)?;
    let channels = c.u32()? as usize;
    let samples = c.u32()? as usize;
    let snapshots = c.u32()? as usize;
    let mask = ConservationMask::new(c.take(channels)?.iter().map(|&f| f != 0).collect());
    let seeds: Vec<u64> = (0..samples).map(|_| c.u64()).collect::<Result<_>>()?;
    let declared = c.u64()? as usize;
    let frame_len = channels * grid.len();
    let expected = samples * snapshots * frame_len * precision.byte_width();
    if declared != expected {
        return Err(EcfError::Format(format!(
            "payload size mismatch: header shape needs {expected} bytes but declares {declared}"
        )));
    }
    let header_len = c.pos;
    let stored_crc = c.u32()?;
    let payload = &bytes[c.pos..];
    if payload.len() != declared {
        return Err(EcfError::Format(format!(
            "payload size mismatch: header declares {declared} bytes, file holds {}",
            payload.len()
        )));
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes[..header_len]);
    hasher.update(payload);
    let crc = hasher.finalize();
    if crc != stored_crc {
        return Err(EcfError::Format(format!("checksum mismatch: stored {stored_crc:08x}, computed {crc:08x}")));
    }
    let width = precision.byte_width();
    let values: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(width)
            .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => payload
            .chunks_exact(width)
            .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
            .collect(),
    };
    let per_sample = snapshots * frame_len;
    let samples = seeds
        .into_iter()
        .enumerate()
        .map(|(i, seed)| Sample {
            seed,
            frames: values[i * per_sample..(i + 1) * per_sample].to_vec(),
        })
        .collect();
    Ok(TrajectoryDataset::new(problem, grid, channels, snapshots, mask, meta, samples)?.with_precision(precision))
}

/// Writes the dataset file and its sidecar, each atomically.
pub fn write_dataset(ds: &TrajectoryDataset, path: &Path, precision: Precision) -> Result<()> {
    let sidecar = serde_json::to_string_pretty(&ds.meta).map_err(|e| EcfError::Format(e.to_string()))?;
    write_atomic(path, &encode_dataset(ds, precision))?;
    write_atomic(&sidecar_path(path), format!("{sidecar}\n").as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let bytes = fs::read(path).map_err(|e| EcfError::io(path, e))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| EcfError::io(&side, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| EcfError::Format(format!("{}: {e}", side.display())))?;
    decode_dataset(&bytes, meta).map_err(|e| match e {
        EcfError::Format(msg) => EcfError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::solvers::ProblemParams;

    fn small() -> TrajectoryDataset {
        let grid = GridSpec::new(&[1.0, 2.0], &[3, 4], Boundary::Wall).unwrap();
        let meta = DatasetMeta {
            split: Split::Test,
            master_seed: 9,
            params: ProblemParams::paper(ProblemKind::Water),
            frame_dt: 0.05,
            generator: "test".into(),
            audit: None,
        };
        let samples = (0..2)
            .map(|s| Sample {
                seed: 100 + s,
                frames: (0..2 * 3 * 12).map(|i| 1.0 + (i as f64 * 0.37 + s as f64).sin() / 3.0).collect(),
            })
            .collect();
        TrajectoryDataset::new(ProblemKind::Water, grid, 3, 2, ConservationMask::only(3, 0), meta, samples).unwrap()
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let ds = small();
        let back = decode_dataset(&encode_dataset(&ds, Precision::F64), ds.meta.clone()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn f32_round_trip_rounds_to_nearest() {
        let ds = small();
        let back = decode_dataset(&encode_dataset(&ds, Precision::F32), ds.meta.clone()).unwrap();
        assert_eq!(back.precision, Precision::F32);
        for (a, b) in back.samples().iter().zip(ds.samples()) {
            for (x, y) in a.frames.iter().zip(&b.frames) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let ds = small();
        let bytes = encode_dataset(&ds, Precision::F64);
        let err = decode_dataset(&bytes[..bytes.len() - 3], ds.meta.clone()).unwrap_err();
        assert!(err.to_string().contains("payload size mismatch"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad, ds.meta.clone()).unwrap_err().to_string().contains("bad magic"));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_dataset(&bad, ds.meta.clone()).unwrap_err().to_string().contains("unsupported version"));
        let mut bad = bytes.clone();
        bad[6..8].copy_from_slice(&0xFEFFu16.to_be_bytes());
        assert!(decode_dataset(&bad, ds.meta.clone()).unwrap_err().to_string().contains("big-endian"));
        let mut bad = bytes;
        let last = bad.len() - 1;
        bad[last] ^= 0x10;
        assert!(decode_dataset(&bad, ds.meta).unwrap_err().to_string().contains("checksum mismatch"));
    }
}
