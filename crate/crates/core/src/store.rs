//! On-disk formats.
//!
//! Dataset: `HDLD0001`, then per record a little-endian `u64` index followed by
//! the `c`, mask, `Re u`, `Im u` grids as `f64`. The sidecar manifest
//! (`<file>.manifest.json`) carries the metadata and the file's SHA-256.
//!
//! Checkpoint: `HDLC0001`, `u64` header length, JSON header, raw then EMA
//! parameters as `f64`, and a trailing SHA-256 of everything before it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{Checkpoint, TargetNormalization};
use crate::error::{Error, Result};
use crate::fields::{GrfHyperParams, SourceDisk, SpeedNormalization};
use crate::grid::Shape;

pub const DATASET_MAGIC: &[u8; 8] = b"HDLD0001";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HDLC0001";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub index: u64,
    pub c: Vec<f64>,
    pub mask: Vec<f64>,
    pub u: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn ranges(&self) -> [std::ops::Range<usize>; 3] {
        let (a, b) = (self.train, self.train + self.val);
        [0..a, a..b, b..self.total()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub frequency_hz: f64,
    pub shape: Shape,
    pub dx: f64,
    pub length: f64,
    pub grf: GrfHyperParams,
    pub draw_shape: bool,
    pub source: SourceDisk,
    pub encoding_levels: usize,
    pub normalization: SpeedNormalization,
    /// RMS of `Re u` over the training split; network targets are `Re u / scale`.
    /// Normalization of the network targets `Re u`, fitted on the training split.
    pub target: TargetNormalization,
    pub splits: Splits,
    pub root_seed: u64,
    pub records: usize,
    #[serde(default)]
    pub sha256: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn put_f64s(buf: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

pub fn encode_dataset(records: &[DatasetRecord], points: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(8 + records.len() * (8 + 4 * points * 8));
    buf.extend_from_slice(DATASET_MAGIC);
    for r in records {
        if r.c.len() != points || r.mask.len() != points || r.u.len() != points {
            return Err(Error::invalid(format!("record {} does not match the grid", r.index)));
        }
        buf.extend_from_slice(&r.index.to_le_bytes());
        put_f64s(&mut buf, r.c.iter().copied());
        put_f64s(&mut buf, r.mask.iter().copied());
        put_f64s(&mut buf, r.u.iter().map(|v| v.re));
        put_f64s(&mut buf, r.u.iter().map(|v| v.im));
    }
    Ok(buf)
}

/// Writes the record file and its manifest (whose checksum field is filled in).
pub fn write_dataset(records: &[DatasetRecord], manifest: &DatasetManifest, path: &Path) -> Result<DatasetManifest> {
    if manifest.records != records.len() || manifest.splits.total() != records.len() {
        return Err(Error::invalid("manifest record count disagrees with records or splits"));
    }
    let bytes = encode_dataset(records, manifest.shape.len())?;
    let mut m = manifest.clone();
    m.format_version = FORMAT_VERSION;
    m.sha256 = hex(&Sha256::digest(&bytes));
    write_atomic(path, &bytes)?;
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&manifest_path(path), text.as_bytes())?;
    Ok(m)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mp = manifest_path(path);
    let text = fs::read_to_string(&mp)?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::CorruptDataset { path: mp.clone(), detail: e.to_string() })?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat { path: mp, detail: format!("manifest version {}", m.format_version) });
    }
    Ok(m)
}

pub fn read_dataset(path: &Path) -> Result<(Vec<DatasetRecord>, DatasetManifest)> {
    let manifest = read_manifest(path)?;
    let bytes = fs::read(path)?;
    let corrupt = |detail: String| Error::CorruptDataset { path: path.to_path_buf(), detail };
    if bytes.len() < 8 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::UnsupportedFormat { path: path.to_path_buf(), detail: "bad magic".into() });
    }
    let points = manifest.shape.len();
    let rec = 8 + 4 * points * 8;
    let body = &bytes[8..];
    if body.len() % rec != 0 || body.len() / rec != manifest.records {
        return Err(corrupt(format!(
            "{} payload bytes, expected {} records of {rec} bytes",
            body.len(),
            manifest.records
        )));
    }
    if hex(&Sha256::digest(&bytes)) != manifest.sha256 {
        return Err(corrupt("checksum mismatch".into()));
    }
    let records = body
        .chunks_exact(rec)
        .map(|r| {
            let index = u64::from_le_bytes(r[..8].try_into().expect("8 bytes"));
            let v = read_f64s(&r[8..]);
            let (c, rest) = v.split_at(points);
            let (mask, rest) = rest.split_at(points);
            let (re, im) = rest.split_at(points);
            DatasetRecord {
                index,
                c: c.to_vec(),
                mask: mask.to_vec(),
                u: re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
            }
        })
        .collect();
    Ok((records, manifest))
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if ckpt.params.len() != ckpt.ema.len() || ckpt.params.len() != ckpt.network.param_count() {
        return Err(Error::invalid("checkpoint payload does not match its architecture"));
    }
    let header = serde_json::to_vec(ckpt).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + header.len() + 16 * ckpt.params.len() + 32);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    put_f64s(&mut buf, ckpt.params.iter().copied());
    put_f64s(&mut buf, ckpt.ema.iter().copied());
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |detail: &str| Error::CorruptCheckpoint { path: path.to_path_buf(), detail: detail.into() };
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::UnsupportedFormat { path: path.to_path_buf(), detail: "bad magic or version".into() });
    }
    if bytes.len() < 16 + 32 {
        return Err(corrupt("truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let header = body.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let mut ckpt: Checkpoint = serde_json::from_slice(header).map_err(|e| corrupt(&e.to_string()))?;
    let count = ckpt.network.param_count();
    let payload = &body[16 + hlen..];
    if payload.len() != 2 * count * 8 {
        return Err(corrupt("parameter payload length does not match the architecture"));
    }
    let v = read_f64s(payload);
    ckpt.params = v[..count].to_vec();
    ckpt.ema = v[count..].to_vec();
    Ok(ckpt)
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, path)
}

/// Writes through a temporary sibling and renames, so readers never observe
/// a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
