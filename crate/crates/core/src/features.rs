//! Frame-feature files, semantic-bank files, and temporal pooling.
//!
//! Both formats are little-endian.
//!
//! Feature file (`VSF1`): magic, `u32` version (1), `u32` D, `u32` T, `f32` fps,
//! `f32` t0, then `T·D` `f32` values row-major.
//!
//! Semantic-bank file (`VSB1`): magic, `u32` version (1), `u32` K, `u32` W, then K
//! class names each as a `u32` byte length followed by UTF-8, then `K·W` `f32`.

use std::collections::HashMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"VSF1";
pub const SEMANTIC_MAGIC: &[u8; 4] = b"VSB1";
pub const FORMAT_VERSION: u32 = 1;

/// Per-video frame features sampled at a fixed rate.
///
/// Frame `i` sits at time `t0 + i / fps`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// `T × D`.
    pub frames: Tensor<f32>,
    pub fps: f32,
    pub t0: f32,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, frames: Tensor<f32>, fps: f32, t0: f32) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::dim(format!(
                "frames must be T×D, got shape {:?}",
                frames.shape()
            )));
        }
        if !(fps > 0.0) || !fps.is_finite() || !t0.is_finite() {
            return Err(Error::Parameter(format!("bad frame timing fps={fps} t0={t0}")));
        }
        if !frames.is_finite() {
            return Err(Error::Degenerate("non-finite frame feature".into()));
        }
        Ok(Self {
            video_id: video_id.into(),
            frames,
            fps,
            t0,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.t0 as f64 + i as f64 / self.fps as f64
    }

    /// Indices of frames whose timestamps lie in `[start_s, end_s)`.
    pub fn interval_range(&self, start_s: f64, end_s: f64) -> Result<Range<usize>> {
        if !(start_s >= 0.0) || !(end_s > start_s) {
            return Err(Error::Degenerate(format!(
                "interval [{start_s}, {end_s}) is not well formed"
            )));
        }
        let mut first = None;
        let mut last = 0;
        for i in 0..self.num_frames() {
            let t = self.timestamp(i);
            if t >= end_s {
                break;
            }
            if t >= start_s {
                first.get_or_insert(i);
                last = i + 1;
            }
        }
        match first {
            Some(f) => Ok(f..last),
            None => Err(Error::Degenerate(format!(
                "no frame of {} falls in [{start_s}, {end_s})",
                self.video_id
            ))),
        }
    }

    /// Row-major view of the frames in `range`.
    pub fn rows(&self, range: Range<usize>) -> &[f32] {
        let d = self.dim();
        &self.frames.data()[range.start * d..range.end * d]
    }
}

/// Frames whose timestamp `t0 + i/fps` lies in `[start_s, end_s)`.
pub fn slice_interval(seq: &FeatureSequence, start_s: f64, end_s: f64) -> Result<FeatureSequence> {
    let r = seq.interval_range(start_s, end_s)?;
    let t0 = seq.timestamp(r.start) as f32;
    let n = r.len();
    let frames = Tensor::from_parts(vec![n, seq.dim()], seq.rows(r).to_vec());
    Ok(FeatureSequence {
        video_id: seq.video_id.clone(),
        frames,
        fps: seq.fps,
        t0,
    })
}

/// Mean over the time axis of a `T × D` row-major block.
pub fn average_pool<T: Real>(frames: &[T], dim: usize) -> Result<Vec<T>> {
    if dim == 0 || frames.is_empty() || !frames.len().is_multiple_of(dim) {
        return Err(Error::Degenerate(format!(
            "cannot pool {} values into rows of {dim}",
            frames.len()
        )));
    }
    let t = frames.len() / dim;
    let mut out = vec![T::zero(); dim];
    for row in frames.chunks_exact(dim) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    let inv = T::one() / T::lit(t as f64);
    out.iter_mut().for_each(|v| *v = *v * inv);
    Ok(out)
}

/// Gradient of [`average_pool`]: `grad / T` broadcast to every frame.
pub fn average_pool_backward<T: Real>(grad: &[T], frames: usize) -> Vec<T> {
    let inv = T::one() / T::lit(frames as f64);
    let row: Vec<T> = grad.iter().map(|&g| g * inv).collect();
    let mut out = Vec::with_capacity(grad.len() * frames);
    for _ in 0..frames {
        out.extend_from_slice(&row);
    }
    out
}

/// Little-endian cursor whose errors carry the byte offset.
pub(crate) struct Reader<'a> {
    pub(crate) path: &'a Path,
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            self.pos -= 4;
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            self.pos -= 4;
            return Err(self.err(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn f32_block(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?, what)?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            self.pos = start + 4 * i;
            return Err(self.err(format!("non-finite value in {what}")));
        }
        Ok(vals)
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err(format!("{what} is not UTF-8")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + seq.frames.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.num_frames() as u32).to_le_bytes());
    out.extend_from_slice(&seq.fps.to_le_bytes());
    out.extend_from_slice(&seq.t0.to_le_bytes());
    for v in seq.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path, video_id: &str) -> Result<FeatureSequence> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(FEATURE_MAGIC)?;
    r.version()?;
    let d = r.u32("D")? as usize;
    let t = r.u32("T")? as usize;
    if d == 0 || t == 0 {
        r.pos -= 8;
        return Err(r.err(format!("empty feature matrix T={t} D={d}")));
    }
    let fps = r.f32("fps")?;
    let t0 = r.f32("t0")?;
    if !(fps > 0.0) || !fps.is_finite() || !t0.is_finite() {
        r.pos -= 8;
        return Err(r.err(format!("bad timing fps={fps} t0={t0}")));
    }
    let data = r.f32_block(t * d, "frame payload")?;
    r.finish()?;
    Ok(FeatureSequence {
        video_id: video_id.to_string(),
        frames: Tensor::from_parts(vec![t, d], data),
        fps,
        t0,
    })
}

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_features(seq))
}

/// Reads a feature file; the video id is taken from the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&read_file(path)?, path, &id)
}

/// Reads a feature file and checks its width against the dataset's.
pub fn read_features_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<FeatureSequence> {
    let seq = read_features(path.as_ref())?;
    if seq.dim() != dim {
        return Err(Error::dim(format!(
            "{} has D={}, dataset expects {dim}",
            path.as_ref().display(),
            seq.dim()
        )));
    }
    Ok(seq)
}

/// Raw contents of a semantic-bank file, rows in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticFile {
    pub names: Vec<String>,
    /// `K × W`.
    pub vectors: Tensor<f32>,
}

pub fn encode_semantic(file: &SemanticFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SEMANTIC_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(file.vectors.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(file.vectors.cols() as u32).to_le_bytes());
    for name in &file.names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for v in file.vectors.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_semantic(bytes: &[u8], path: &Path) -> Result<SemanticFile> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(SEMANTIC_MAGIC)?;
    r.version()?;
    let k = r.u32("K")? as usize;
    let w = r.u32("W")? as usize;
    if k == 0 || w == 0 {
        r.pos -= 8;
        return Err(r.err(format!("empty semantic bank K={k} W={w}")));
    }
    let names = (0..k)
        .map(|i| r.string(&format!("class name {i}")))
        .collect::<Result<Vec<_>>>()?;
    let data = r.f32_block(k * w, "embedding payload")?;
    r.finish()?;
    Ok(SemanticFile {
        names,
        vectors: Tensor::from_parts(vec![k, w], data),
    })
}

pub fn write_semantic_file(file: &SemanticFile, path: impl AsRef<Path>) -> Result<()> {
    if file.names.len() != file.vectors.rows() {
        return Err(Error::dim(format!(
            "{} names for {} rows",
            file.names.len(),
            file.vectors.rows()
        )));
    }
    write_file(path.as_ref(), &encode_semantic(file))
}

pub fn read_semantic_file(path: impl AsRef<Path>) -> Result<SemanticFile> {
    let path = path.as_ref();
    decode_semantic(&read_file(path)?, path)
}

/// Feature sequences for every video of a manifest, keyed by video id.
#[derive(Clone, Debug, Default)]
pub struct FeatureStore {
    dim: usize,
    seqs: HashMap<String, FeatureSequence>,
}

impl FeatureStore {
    /// Loads every feature file referenced by `manifest`, relative to `root`.
    pub fn load(manifest: &Manifest, root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let loaded: Vec<(String, FeatureSequence)> = manifest
            .videos
            .par_iter()
            .map(|v| {
                let path: PathBuf = root.join(&v.feature_file);
                let mut seq = read_features(&path)?;
                seq.video_id = v.id.clone();
                Ok((v.id.clone(), seq))
            })
            .collect::<Result<_>>()?;
        Self::from_sequences(loaded.into_iter().map(|(_, s)| s))
    }

    pub fn from_sequences(seqs: impl IntoIterator<Item = FeatureSequence>) -> Result<Self> {
        let mut store = Self::default();
        for s in seqs {
            if store.seqs.is_empty() {
                store.dim = s.dim();
            } else if s.dim() != store.dim {
                return Err(Error::dim(format!(
                    "{} has D={}, other videos have D={}",
                    s.video_id,
                    s.dim(),
                    store.dim
                )));
            }
            store.seqs.insert(s.video_id.clone(), s);
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, video_id: &str) -> Result<&FeatureSequence> {
        self.seqs
            .get(video_id)
            .ok_or_else(|| Error::Config(format!("no features loaded for video {video_id}")))
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }
}
