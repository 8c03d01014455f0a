//! On-disk formats for raw inputs: the `LRV1` grayscale frame container and landmark CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{LandmarkFrame, NUM_LANDMARKS};

pub const LRV_MAGIC: &[u8; 4] = b"LRV1";

/// 8-bit grayscale video, frame-major then row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoU8 {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl VideoU8 {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::invalid(format!(
                "video buffer has {} bytes, expected {frames}×{height}×{width}",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len());
        out.extend_from_slice(LRV_MAGIC);
        for v in [self.frames, self.height, self.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 {
            return Err("file is shorter than the LRV1 header".into());
        }
        if &bytes[..4] != LRV_MAGIC {
            return Err(format!("bad magic {:?}, expected \"LRV1\"", &bytes[..4]));
        }
        let read = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (frames, height, width) = (read(0), read(1), read(2));
        let expected = frames
            .checked_mul(height)
            .and_then(|x| x.checked_mul(width))
            .ok_or("frame dimensions overflow")?;
        if bytes.len() - 16 != expected {
            return Err(format!(
                "payload has {} bytes, header promises {frames}×{height}×{width}",
                bytes.len() - 16
            ));
        }
        Ok(Self {
            frames,
            height,
            width,
            data: bytes[16..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}

pub fn landmarks_to_csv(frames: &[LandmarkFrame]) -> String {
    let mut out = String::from("frame_index");
    for i in 0..NUM_LANDMARKS {
        write!(out, ",x{i},y{i}").unwrap();
    }
    out.push('\n');
    for (t, f) in frames.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for p in f.points() {
            write!(out, ",{},{}", p[0], p[1]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn landmarks_from_csv(text: &str) -> std::result::Result<Vec<LandmarkFrame>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty landmark file")?;
    if !header.starts_with("frame_index") {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut frames = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 1 + 2 * NUM_LANDMARKS {
            return Err(format!("row {}: {} fields, expected {}", n + 1, fields.len(), 1 + 2 * NUM_LANDMARKS));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| format!("row {}: bad frame index {:?}", n + 1, fields[0]))?;
        if index != n {
            return Err(format!("row {}: frame index {index} out of order", n + 1));
        }
        let coords: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("row {}: {e}", n + 1))?;
        let points = coords.chunks(2).map(|c| [c[0], c[1]]).collect();
        frames.push(LandmarkFrame::new(points).map_err(|e| format!("row {}: {e}", n + 1))?);
    }
    Ok(frames)
}

pub fn load_landmarks(path: &Path) -> Result<Vec<LandmarkFrame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    landmarks_from_csv(&text).map_err(|m| Error::format(path, m))
}

pub fn save_landmarks(path: &Path, frames: &[LandmarkFrame]) -> Result<()> {
    std::fs::write(path, landmarks_to_csv(frames)).map_err(|e| Error::io(path, e))
}
