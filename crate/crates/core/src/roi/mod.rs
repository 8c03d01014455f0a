//! Mouth region-of-interest extraction: landmark alignment to a neutral reference, warped
//! crops, dataset normalization statistics and training-time augmentation.

mod formats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use formats::{
    landmarks_from_csv, landmarks_to_csv, load_landmarks, save_landmarks, VideoU8, LRV_MAGIC,
};

pub const NUM_LANDMARKS: usize = 68;
pub const MOUTH_LANDMARKS: std::ops::Range<usize> = 48..68;
pub const ROI_SIZE: usize = 96;
pub const TRAIN_CROP: usize = 88;
pub const DEFAULT_FPS: f64 = 25.0;

pub type Point = [f64; 2];

/// The 68 facial landmarks of one video frame, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    points: Vec<Point>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::invalid(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("landmark coordinates must be finite"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        Self {
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
        }
    }

    /// Mean of the 20 mouth landmarks (48–67).
    pub fn mouth_center(&self) -> Point {
        let n = MOUTH_LANDMARKS.len() as f64;
        let (sx, sy) = self.points[MOUTH_LANDMARKS]
            .iter()
            .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    }
}

#[rustfmt::skip]
const REFERENCE: [(i32, i32); NUM_LANDMARKS] = [
    // jaw
    (10, 14), (11, 25), (13, 36), (16, 47), (21, 57), (27, 66), (34, 73), (41, 78), (48, 80),
    (55, 78), (62, 73), (69, 66), (75, 57), (80, 47), (83, 36), (85, 25), (86, 14),
    // brows
    (18, 4), (24, 1), (31, 0), (38, 1), (44, 3), (52, 3), (58, 1), (65, 0), (72, 1), (78, 4),
    // nose
    (48, 8), (48, 14), (48, 20), (48, 26), (41, 31), (44, 32), (48, 33), (52, 32), (55, 31),
    // eyes
    (24, 10), (28, 7), (33, 7), (37, 10), (33, 12), (28, 12),
    (59, 10), (63, 7), (68, 7), (72, 10), (68, 12), (63, 12),
    // outer lip
    (34, 48), (38, 44), (43, 42), (48, 43), (53, 42), (58, 44), (62, 48), (58, 52), (53, 54),
    (48, 53), (43, 54), (38, 52),
    // inner lip
    (39, 48), (43, 46), (48, 46), (53, 46), (57, 48), (53, 50), (48, 50), (43, 50),
];

/// Neutral frontal face in the 96×96 ROI coordinate system; its mouth center is exactly
/// (48, 48).
pub fn neutral_reference() -> LandmarkFrame {
    LandmarkFrame {
        points: REFERENCE.iter().map(|&(x, y)| [x as f64, y as f64]).collect(),
    }
}

/// p ↦ s·R(θ)·p + t
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Point,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        [
            self.scale * (c * p[0] - s * p[1]) + self.translation[0],
            self.scale * (s * p[0] + c * p[1]) + self.translation[1],
        ]
    }

    pub fn apply_inverse(&self, q: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        let x = q[0] - self.translation[0];
        let y = q[1] - self.translation[1];
        [(c * x + s * y) / self.scale, (-s * x + c * y) / self.scale]
    }

    pub fn inverse(&self) -> Self {
        let inv = Self {
            scale: 1.0 / self.scale,
            rotation: -self.rotation,
            translation: [0.0, 0.0],
        };
        let t = inv.apply(self.translation);
        Self {
            translation: [-t[0], -t[1]],
            ..inv
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let t = self.apply(other.translation);
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            translation: t,
        }
    }
}

/// Closed-form least-squares similarity (orthogonal Procrustes with scale) taking `src`
/// onto `reference`.
pub fn estimate_similarity(
    src: &LandmarkFrame,
    reference: &LandmarkFrame,
) -> Result<SimilarityTransform> {
    let n = src.points.len() as f64;
    let mean = |pts: &[Point]| {
        let (x, y) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [x / n, y / n]
    };
    let ms = mean(&src.points);
    let mr = mean(&reference.points);
    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for (p, q) in src.points.iter().zip(&reference.points) {
        let (sx, sy) = (p[0] - ms[0], p[1] - ms[1]);
        let (rx, ry) = (q[0] - mr[0], q[1] - mr[1]);
        dot += sx * rx + sy * ry;
        cross += sx * ry - sy * rx;
        spread += sx * sx + sy * sy;
    }
    if spread <= f64::EPSILON * n {
        return Err(Error::Degenerate("source landmarks have no spatial spread".into()));
    }
    let scale = dot.hypot(cross) / spread;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("reference landmarks have no spatial spread".into()));
    }
    let rotation = cross.atan2(dot);
    let partial = SimilarityTransform {
        scale,
        rotation,
        translation: [0.0, 0.0],
    };
    let m = partial.apply(ms);
    Ok(SimilarityTransform {
        translation: [mr[0] - m[0], mr[1] - m[1]],
        ..partial
    })
}

/// Single-channel image with real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid("image buffer does not match its shape"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_u8(height: usize, width: usize, data: &[u8]) -> Self {
        Self {
            height,
            width,
            data: data.iter().map(|&v| v as f64).collect(),
        }
    }

    #[inline]
    fn pixel_or_zero(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear sample at (x, y); taps outside the image read 0.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as i64, y0 as i64);
        let mut v = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                if w != 0.0 {
                    v += w * self.pixel_or_zero(xi + dx, yi + dy);
                }
            }
        }
        v
    }
}

/// Samples the `size × size` patch of the warped frame centered at `center` (warped
/// coordinates). Pixel (row i, column j) of the patch sits at
/// `center - size/2 + (j, i)` in the warped frame.
pub fn warp_crop(
    frame: &GrayImage,
    transform: &SimilarityTransform,
    center: Point,
    size: usize,
) -> GrayImage {
    let half = size as f64 / 2.0;
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let q = [center[0] - half + j as f64, center[1] - half + i as f64];
            let p = transform.apply_inverse(q);
            data.push(frame.sample(p[0], p[1]));
        }
    }
    GrayImage {
        height: size,
        width: size,
        data,
    }
}

/// A `frames × height × width` real-valued clip.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub fps: f64,
}

impl RoiClip {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::invalid("clip buffer does not match its shape"));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
            fps: DEFAULT_FPS,
        })
    }

    pub fn from_video(video: &VideoU8) -> Self {
        Self {
            frames: video.frames,
            height: video.height,
            width: video.width,
            data: video.data.iter().map(|&v| v as f64).collect(),
            fps: DEFAULT_FPS,
        }
    }

    /// Rounds and clamps intensities to 8 bits.
    pub fn to_video(&self) -> VideoU8 {
        VideoU8 {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| v.round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Spatial sub-window starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        if top + size > self.height || left + size > self.width {
            return Err(Error::invalid(format!(
                "crop {size}×{size} at ({top}, {left}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.frames * size * size);
        for t in 0..self.frames {
            let f = self.frame(t);
            for y in top..top + size {
                data.extend_from_slice(&f[y * self.width + left..y * self.width + left + size]);
            }
        }
        Ok(Self {
            frames: self.frames,
            height: size,
            width: size,
            data,
            fps: self.fps,
        })
    }

    /// Deterministic central crop used at evaluation time.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        if size > self.height || size > self.width {
            return Err(Error::invalid("center crop larger than the clip"));
        }
        self.crop((self.height - size) / 2, (self.width - size) / 2, size)
    }

    pub fn hflip(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Self { data, ..self.clone() }
    }

    /// Per-pixel mean over time.
    pub fn mean_frame(&self) -> Vec<f64> {
        let n = self.frame_len();
        let mut acc = vec![0.0; n];
        for t in 0..self.frames {
            for (a, v) in acc.iter_mut().zip(self.frame(t)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.frames as f64);
        acc
    }
}

/// Aligns every frame to `reference` and crops a `size × size` patch around the warped
/// mouth center.
pub fn extract_roi(
    video: &VideoU8,
    landmarks: &[LandmarkFrame],
    reference: &LandmarkFrame,
    size: usize,
) -> Result<RoiClip> {
    if landmarks.len() != video.frames {
        return Err(Error::invalid(format!(
            "{} landmark frames for {} video frames",
            landmarks.len(),
            video.frames
        )));
    }
    let mut data = Vec::with_capacity(video.frames * size * size);
    for (t, lm) in landmarks.iter().enumerate() {
        let transform = estimate_similarity(lm, reference)?;
        let center = lm.transformed(&transform).mouth_center();
        let frame = GrayImage::from_u8(video.height, video.width, video.frame(t));
        data.extend(warp_crop(&frame, &transform, center, size).data);
    }
    RoiClip::new(video.frames, size, size, data)
}

/// Dataset-level intensity statistics (population variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub variance: f64,
}

impl NormStats {
    pub fn normalize(&self, clip: &RoiClip) -> RoiClip {
        let inv_std = 1.0 / self.variance.sqrt();
        RoiClip {
            data: clip.data.iter().map(|v| (v - self.mean) * inv_std).collect(),
            ..clip.clone()
        }
    }

    pub fn to_text(&self) -> String {
        format!("mean = {}\nvariance = {}\n", self.mean, self.variance)
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut mean = None;
        let mut variance = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(format!("bad line {line:?}"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("bad value in {line:?}"))?;
            match k.trim() {
                "mean" => mean = Some(v),
                "variance" => variance = Some(v),
                _ => {}
            }
        }
        match (mean, variance) {
            (Some(mean), Some(variance)) if variance > 0.0 => Ok(Self { mean, variance }),
            _ => Err("stats need a mean and a positive variance".into()),
        }
    }
}

/// Mean and variance over every pixel of every frame, accumulated with Welford's update.
pub fn fit_norm_stats<'a>(clips: impl IntoIterator<Item = &'a RoiClip>) -> Result<NormStats> {
    let mut n = 0u64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for clip in clips {
        for &x in &clip.data {
            n += 1;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
        }
    }
    if n == 0 {
        return Err(Error::invalid("normalization needs at least one frame"));
    }
    let variance = m2 / n as f64;
    if !(variance > 0.0) {
        return Err(Error::Degenerate("training pixels have zero variance".into()));
    }
    Ok(NormStats { mean, variance })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub hflip_prob: f64,
    pub time_mask: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: TRAIN_CROP,
            hflip_prob: 0.5,
            time_mask: true,
        }
    }
}

/// What [`augment`] did, for inspection in tests and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentTrace {
    pub top: usize,
    pub left: usize,
    pub flipped: bool,
    /// Masked frame span `[start, end)`.
    pub mask: (usize, usize),
}

/// Random spatial crop, horizontal flip and one mean-filled temporal mask of length
/// uniform in `[0, ⌈T/5⌉]`, all drawn from `seed`.
pub fn augment(clip: &RoiClip, seed: u64, cfg: &AugmentConfig) -> Result<(RoiClip, AugmentTrace)> {
    if clip.frames == 0 {
        return Err(Error::invalid("cannot augment an empty clip"));
    }
    if cfg.crop > clip.height || cfg.crop > clip.width {
        return Err(Error::invalid(format!(
            "crop {} larger than the {}×{} input",
            cfg.crop, clip.height, clip.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.random_range(0..=clip.height - cfg.crop);
    let left = rng.random_range(0..=clip.width - cfg.crop);
    let mut out = clip.crop(top, left, cfg.crop)?;
    let flipped = rng.random::<f64>() < cfg.hflip_prob;
    if flipped {
        out = out.hflip();
    }
    let mut mask = (0, 0);
    if cfg.time_mask {
        let max_len = out.frames.div_ceil(5);
        let len = rng.random_range(0..=max_len);
        let start = rng.random_range(0..=out.frames - len);
        if len > 0 {
            let mean = out.mean_frame();
            let n = out.frame_len();
            for t in start..start + len {
                out.data[t * n..(t + 1) * n].copy_from_slice(&mean);
            }
        }
        mask = (start, start + len);
    }
    Ok((
        out,
        AugmentTrace {
            top,
            left,
            flipped,
            mask,
        },
    ))
}
